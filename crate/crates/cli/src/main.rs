//! `gfm`: command-line front end for the grid-forming converter analyses.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when an
//! analysis fails. Nothing is written unless the analysis succeeds.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Config, SCHEMA_HELP};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Analysis(#[from] gfm_core::Error),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Analysis(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gfm", version, about = "Small-signal and time-domain analysis of a grid-forming wind-turbine converter")]
#[command(after_long_help = SCHEMA_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; defaults to the reference case when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Grid size for locus, sweep, bode and kqp.
    #[arg(long, global = true)]
    points: Option<usize>,
    /// Swept parameter for locus and sweep.
    #[arg(long, global = true)]
    param: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    from: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    to: Option<f64>,
    /// Evaluate the pass/fail checks and record them in the report.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Equilibrium, linear model and classified spectrum.
    Eig,
    /// Root locus over one parameter with mode tracking.
    Locus,
    /// Stability margin over one parameter.
    Sweep,
    /// Frequency response of a loop transfer function.
    Bode,
    /// Nonlinear time-domain simulation.
    Sim,
    /// Worst-case capacitor-voltage damper design.
    DesignAd,
    /// Ranking of the reactive-power control structures.
    RankRap,
    /// Critical LCL real-part sensitivity to parameters.
    Sensitivity,
    /// Coupling gain from active-power set-point to reactive power.
    Kqp,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Eig => "eig",
            Command::Locus => "locus",
            Command::Sweep => "sweep",
            Command::Bode => "bode",
            Command::Sim => "sim",
            Command::DesignAd => "design-ad",
            Command::RankRap => "rank-rap",
            Command::Sensitivity => "sensitivity",
            Command::Kqp => "kqp",
        }
    }
}

/// Folds the command-line overrides into the configuration.
fn apply_overrides(cli: &Cli, cfg: &mut Config) {
    let range = match cli.command {
        Command::Locus => Some(&mut cfg.locus),
        Command::Sweep => Some(&mut cfg.sweep),
        _ => None,
    };
    if let Some(r) = range {
        if let Some(p) = &cli.param {
            r.param = p.clone();
        }
        if let Some(f) = cli.from {
            r.from = f;
        }
        if let Some(t) = cli.to {
            r.to = t;
        }
        if let Some(n) = cli.points {
            r.points = n;
        }
    }
    if let Some(n) = cli.points {
        match cli.command {
            Command::Bode => cfg.bode.points = n,
            Command::Kqp => cfg.kqp.points = n,
            _ => {}
        }
    }
}

fn run(cli: &Cli) -> Result<report::RunReport, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    apply_overrides(cli, &mut cfg);
    let case = cfg.case()?;
    let canonical = serde_json::to_string(&cfg).expect("config serializes");
    let config_hash = report::sha256_hex(canonical.as_bytes());
    let outcome = match cli.command {
        Command::Eig => commands::eig(&cfg, &case),
        Command::Locus => commands::locus(&cfg, &case),
        Command::Sweep => commands::sweep(&cfg, &case),
        Command::Bode => commands::bode_cmd(&cfg, &case),
        Command::Sim => commands::sim(&cfg, &case),
        Command::DesignAd => commands::design_ad_cmd(&cfg, &case),
        Command::RankRap => commands::rank_rap(&cfg, &case),
        Command::Sensitivity => commands::sensitivity_cmd(&cfg, &case),
        Command::Kqp => commands::kqp(&cfg, &case),
    }?;
    let args = std::env::args().collect();
    Ok(report::write_run(&cli.out, cli.command.name(), args, config_hash, outcome, cli.check)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version requests
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{SCHEMA_HELP}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(report) => {
            for o in &report.outputs {
                println!("wrote {}", o.path);
            }
            println!("wrote {}", cli.out.join(report::REPORT_FILE).display());
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("\nrun `gfm --help` for the configuration schema");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
