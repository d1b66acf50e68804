//! Output assembly: CSV formatting, pass/fail checks and the run report.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Fixed scientific formatting with 12 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV text built row by row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

/// Everything a subcommand produced, held in memory until the run succeeds.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub outputs: Vec<ManifestEntry>,
    pub checks: Vec<Check>,
    /// Present only when checks were requested.
    pub all_checks_passed: Option<bool>,
    pub summary: serde_json::Value,
}

pub const REPORT_FILE: &str = "report.json";

/// Writes the output files and `report.json` into `out`.
pub fn write_run(
    out: &Path,
    command: &str,
    args: Vec<String>,
    config_hash: String,
    outcome: Outcome,
    with_checks: bool,
) -> std::io::Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::with_capacity(outcome.files.len());
    for (name, contents) in &outcome.files {
        std::fs::write(out.join(name), contents)?;
        outputs.push(ManifestEntry {
            path: out.join(name).display().to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents.as_bytes()),
        });
    }
    let checks = if with_checks { outcome.checks } else { Vec::new() };
    let report = RunReport {
        command: command.into(),
        args,
        config_hash,
        all_checks_passed: with_checks.then(|| checks.iter().all(|c| c.pass)),
        outputs,
        checks,
        summary: outcome.summary,
    };
    let json = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
    std::fs::write(out.join(REPORT_FILE), json + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_is_fixed() {
        assert_eq!(num(-39.86371540118554), "-3.98637154012e1");
        assert_eq!(num(0.0), "0.00000000000e0");
        assert_eq!(opt_num(None), "");
    }

    #[test]
    fn csv_rows() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&["1".into(), "x".into()]);
        assert_eq!(c.into_string(), "a,b\n1,x\n");
    }

    #[test]
    fn hash_is_hex() {
        let h = sha256_hex(b"abc");
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
