//! Subcommand implementations. Each returns its files, checks and summary
//! without touching the filesystem.

use std::f64::consts::PI;

use gfm_core::freq::{bode, log_grid, rap_open_loop_poles_detailed};
use gfm_core::sim::{envelope_peak_after, zero_phase_lowpass, Action};
use gfm_core::smallsig::{ModeClass, ModeReport};
use gfm_core::sweeps::{kqp_damper_sweep, kqp_series_sweep, linear_grid, stability_sweep, KqpPoint};
use gfm_core::*;
use num_complex::Complex64;
use serde_json::json;

use crate::config::Config;
use crate::report::{num, opt_num, Check, Csv, Outcome};

type Res = gfm_core::Result<Outcome>;

fn modes_csv(modes: &[ModeReport]) -> String {
    let mut csv = Csv::new(&["re", "im", "freq_hz", "damping_ratio", "class"]);
    for m in modes {
        csv.row(&[num(m.lambda.re), num(m.lambda.im), num(m.freq_hz), num(m.damping_ratio), m.class.as_str().into()]);
    }
    csv.into_string()
}

fn poles_csv(poles: &[Complex64]) -> String {
    let mut csv = Csv::new(&["re", "im", "class"]);
    for p in poles {
        let class = if p.re > 1e-9 * p.norm().max(1.0) {
            "RHP"
        } else if p.re < -1e-9 * p.norm().max(1.0) {
            "LHP"
        } else {
            "imaginary_axis"
        };
        csv.row(&[num(p.re), num(p.im), class.into()]);
    }
    csv.into_string()
}

pub fn eig(_cfg: &Config, case: &Case) -> Res {
    let a = analyze(case)?;
    let p = &case.params;
    let targets = [p.omega_n * (p.omega_res() + p.omega_g), p.omega_n * (p.omega_res() - p.omega_g)];
    let lcl: Vec<Complex64> = a
        .modes
        .iter()
        .filter(|m| m.class == ModeClass::LclResonance && m.lambda.im > 0.0)
        .map(|m| m.lambda)
        .collect();
    let pairs_ok = lcl.len() == 2 && targets.iter().all(|w| lcl.iter().any(|l| (l.im - w).abs() <= 0.2 * w));
    let rap = a.rap_mode().map(|r| r.re);
    let checks = vec![
        Check::new("all_modes_stable", a.max_real() < 0.0, format!("max Re = {:.4}", a.max_real())),
        Check::new("two_lcl_pairs_near_resonance", pairs_ok, format!(
                "{} vs ±j{:.1}, ±j{:.1}",
                lcl.iter().map(|l| format!("{:.3}{:+.1}j", l.re, l.im)).collect::<Vec<_>>().join(", "),
                targets[0],
                targets[1]
            )),
        Check::new(
            "rap_mode_near_minus_39",
            rap.is_some_and(|r| (r + 39.0).abs() <= 0.15 * 39.0),
            format!("RAP mode {rap:?}"),
        ),
    ];
    Ok(Outcome {
        files: vec![("modes.csv".into(), modes_csv(&a.modes))],
        checks,
        summary: json!({
            "max_real": a.max_real(),
            "rap_mode": rap,
            "critical_lcl": a.critical_lcl().map(|l| [l.re, l.im]),
            "equilibrium": a.eq,
            "jacobian_discrepancy": a.ss.jacobian_discrepancy,
        }),
    })
}

pub fn locus(cfg: &Config, case: &Case) -> Res {
    let s = &cfg.locus;
    let l = root_locus(case, &s.param, s.from, s.to, s.points)?;
    let mut csv = Csv::new(&["param_value", "mode_id", "re", "im", "class"]);
    for (k, point) in l.points.iter().enumerate() {
        for (m, track) in l.tracks.iter().enumerate() {
            let z = track[k];
            let class = point.modes.iter().find(|r| r.lambda == z).map(|r| r.class).unwrap_or(ModeClass::Other);
            csv.row(&[num(point.value), m.to_string(), num(z.re), num(z.im), class.as_str().into()]);
        }
    }
    let continuity = l.lcl_tracks().iter().map(|&m| l.continuity_ratio(m)).fold(0.0, f64::max);
    let first = l.points.first().and_then(|p| p.max_lcl_re);
    let last = l.points.last().and_then(|p| p.max_lcl_re);
    let mut checks = vec![
        Check::new("grid_points", l.points.len() >= 40, format!("{} points", l.points.len())),
        Check::new("lcl_tracks_continuous", continuity < 10.0, format!("max step / median step = {continuity:.3}")),
    ];
    match s.param.as_str() {
        "k_q" | "l_g" => checks.push(Check::new(
            "rhp_crossing",
            l.crossing.is_some(),
            format!("crossing at {:?}", l.crossing),
        )),
        "l_f" => checks.push(Check::new(
            "max_lcl_re_decreases",
            matches!((first, last), (Some(a), Some(b)) if b < a),
            format!("{first:?} -> {last:?}"),
        )),
        _ => {}
    }
    Ok(Outcome {
        files: vec![("locus.csv".into(), csv.into_string())],
        checks,
        summary: json!({
            "param": l.param,
            "crossing": l.crossing,
            "max_lcl_re_first": first,
            "max_lcl_re_last": last,
            "truncated_by": l.lost.as_ref().map(|e| e.to_string()),
        }),
    })
}

pub fn sweep(cfg: &Config, case: &Case) -> Res {
    let s = &cfg.sweep;
    let rows = stability_sweep(case, &s.param, s.from, s.to, s.points)?;
    let mut csv = Csv::new(&["value", "max_lcl_re", "max_re", "rap_mode_re", "stable"]);
    for r in &rows {
        csv.row(&[num(r.value), opt_num(r.max_lcl_re), num(r.max_re), opt_num(r.rap_mode_re), r.stable.to_string()]);
    }
    let boundary = rows.windows(2).find(|w| w[0].stable != w[1].stable).map(|w| (w[0].value, w[1].value));
    Ok(Outcome {
        files: vec![("sweep.csv".into(), csv.into_string())],
        checks: vec![Check::new("grid_points", rows.len() >= 40, format!("{} points", rows.len()))],
        summary: json!({ "param": s.param, "stability_change_between": boundary }),
    })
}

/// Open-loop reactive-loop reference poles: (re, im, real tolerance).
const RAP_POLES: [(f64, f64, f64); 4] =
    [(7.8, 5785.2, 5.0), (9.9, 5159.9, 5.0), (-34.3, 316.2, 0.15 * 34.3), (-71.6, 0.0, 0.15 * 71.6)];

fn reference_pole_check(name: &str, poles: &[Complex64]) -> Check {
    let missing: Vec<String> = RAP_POLES
        .iter()
        .filter(|&&(re, im, tol)| {
            !poles.iter().any(|p| {
                (p.re - re).abs() <= tol && if im == 0.0 { p.im.abs() < 1e-6 } else { (p.im - im).abs() <= 0.05 * im }
            })
        })
        .map(|(re, im, _)| format!("{re}±j{im}"))
        .collect();
    Check::new(name, missing.is_empty(), format!("unmatched references: {missing:?}"))
}

pub fn bode_cmd(cfg: &Config, case: &Case) -> Res {
    let s = &cfg.bode;
    let freqs = log_grid(s.f_min, s.f_max, s.points);
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let tf = if s.loop_name == "g_q" {
        // the closed-form loop needs a lossless line
        let mut lossless = case.clone();
        lossless.params.r_g = 0.0;
        let eq = solve_equilibrium(&lossless)?;
        let g_q = rap_open_loop_tf(&lossless, &eq)?.g_q;
        let poles = g_q.poles()?;
        checks.push(reference_pole_check("open_loop_poles_lossless_line", &poles));
        files.push(("poles.csv".into(), poles_csv(&poles)));
        let eq = solve_equilibrium(case)?;
        let detailed = rap_open_loop_poles_detailed(case, &eq)?;
        checks.push(reference_pole_check("open_loop_poles_with_line_resistance", &detailed));
        files.push(("poles_detailed.csv".into(), poles_csv(&detailed)));
        g_q
    } else {
        let eq = solve_equilibrium(case)?;
        let tfs = simplified_tfs(case, &eq)?;
        let tf = match s.loop_name.as_str() {
            "g_dc_sim" => tfs.g_dc_sim,
            "g_p_sim" => tfs.g_p_sim,
            "g_q_sim" => tfs.g_q_sim.ok_or_else(|| {
                gfm_core::Error::InvalidParams("g_q_sim needs an integrating reactive control".into())
            })?,
            other => return Err(gfm_core::Error::InvalidParams(format!("unknown loop {other:?}"))),
        };
        files.push(("poles.csv".into(), poles_csv(&tf.poles()?)));
        tf
    };
    let b = bode(&tf, &freqs)?;
    let mut csv = Csv::new(&["freq_hz", "mag_db", "phase_deg"]);
    for p in &b.points {
        csv.row(&[num(p.freq_hz), num(p.mag_db), num(p.phase_deg)]);
    }
    files.insert(0, ("bode.csv".into(), csv.into_string()));
    Ok(Outcome {
        files,
        checks,
        summary: json!({ "loop": s.loop_name, "rhp_pole_count": b.rhp_pole_count }),
    })
}

/// Case as it stands just after (`inclusive`) or just before time `t`.
fn case_at(case: &Case, events: &[Event], t: f64, inclusive: bool) -> gfm_core::Result<Case> {
    let mut c = case.clone();
    for e in events.iter().filter(|e| e.time < t || (inclusive && e.time == t)) {
        match &e.action {
            Action::Set { target, value } => c.set(target, *value)?,
            Action::Damper { damper } => c.damper = *damper,
        }
    }
    Ok(c)
}

pub fn sim(cfg: &Config, case: &Case) -> Res {
    let s = &cfg.sim;
    let mut scenario = Scenario::new(case.clone(), s.duration, s.dt);
    scenario.events = s.events.clone();
    if let Some(r) = &s.record {
        scenario.record = r.clone();
    }
    scenario.record_stride = s.record_stride;
    let ts = simulate(&scenario)?;
    let mut header = vec!["t"];
    header.extend(ts.names.iter().map(|n| n.as_str()));
    let mut csv = Csv::new(&header);
    for (k, t) in ts.t.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(ts.columns.iter().map(|c| num(c[k])));
        csv.row(&row);
    }
    let mut checks = vec![Check::new("no_divergence", ts.diverged_at.is_none(), format!("{:?}", ts.diverged_at))];
    let mut summary = json!({ "samples": ts.t.len(), "final_state": ts.final_state });
    if let Some(env) = &s.envelope {
        let (tw, yw) = ts.window(&env.signal, env.from, env.to).ok_or_else(|| {
            gfm_core::Error::InvalidScenario(format!("signal {:?} not recorded", env.signal))
        })?;
        let m = envelope_metrics(&tw, &yw, env.band)?;
        let lin = analyze(&case_at(case, &s.events, env.from, true)?)?
            .critical_lcl()
            .ok_or_else(|| gfm_core::Error::DegenerateEquilibrium("no LCL mode found".into()))?;
        let f_lin = lin.im.abs() / (2.0 * PI);
        let f_sim = m.dominant_freq_hz.unwrap_or(f64::NAN);
        checks.push(Check::new(
            "growth_rate_matches_eigenvalue",
            (m.growth_rate - lin.re).abs() <= 0.2 * lin.re.abs(),
            format!("measured {:.4} /s, eigenvalue {:.4} /s", m.growth_rate, lin.re),
        ));
        checks.push(Check::new(
            "frequency_matches_eigenvalue",
            (f_sim - f_lin).abs() <= 0.2 * f_lin,
            format!("measured {f_sim:.2} Hz, eigenvalue {f_lin:.2} Hz"),
        ));
        let mut residual = None;
        if let Some(after) = env.decay_after {
            let col = ts.column(&env.signal).unwrap();
            let r = envelope_peak_after(&ts.t, col, f_lin, after);
            checks.push(Check::new(
                "envelope_decays",
                r < env.decay_limit,
                format!("envelope after t = {after}: {r:.3e} (limit {:.1e})", env.decay_limit),
            ));
            residual = Some(r);
        }
        summary["envelope"] = json!({
            "growth_rate": m.growth_rate,
            "dominant_freq_hz": m.dominant_freq_hz,
            "eigenvalue": [lin.re, lin.im],
            "residual_envelope": residual,
        });
    }
    if s.compare_simplified {
        let mut nrmse = serde_json::Map::new();
        for (e, window_end) in step_windows(&s.events, s.duration) {
            let (signal, value) = match &e.action {
                Action::Set { target, value } if target == "v_dcst" => ("v_dc", *value),
                Action::Set { target, value } if target == "p_st" => ("p", *value),
                Action::Set { target, value } if target == "q_st" => ("q", *value),
                _ => continue,
            };
            let pre = case_at(case, &s.events, e.time, false)?;
            let err = step_nrmse(&ts, &pre, signal, e.time, window_end, value - pre.get(set_name(signal))?)?;
            checks.push(Check::new(
                &format!("{signal}_step_matches_simplified_loop"),
                err < 0.10,
                format!("NRMSE {err:.4} at t = {}", e.time),
            ));
            nrmse.insert(signal.into(), json!(err));
        }
        summary["step_nrmse"] = serde_json::Value::Object(nrmse);
    }
    Ok(Outcome { files: vec![("timeseries.csv".into(), csv.into_string())], checks, summary })
}

fn set_name(signal: &str) -> &'static str {
    match signal {
        "v_dc" => "v_dcst",
        "p" => "p_st",
        _ => "q_st",
    }
}

/// Each event with the end of its response window: one second, cut at the
/// next event or the end of the run.
fn step_windows(events: &[Event], duration: f64) -> Vec<(&Event, f64)> {
    events
        .iter()
        .map(|e| {
            let next = events.iter().map(|o| o.time).filter(|t| *t > e.time).fold(duration, f64::min);
            (e, next.min(e.time + 1.0))
        })
        .collect()
}

/// Lead-in before each step so the filter sees the flat pre-step level.
const STEP_LEAD: f64 = 0.5;

/// Normalized RMS error between the 20 Hz zero-phase filtered simulated
/// step response and the closed simplified loop at the pre-step point.
fn step_nrmse(ts: &TimeSeries, pre: &Case, signal: &str, t0: f64, t1: f64, step: f64) -> gfm_core::Result<f64> {
    let eq = solve_equilibrium(pre)?;
    let tfs = simplified_tfs(pre, &eq)?;
    let open = match signal {
        "v_dc" => tfs.g_dc_sim,
        "p" => tfs.g_p_sim,
        _ => tfs
            .g_q_sim
            .ok_or_else(|| gfm_core::Error::InvalidParams("q comparison needs an integrating reactive control".into()))?,
    };
    let (_, y) = ts
        .window(signal, t0 - STEP_LEAD, t1)
        .ok_or_else(|| gfm_core::Error::InvalidScenario(format!("signal {signal:?} not recorded")))?;
    let dt = ts.dt();
    let k0 = (STEP_LEAD / dt).round() as usize;
    if k0 == 0 || y.len() <= k0 + 1 {
        return Err(gfm_core::Error::InsufficientData(format!("step window at t = {t0} is too short")));
    }
    let base = y[k0 - 1];
    let dev: Vec<f64> = y.iter().map(|v| v - base).collect();
    let filtered = zero_phase_lowpass(&dev, dt, 20.0);
    let reference = open.feedback()?.step_response(dt, y.len() - k0 - 1)?;
    let se: f64 = filtered[k0..].iter().zip(&reference).map(|(a, r)| (a - step * r).powi(2)).sum();
    Ok((se / reference.len() as f64).sqrt() / step.abs())
}

pub fn design_ad_cmd(cfg: &Config, case: &Case) -> Res {
    let spec = cfg.design_ad.spec();
    let d = design_ad(case, &spec)?;
    let mut worst = case.with("k_q", d.k_q_worst)?;
    worst.params.l_g = spec.l_g_max;
    let verify = analyze(&apply_ad(&worst, &d.config)?)?;
    let baseline = analyze(&apply_ad(case, &d.config)?)?.max_real();
    let k18 = analyze(&apply_ad(&case.with("k_q", 18.0)?, &d.config)?)?.max_real();
    let w_res = ((case.params.l_f + spec.l_g_max) / (case.params.l_f * spec.l_g_max * case.params.c_f)).sqrt();
    let t_corner = 1.0 / (4.0 * PI * case.params.omega_n * w_res / (2.0 * PI));
    let margin = verify.max_lcl_real().unwrap_or(f64::INFINITY);
    let checks = vec![
        Check::new(
            "k_d_within_factor_3_of_3.3e-6",
            d.config.k_d >= 1.1e-6 && d.config.k_d <= 9.9e-6,
            format!("k_d = {:.4e}", d.config.k_d),
        ),
        Check::new(
            "t_d_from_corner_rule",
            (d.config.t_d - t_corner).abs() <= 1e-12 * t_corner,
            format!("t_d = {:.6e}, corner rule {t_corner:.6e}", d.config.t_d),
        ),
        Check::new("verified_margin", margin <= spec.margin, format!("max Re(LCL) = {margin:.4}")),
        Check::new("baseline_stable", baseline < 0.0, format!("max Re = {baseline:.4}")),
        Check::new("k_q_18_stable", k18 < 0.0, format!("max Re = {k18:.4}")),
    ];
    let design = serde_json::to_string_pretty(&json!({
        "k_d": d.config.k_d,
        "t_d": d.config.t_d,
        "k_q_worst": d.k_q_worst,
        "k_d_ideal": d.k_d_ideal,
        "margin_ideal": d.margin_ideal,
        "f_res_worst_hz": d.f_res_worst_hz,
        "verified_margin": margin,
        "baseline_max_re": baseline,
        "k_q_18_max_re": k18,
    }))
    .expect("design serializes");
    Ok(Outcome {
        files: vec![("design.json".into(), design + "\n"), ("verification_modes.csv".into(), modes_csv(&verify.modes))],
        checks,
        summary: json!({ "k_d": d.config.k_d, "t_d": d.config.t_d, "verified_margin": margin }),
    })
}

pub fn rank_rap(cfg: &Config, case: &Case) -> Res {
    let opts = cfg.rank_rap.options();
    let r = rank_rap_strategies(case, &opts)?;
    let mut csv = Csv::new(&["rank", "label", "slow_mode", "max_lcl_re", "stable"]);
    for (i, e) in r.iter().enumerate() {
        csv.row(&[(i + 1).to_string(), e.label.clone(), opt_num(e.slow_mode), num(e.max_lcl_re), e.stable.to_string()]);
    }
    let order: Vec<&str> = r.iter().map(|e| &e.label[..3]).collect();
    let expected = ["(e)", "(c)", "(b)", "(a)", "(d)", "(f)"];
    let checks = vec![
        Check::new("ranking_order", order == expected, format!("{} (expected {})", order.join(">"), expected.join(">"))),
        Check::new(
            "pure_droop_unstable",
            r.iter().any(|e| e.label.starts_with("(f)") && !e.stable),
            String::new(),
        ),
        Check::new(
            "slow_modes_tuned",
            r.iter().all(|e| e.slow_mode.is_none_or(|s| (s - opts.target).abs() <= opts.tolerance)),
            format!("{:?}", r.iter().map(|e| e.slow_mode).collect::<Vec<_>>()),
        ),
    ];
    Ok(Outcome {
        files: vec![("ranking.csv".into(), csv.into_string())],
        checks,
        summary: json!({ "ranking": r }),
    })
}

pub fn sensitivity_cmd(cfg: &Config, case: &Case) -> Res {
    let eq = solve_equilibrium(case)?;
    let names: Vec<&str> = cfg.sensitivity.params.iter().map(|s| s.as_str()).collect();
    let s = sensitivity(case, &eq, &names, cfg.sensitivity.rel_step)?;
    let mut csv = Csv::new(&["param", "base_value", "step", "delta_re", "base_re", "base_im", "perturbed_re", "perturbed_im"]);
    for e in &s {
        csv.row(&[
            e.param.clone(),
            num(e.base_value),
            num(e.step),
            num(e.delta_re),
            num(e.lambda_base.re),
            num(e.lambda_base.im),
            num(e.lambda_perturbed.re),
            num(e.lambda_perturbed.im),
        ]);
    }
    let d = |n: &str| s.iter().find(|e| e.param == n).map(|e| e.delta_re);
    let mut checks = Vec::new();
    for (name, sign) in [("l_g", 1.0), ("l_f", -1.0), ("k_q", 1.0)] {
        if let Some(v) = d(name) {
            checks.push(Check::new(&format!("{name}_sign"), v * sign > 0.0, format!("{v:+.4e}")));
        }
    }
    if let Some(lg) = d("l_g") {
        for name in ["k_pdc", "k_idc", "h", "d_p"] {
            if let Some(v) = d(name) {
                checks.push(Check::new(
                    &format!("{name}_decoupled"),
                    v.abs() < 0.01 * lg.abs(),
                    format!("{v:+.4e} vs 1% of {lg:.4e}"),
                ));
            }
        }
    }
    Ok(Outcome {
        files: vec![("sensitivity.csv".into(), csv.into_string())],
        checks,
        summary: json!({ "entries": s }),
    })
}

fn kqp_csv(points: &[KqpPoint], label: &str) -> String {
    let mut csv = Csv::new(&[label, "k_qp", "critical_lcl_re"]);
    for p in points {
        csv.row(&[num(p.value), num(p.k_qp), num(p.critical_lcl_re)]);
    }
    csv.into_string()
}

pub fn kqp(cfg: &Config, case: &Case) -> Res {
    let s = &cfg.kqp;
    let t_d = s.t_d.unwrap_or(1.0 / (4.0 * PI * case.params.f_res_hz()));
    let damper = kqp_damper_sweep(case, &linear_grid(0.0, s.k_d_max, s.points), t_d)?;
    let series = kqp_series_sweep(case, &linear_grid(0.0, s.r_v_max, s.points))?;
    let (lo, hi) = damper.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.k_qp), hi.max(p.k_qp)));
    let mut by_damping = series.clone();
    by_damping.sort_by(|a, b| b.critical_lcl_re.total_cmp(&a.critical_lcl_re));
    let increasing = by_damping.windows(2).all(|w| w[1].k_qp.abs() > w[0].k_qp.abs());
    let checks = vec![
        Check::new("damper_k_qp_invariant", hi - lo < 1e-6, format!("spread {:.3e}", hi - lo)),
        Check::new("series_k_qp_grows_with_damping", increasing, String::new()),
    ];
    Ok(Outcome {
        files: vec![
            ("kqp_damper.csv".into(), kqp_csv(&damper, "k_d")),
            ("kqp_series.csv".into(), kqp_csv(&series, "r_v")),
        ],
        checks,
        summary: json!({ "t_d": t_d, "k_qp_damper_spread": hi - lo }),
    })
}
