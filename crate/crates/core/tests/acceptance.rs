//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p gfm-core --test acceptance -- --nocapture
//! --test-threads=1` to see the lines in order.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use gfm_core::freq::rap_open_loop_poles_detailed;
use gfm_core::sim::{envelope_peak_after, zero_phase_lowpass};
use gfm_core::smallsig::ModeClass;
use gfm_core::sweeps::{kqp_damper_sweep, kqp_series_sweep, linear_grid};
use gfm_core::*;
use num_complex::Complex64;

/// Writes straight to the process stderr so the line survives output capture.
fn report(id: &str, pass: bool, detail: String) {
    let line = format!("{} criterion {id}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn within_time(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Open-loop pole reference: (re, im, absolute real tolerance).
/// Imaginary parts within 5 %; resonant pairs within ±5 on the real part,
/// slow poles within 15 %.
const RAP_POLES: [(f64, f64, f64); 4] =
    [(7.8, 5785.2, 5.0), (9.9, 5159.9, 5.0), (-34.3, 316.2, 0.15 * 34.3), (-71.6, 0.0, 0.15 * 71.6)];

fn match_rap_poles(poles: &[Complex64]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(re, im, re_tol) in &RAP_POLES {
        let found = common::contains_pole(poles, re, im, re_tol, 0.05);
        ok &= found;
        let nearest = poles
            .iter()
            .filter(|p| p.im >= 0.0)
            .min_by(|a, b| {
                (**a - Complex64::new(re, im)).norm().total_cmp(&(**b - Complex64::new(re, im)).norm())
            })
            .unwrap();
        parts.push(format!(
            "{re}±j{im} -> {:.2}{:+.1}j {}",
            nearest.re,
            nearest.im,
            if found { "ok" } else { "MISS" }
        ));
    }
    (ok, parts.join("; "))
}

#[test]
fn criterion_01_open_loop_reactive_poles_lossless_line() {
    let start = Instant::now();
    let mut case = Case::reference().with("k_q", 11.0).unwrap();
    case.params.r_g = 0.0;
    let eq = solve_equilibrium(&case).unwrap();
    let poles = rap_open_loop_tf(&case, &eq).unwrap().g_q.poles().unwrap();
    let elapsed = start.elapsed();
    let (ok, detail) = match_rap_poles(&poles);
    report(
        "1",
        ok && within_time(elapsed, 1.0),
        format!("G_q poles with R_g = 0, k_q = 11: {detail}; {:.3} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_01_supplement_open_loop_poles_with_line_resistance() {
    let start = Instant::now();
    let case = Case::reference().with("k_q", 11.0).unwrap();
    let eq = solve_equilibrium(&case).unwrap();
    let poles = rap_open_loop_poles_detailed(&case, &eq).unwrap();
    let elapsed = start.elapsed();
    let (ok, detail) = match_rap_poles(&poles);
    report(
        "1 (supplement)",
        ok && within_time(elapsed, 1.0),
        format!("open-loop poles at nominal R_g, k_q = 11: {detail}; {:.3} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_baseline_spectrum() {
    let case = Case::reference();
    let a = analyze(&case).unwrap();
    let p = &case.params;
    let targets = [p.omega_n * (p.omega_res() + p.omega_g), p.omega_n * (p.omega_res() - p.omega_g)];
    let lcl: Vec<Complex64> = a
        .modes
        .iter()
        .filter(|m| m.class == ModeClass::LclResonance && m.lambda.im > 0.0)
        .map(|m| m.lambda)
        .collect();
    let pairs_ok = lcl.len() == 2
        && targets.iter().all(|w| lcl.iter().any(|l| (l.im - w).abs() <= 0.2 * w));
    let all_stable = a.max_real() < 0.0;
    let rap = a.rap_mode();
    let rap_ok = rap.is_some_and(|r| r.im == 0.0 && (r.re + 39.0).abs() <= 0.15 * 39.0);
    report(
        "2",
        pairs_ok && all_stable && rap_ok,
        format!(
            "LCL pairs {:?} vs targets ±j{:.1}, ±j{:.1}; max Re {:.3}; RAP {:?}",
            lcl.iter().map(|l| format!("{:.3}{:+.1}j", l.re, l.im)).collect::<Vec<_>>(),
            targets[0],
            targets[1],
            a.max_real(),
            rap.map(|r| r.re)
        ),
    );
}

fn tracked_crossing(l: &LocusResult) -> bool {
    l.lcl_tracks().iter().any(|&m| {
        let t = &l.tracks[m];
        t.first().unwrap().re < 0.0 && t.last().unwrap().re > 0.0
    })
}

#[test]
fn criterion_03_root_locus_signs() {
    let start = Instant::now();
    let case = Case::reference();
    let kq = root_locus(&case, "k_q", 4.0, 11.0, 40).unwrap();
    let lg = root_locus(&case, "l_g", 0.2, 0.5, 40).unwrap();
    let lf = root_locus(&case, "l_f", 0.1, 0.2, 40).unwrap();
    let elapsed = start.elapsed();
    let kq_ok = tracked_crossing(&kq) && kq.crossing.is_some() && kq.points.len() == 40;
    let lg_ok = tracked_crossing(&lg) && lg.crossing.is_some() && lg.points.len() == 40;
    let lf0 = lf.points.first().unwrap().max_lcl_re.unwrap();
    let lf1 = lf.points.last().unwrap().max_lcl_re.unwrap();
    let lf_ok = lf.points.len() == 40 && lf1 < lf0;
    report(
        "3",
        kq_ok && lg_ok && lf_ok && within_time(elapsed, 30.0),
        format!(
            "k_q crossing {:?}, L_g crossing {:?}, L_f max Re(LCL) {lf0:.3} -> {lf1:.3}; {:.2} s",
            kq.crossing,
            lg.crossing,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_04_sensitivity_signs() {
    let case = Case::reference();
    let eq = solve_equilibrium(&case).unwrap();
    let names = ["l_g", "l_f", "k_q", "k_pdc", "k_idc", "h", "d_p"];
    let s = sensitivity(&case, &eq, &names, 0.01).unwrap();
    let d = |n: &str| s.iter().find(|e| e.param == n).unwrap().delta_re;
    let lg = d("l_g");
    let signs = lg > 0.0 && d("l_f") < 0.0 && d("k_q") > 0.0;
    let decoupled = ["k_pdc", "k_idc", "h", "d_p"].iter().all(|n| d(n).abs() < 0.01 * lg.abs());
    report(
        "4",
        signs && decoupled,
        format!(
            "dRe: {}",
            names.iter().map(|n| format!("{n} {:+.3e}", d(n))).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn criterion_05_strategy_ranking() {
    let case = Case::reference();
    let ranking = rank_rap_strategies(&case, &RankOptions::default()).unwrap();
    let order: Vec<&str> = ranking.iter().map(|e| &e.label[..3]).collect();
    let expected = ["(e)", "(c)", "(b)", "(a)", "(d)", "(f)"];
    let tuned_ok = ranking.iter().all(|e| e.slow_mode.is_none_or(|s| (s + 40.0).abs() <= 1.0));
    let f_unstable = ranking.iter().any(|e| e.label.starts_with("(f)") && !e.stable);
    report(
        "5",
        order == expected && tuned_ok && f_unstable,
        format!(
            "order {} (expected {}); max Re(LCL): {}",
            order.join(">"),
            expected.join(">"),
            ranking.iter().map(|e| format!("{} {:.3}", &e.label[..3], e.max_lcl_re)).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn criterion_06_coupling_gain() {
    let case = Case::reference();
    let t_d = 1.0 / (2.0 * PI * 2.0 * case.params.f_res_hz());
    let k_d = linear_grid(0.0, 1e-5, 20);
    let ad = kqp_damper_sweep(&case, &k_d, t_d).unwrap();
    let (lo, hi) = ad.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.k_qp), hi.max(p.k_qp)));
    let invariant = hi - lo < 1e-6;

    let r_v = linear_grid(0.0, 0.05, 20);
    let mut series = kqp_series_sweep(&case, &r_v).unwrap();
    series.sort_by(|a, b| (-a.critical_lcl_re).total_cmp(&(-b.critical_lcl_re)));
    let increasing = series.windows(2).all(|w| w[1].k_qp.abs() > w[0].k_qp.abs());
    report(
        "6",
        invariant && increasing,
        format!(
            "damper sweep K_qp spread {:.2e} (K_qp {:.6}); series sweep |K_qp| {:.4} -> {:.4} as -Re(LCL) {:.3} -> {:.3}",
            hi - lo,
            lo,
            series.first().unwrap().k_qp.abs(),
            series.last().unwrap().k_qp.abs(),
            -series.first().unwrap().critical_lcl_re,
            -series.last().unwrap().critical_lcl_re
        ),
    );
}

#[test]
fn criterion_07_damper_design() {
    let start = Instant::now();
    let case = Case::reference();
    let spec = AdDesignSpec { rap_mode_target: -110.0, l_g_max: 0.5, margin: -10.0 };
    let d = design_ad(&case, &spec).unwrap();
    let elapsed = start.elapsed();

    let k_d_ok = d.config.k_d >= 3.3e-6 / 3.0 && d.config.k_d <= 3.3e-6 * 3.0;
    // corner rule from the series-resonance formula of the LCL network
    let p = &case.params;
    let w_res = ((p.l_f + spec.l_g_max) / (p.l_f * spec.l_g_max * p.c_f)).sqrt();
    let f_res = p.omega_n * w_res / (2.0 * PI);
    let t_d_ok = (d.config.t_d - 1.0 / (4.0 * PI * f_res)).abs() <= 1e-12 * d.config.t_d;

    let mut worst = case.with("k_q", d.k_q_worst).unwrap();
    worst.params.l_g = spec.l_g_max;
    let verify = analyze(&apply_ad(&worst, &d.config).unwrap()).unwrap().max_lcl_real().unwrap();
    let baseline = analyze(&apply_ad(&case, &d.config).unwrap()).unwrap().max_real();
    let k18 = analyze(&apply_ad(&case.with("k_q", 18.0).unwrap(), &d.config).unwrap()).unwrap().max_real();
    report(
        "7",
        k_d_ok && t_d_ok && verify <= -10.0 && baseline < 0.0 && k18 < 0.0 && within_time(elapsed, 30.0),
        format!(
            "k_d {:.4e}, T_d {:.4e} s (f_res {:.2} Hz), k_q worst {:.3}, verified max Re(LCL) {:.3}, \
             baseline max Re {:.3}, k_q = 18 max Re {:.3}; {:.2} s",
            d.config.k_d,
            d.config.t_d,
            f_res,
            d.k_q_worst,
            verify,
            baseline,
            k18,
            elapsed.as_secs_f64()
        ),
    );
}

/// Detailed simulation of the three set-point steps against the simplified
/// closed loops evaluated at each pre-step operating point.
#[test]
fn criterion_08_simplified_vs_detailed_steps() {
    let start = Instant::now();
    let case = Case::reference();
    let dt = 1e-5;
    let mut s = Scenario::new(case.clone(), 4.0, dt);
    s.events = vec![Event::set(1.0, "v_dcst", 1.05), Event::set(2.0, "p_st", 0.8), Event::set(3.0, "q_st", 0.1)];
    s.record = vec!["v_dc".into(), "p".into(), "q".into()];
    let ts = simulate(&s).unwrap();

    let after_dc = case.with("v_dcst", 1.05).unwrap();
    let after_p = after_dc.with("p_st", 0.8).unwrap();
    let windows = [("v_dc", 1.0, 0.05, case.clone()), ("p", 2.0, 0.3, after_dc), ("q", 3.0, 0.1, after_p)];
    let lead = 0.5;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, t0, step, pre) in windows {
        let eq = solve_equilibrium(&pre).unwrap();
        let tfs = simplified_tfs(&pre, &eq).unwrap();
        let open = match name {
            "v_dc" => tfs.g_dc_sim,
            "p" => tfs.g_p_sim,
            _ => tfs.g_q_sim.unwrap(),
        };
        let closed = open.feedback().unwrap();
        // window starts before the step so the filter sees the flat pre-step level
        let (_, y) = ts.window(name, t0 - lead, t0 + 1.0).unwrap();
        let k0 = (lead / dt).round() as usize;
        let base = y[k0 - 1];
        let dev: Vec<f64> = y.iter().map(|v| v - base).collect();
        let filtered = zero_phase_lowpass(&dev, dt, 20.0);
        let reference = closed.step_response(dt, y.len() - k0 - 1).unwrap();
        let se: f64 = filtered[k0..].iter().zip(&reference).map(|(a, r)| (a - step * r).powi(2)).sum();
        let nrmse = (se / reference.len() as f64).sqrt() / step;
        ok &= nrmse < 0.10;
        parts.push(format!("{name} NRMSE {nrmse:.4}"));
    }
    let elapsed = start.elapsed();
    report(
        "8",
        ok && within_time(elapsed, 60.0),
        format!("{}; {:.2} s", parts.join(", "), elapsed.as_secs_f64()),
    );
}

/// Raising `k_q` to 18 (with a small reactive set-point kick to seed the
/// oscillation) destabilizes the LCL resonance; the damper is switched on
/// once the growth has been measured.
#[test]
fn criterion_09_nonlinear_instability_and_damper_recovery() {
    let case = Case::reference();
    let design = design_ad(&case, &AdDesignSpec::default()).unwrap();
    let unstable = case.with("k_q", 18.0).unwrap();
    let lambda = analyze(&unstable).unwrap().critical_lcl().unwrap();
    let f_lin = lambda.im.abs() / (2.0 * PI);

    let (t_k, t_ad) = (1.0, 1.4);
    let mut s = Scenario::new(case.clone(), t_ad + 1.3, 1e-5);
    s.events = vec![
        Event::set(t_k, "k_q", 18.0),
        Event::set(t_k, "q_st", 1e-3),
        Event::damper(t_ad, design.config.damper()),
    ];
    s.record = vec!["q".into()];
    let ts = simulate(&s).unwrap();

    let (tw, yw) = ts.window("q", t_k + 0.1, t_ad).unwrap();
    let m = envelope_metrics(&tw, &yw, (0.5 * f_lin, 1.7 * f_lin)).unwrap();
    let f_sim = m.dominant_freq_hz.unwrap_or(f64::NAN);
    let growth_ok = (m.growth_rate - lambda.re).abs() <= 0.2 * lambda.re.abs();
    let freq_ok = (f_sim - f_lin).abs() <= 0.2 * f_lin;

    let q = ts.column("q").unwrap();
    let residual = envelope_peak_after(&ts.t, q, f_lin, t_ad + 1.0);
    let decay_ok = residual < 1e-3;
    report(
        "9",
        lambda.re > 0.0 && growth_ok && freq_ok && decay_ok,
        format!(
            "eigenvalue {:.3}{:+.1}j ({f_lin:.1} Hz); measured growth {:.3} /s at {f_sim:.1} Hz; \
             envelope 1 s after damper {residual:.2e}",
            lambda.re, lambda.im, m.growth_rate
        ),
    );
}

#[test]
fn criterion_10_numerics_oracles() {
    use gfm_core::linalg::{eigen_residual, eigenvector, eigs};
    use nalgebra::DMatrix;

    // ‖Av − λv‖ / (‖A‖_F ‖v‖)
    let rel_residual = |a: &DMatrix<f64>, l: Complex64| {
        eigen_residual(a, l, &eigenvector(a, l)) / a.norm().max(f64::MIN_POSITIVE)
    };

    // eigensolver on deterministic pseudo-random matrices and the model Jacobian
    let mut worst_residual = 0.0f64;
    let mut seed = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for n in 1..=20 {
        let a = DMatrix::from_fn(n, n, |_, _| next());
        for l in eigs(&a).unwrap() {
            worst_residual = worst_residual.max(rel_residual(&a, l));
        }
    }
    let a = analyze(&Case::reference()).unwrap();
    for l in a.eigenvalues() {
        worst_residual = worst_residual.max(rel_residual(&a.ss.a, l));
    }

    // companion-matrix roots against Durand-Kerner
    let mut case = Case::reference().with("k_q", 11.0).unwrap();
    case.params.r_g = 0.0;
    let eq = solve_equilibrium(&case).unwrap();
    let rap = rap_open_loop_tf(&case, &eq).unwrap();
    let mut worst_root = 0.0f64;
    for p in [rap.d_lcl.clone(), rap.closed_loop.clone(), rap.g_q.den().clone(), rap.n_qe.clone()] {
        let r = p.roots().unwrap();
        worst_root = worst_root.max(common::max_matched_rel_error(&r, &common::durand_kerner(p.coeffs())));
    }
    for n in 2..=10 {
        let roots: Vec<Complex64> = (0..n).map(|_| Complex64::new(3.0 * next(), 0.0)).collect();
        let p = Poly::from_roots(&roots);
        let r = p.roots().unwrap();
        worst_root = worst_root.max(common::max_matched_rel_error(&r, &common::durand_kerner(p.coeffs())));
    }

    // RK4 convergence on a stable scenario
    let run = |dt: f64| {
        let mut s = Scenario::new(Case::reference(), 0.2, dt);
        s.events = vec![Event::set(0.05, "p_st", 0.6)];
        simulate(&s).unwrap().final_state
    };
    let (x1, x2) = (run(1e-5), run(5e-6));
    let norm = x2.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rk4 = x1.iter().zip(&x2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;

    let jac = a.ss.jacobian_discrepancy;
    report(
        "10",
        worst_residual < 1e-8 && worst_root < 1e-8 && rk4 < 1e-6 && jac < 1e-4,
        format!(
            "eig residual {worst_residual:.2e}, root mismatch {worst_root:.2e}, RK4 dt-halving {rk4:.2e}, \
             Jacobian two-step {jac:.2e}"
        ),
    );
}
