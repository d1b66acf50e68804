use gfm_core::smallsig::ModeClass;
use gfm_core::sweeps::{kqp_damper_sweep, linear_grid, stability_sweep, tune_slow_mode};
use gfm_core::*;

#[test]
fn locus_endpoints_match_standalone_analysis() {
    let case = Case::reference();
    let l = root_locus(&case, "l_g", 0.2, 0.5, 40).unwrap();
    for (k, v) in [(0, 0.2), (39, 0.5)] {
        let a = analyze(&case.with("l_g", v).unwrap()).unwrap();
        let from_locus: Vec<u64> = l.points[k].modes.iter().flat_map(|m| [m.lambda.re.to_bits(), m.lambda.im.to_bits()]).collect();
        let direct: Vec<u64> = a.modes.iter().flat_map(|m| [m.lambda.re.to_bits(), m.lambda.im.to_bits()]).collect();
        assert_eq!(from_locus, direct);
    }
}

#[test]
fn crossing_is_bracketed_by_grid_sign_change() {
    let case = Case::reference();
    for (param, from, to) in [("k_q", 4.0, 11.0), ("l_g", 0.2, 0.5)] {
        let l = root_locus(&case, param, from, to, 40).unwrap();
        let c = l.crossing.unwrap();
        let k = l.points.iter().position(|p| p.max_lcl_re.unwrap() >= 0.0).unwrap();
        assert!(k > 0 && l.values[k - 1] <= c && c <= l.values[k], "{param}: {c}");
    }
}

#[test]
fn crossing_is_insensitive_to_grid_density() {
    let case = Case::reference();
    let coarse = root_locus(&case, "k_q", 4.0, 11.0, 40).unwrap().crossing.unwrap();
    let fine = root_locus(&case, "k_q", 4.0, 11.0, 97).unwrap().crossing.unwrap();
    assert!((coarse - fine).abs() < 2e-3 * 7.0);
}

#[test]
fn locus_rejects_coarse_grids() {
    assert!(root_locus(&Case::reference(), "k_q", 4.0, 11.0, 39).is_err());
}

#[test]
fn tracked_lcl_modes_stay_continuous() {
    let l = root_locus(&Case::reference(), "k_q", 4.0, 11.0, 40).unwrap();
    assert_eq!(l.lcl_tracks().len(), 4);
    for m in l.lcl_tracks() {
        assert!(l.continuity_ratio(m) < 10.0);
    }
}

#[test]
fn stronger_line_reduces_active_power_mode_damping() {
    // the active-power pair becomes better damped as the line weakens
    let l = root_locus(&Case::reference(), "l_g", 0.2, 0.5, 40).unwrap();
    let ap = |k: usize| {
        l.points[k]
            .modes
            .iter()
            .filter(|m| m.class == ModeClass::Ap)
            .map(|m| m.damping_ratio)
            .fold(f64::INFINITY, f64::min)
    };
    assert!(ap(39) > ap(0));
}

#[test]
fn stability_sweep_flags_unstable_points() {
    let rows = stability_sweep(&Case::reference(), "k_q", 4.0, 11.0, 40).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.first().unwrap().stable && !rows.last().unwrap().stable);
}

#[test]
fn slow_mode_tuning_hits_target() {
    let case = Case::reference();
    let (tuned, achieved) = tune_slow_mode(&case, "k_q", 10.0, -80.0, 0.1).unwrap();
    assert!((achieved + 80.0).abs() <= 0.1);
    let rap = analyze(&tuned).unwrap().rap_mode().unwrap();
    assert!((rap.re - achieved).abs() < 1e-9);
}

#[test]
fn ranking_tunes_every_variant_and_flags_pure_droop() {
    let r = rank_rap_strategies(&Case::reference(), &RankOptions::default()).unwrap();
    assert_eq!(r.len(), 6);
    assert!(r.windows(2).all(|w| w[0].max_lcl_re <= w[1].max_lcl_re));
    for e in &r {
        if let Some(s) = e.slow_mode {
            assert!((s + 40.0).abs() <= 1.0, "{}: {s}", e.label);
        }
    }
    let last = r.last().unwrap();
    assert!(last.label.starts_with("(f)") && !last.stable);
    let again = rank_rap_strategies(&Case::reference(), &RankOptions::default()).unwrap();
    let labels = |v: &[sweeps::RankEntry]| v.iter().map(|e| e.label.clone()).collect::<Vec<_>>();
    assert_eq!(labels(&r), labels(&again));
}

fn designed() -> (Case, AdDesign) {
    let case = Case::reference();
    let d = design_ad(&case, &AdDesignSpec::default()).unwrap();
    (case, d)
}

fn worst_case(case: &Case, d: &AdDesign) -> Case {
    let mut w = case.with("k_q", d.k_q_worst).unwrap();
    w.params.l_g = AdDesignSpec::default().l_g_max;
    w
}

#[test]
fn damping_improves_monotonically_up_to_design_gain() {
    let (case, d) = designed();
    let worst = worst_case(&case, &d);
    let margins: Vec<f64> = linear_grid(0.0, d.config.k_d, 20)
        .iter()
        .map(|&k| analyze(&worst.with_damper(Damper::Filtered { k_d: k, t_d: d.config.t_d })).unwrap().max_lcl_real().unwrap())
        .collect();
    assert!(margins.windows(2).all(|w| w[1] < w[0]), "{margins:?}");
    assert!(margins[0] > 0.0 && *margins.last().unwrap() <= -10.0);
}

#[test]
fn worst_case_slow_mode_is_at_target() {
    let (case, d) = designed();
    let rap = analyze(&worst_case(&case, &d)).unwrap().rap_mode().unwrap();
    assert!((rap.re + 110.0).abs() <= 0.5);
    assert!(d.margin_ideal <= -10.0 && d.margin_achieved <= -10.0);
    assert!(d.config.k_d >= d.k_d_ideal && d.config.k_d <= 2.0 * d.k_d_ideal);
}

#[test]
fn designed_damper_keeps_coupling_gain() {
    let (case, d) = designed();
    let plain = coupling_gain_kqp(&case).unwrap();
    let damped = coupling_gain_kqp(&apply_ad(&case, &d.config).unwrap()).unwrap();
    assert!((plain - damped).abs() < 1e-9);
    let sweep = kqp_damper_sweep(&case, &linear_grid(0.0, d.config.k_d, 20), d.config.t_d).unwrap();
    assert!(sweep.iter().all(|p| (p.k_qp - plain).abs() < 1e-9));
    assert!(sweep.windows(2).all(|w| w[1].critical_lcl_re < w[0].critical_lcl_re));
}

#[test]
fn design_is_infeasible_with_unreachable_margin() {
    let spec = AdDesignSpec { margin: -1e4, ..Default::default() };
    assert!(matches!(design_ad(&Case::reference(), &spec), Err(Error::DesignInfeasible { .. })));
}
