//! Parameter sweeps: root loci with mode tracking, stability-boundary
//! bisection, reactive-control strategy ranking and the AP-to-RAP coupling gain.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::freq::simplified_tfs;
use crate::model::{Case, Damper};
use crate::params::RapControl;
use crate::smallsig::{analyze, rap_anchor, Analysis, ModeClass, ModeReport};
use crate::equilibrium::solve_equilibrium;

/// Minimum number of grid points accepted by [`root_locus`].
pub const MIN_LOCUS_POINTS: usize = 40;

#[derive(Clone, Debug, Serialize)]
pub struct LocusPoint {
    pub value: f64,
    pub modes: Vec<ModeReport>,
    pub max_lcl_re: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocusResult {
    pub param: String,
    pub values: Vec<f64>,
    pub points: Vec<LocusPoint>,
    /// `tracks[mode_id][k]`: eigenvalue of mode `mode_id` at grid point `k`.
    #[serde(skip)]
    pub tracks: Vec<Vec<Complex64>>,
    /// Class of each tracked mode at the first grid point.
    pub track_class: Vec<ModeClass>,
    /// Parameter value where the largest LCL real part first becomes
    /// nonnegative, refined by bisection.
    pub crossing: Option<f64>,
    /// Error that truncated the sweep, if any.
    #[serde(skip)]
    pub lost: Option<Error>,
}

impl LocusResult {
    /// Largest single-step move of a track divided by its median step.
    pub fn continuity_ratio(&self, mode_id: usize) -> f64 {
        let t = &self.tracks[mode_id];
        let mut steps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        if steps.is_empty() {
            return 0.0;
        }
        let max = steps.iter().copied().fold(0.0, f64::max);
        steps.sort_by(f64::total_cmp);
        let median = steps[steps.len() / 2];
        if median == 0.0 {
            if max == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            max / median
        }
    }

    /// Tracks that start as LCL resonances.
    pub fn lcl_tracks(&self) -> Vec<usize> {
        (0..self.tracks.len())
            .filter(|&i| self.track_class[i] == ModeClass::LclResonance)
            .collect()
    }
}

/// Evenly spaced grid with exact endpoints.
pub fn linear_grid(from: f64, to: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
        .collect();
    v[n - 1] = to;
    v
}

/// Greedy nearest-neighbour assignment of `next` onto `prev`, smallest
/// distances first. Returns `next` reordered to follow `prev`.
fn match_modes(prev: &[Complex64], next: &[Complex64]) -> Vec<Complex64> {
    let n = prev.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            pairs.push(((a - b).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; n];
    let mut used = vec![false; next.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(next[j]);
            used[j] = true;
        }
    }
    out.into_iter().map(|z| z.expect("equal spectrum sizes")).collect()
}

fn analyze_with(case: &Case, param: &str, value: f64) -> Result<Analysis> {
    let c = case.with(param, value)?;
    c.validate()?;
    analyze(&c)
}

fn lost(param: &str, value: f64, e: &Error) -> Error {
    Error::EquilibriumLost { param: param.to_string(), value, reason: e.to_string() }
}

/// Root locus of all modes over `param ∈ [from, to]`.
///
/// Grid points are analyzed in parallel and assembled in grid order. If the
/// equilibrium is lost at some point the locus is truncated there and the
/// cause kept in [`LocusResult::lost`].
pub fn root_locus(case: &Case, param: &str, from: f64, to: f64, n_points: usize) -> Result<LocusResult> {
    if n_points < MIN_LOCUS_POINTS {
        return Err(Error::InvalidParams(format!(
            "root locus needs at least {MIN_LOCUS_POINTS} points, got {n_points}"
        )));
    }
    if !(from.is_finite() && to.is_finite()) || from == to {
        return Err(Error::InvalidParams(format!("invalid sweep range [{from}, {to}]")));
    }
    case.get(param)?;
    let grid = linear_grid(from, to, n_points);
    let results: Vec<Result<Analysis>> =
        grid.par_iter().map(|&v| analyze_with(case, param, v)).collect();

    let mut points = Vec::new();
    let mut lost_at = None;
    for (v, r) in grid.iter().zip(results) {
        match r {
            Ok(a) => points.push(LocusPoint { value: *v, max_lcl_re: a.max_lcl_real(), modes: a.modes }),
            Err(e) => {
                lost_at = Some(lost(param, *v, &e));
                break;
            }
        }
    }
    if points.is_empty() {
        return Err(lost_at.expect("an error truncated the first point"));
    }
    let values: Vec<f64> = points.iter().map(|p| p.value).collect();

    let first: Vec<Complex64> = points[0].modes.iter().map(|m| m.lambda).collect();
    let track_class = points[0].modes.iter().map(|m| m.class).collect();
    let mut tracks: Vec<Vec<Complex64>> = first.iter().map(|z| vec![*z]).collect();
    let mut prev = first;
    for p in &points[1..] {
        let next: Vec<Complex64> = p.modes.iter().map(|m| m.lambda).collect();
        let ordered = match_modes(&prev, &next);
        for (t, z) in tracks.iter_mut().zip(&ordered) {
            t.push(*z);
        }
        prev = ordered;
    }

    let mut crossing = None;
    for k in 0..points.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (points[k].max_lcl_re, points[k + 1].max_lcl_re) {
            if a < 0.0 && b >= 0.0 {
                let tol = 1e-3 * (to - from).abs();
                crossing = Some(bisect_crossing(case, param, values[k], values[k + 1], tol));
                break;
            }
        }
    }

    Ok(LocusResult {
        param: param.to_string(),
        values,
        points,
        tracks,
        track_class,
        crossing,
        lost: lost_at,
    })
}

/// Bisection on the sign of the largest LCL real part. `lo` is stable,
/// `hi` is not.
fn bisect_crossing(case: &Case, param: &str, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        match analyze_with(case, param, mid).ok().and_then(|a| a.max_lcl_real()) {
            Some(r) if r < 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => return mid,
        }
    }
    0.5 * (lo + hi)
}

/// Summary of a one-parameter stability sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub max_lcl_re: Option<f64>,
    pub max_re: f64,
    pub rap_mode_re: Option<f64>,
    pub stable: bool,
}

pub fn stability_sweep(case: &Case, param: &str, from: f64, to: f64, n_points: usize) -> Result<Vec<SweepRow>> {
    let locus = root_locus(case, param, from, to, n_points)?;
    Ok(locus
        .points
        .iter()
        .map(|p| {
            let max_re = p.modes.iter().map(|m| m.lambda.re).fold(f64::NEG_INFINITY, f64::max);
            SweepRow {
                value: p.value,
                max_lcl_re: p.max_lcl_re,
                max_re,
                rap_mode_re: p.modes.iter().find(|m| m.class == ModeClass::Rap).map(|m| m.lambda.re),
                stable: max_re < 0.0,
            }
        })
        .collect())
}

/// Places the slow real mode of the reactive control at `target` by a
/// secant iteration on the named gain.
pub fn tune_slow_mode(case: &Case, knob: &str, initial: f64, target: f64, tol: f64) -> Result<(Case, f64)> {
    let label = case.control.label().to_string();
    let eval = |g: f64| -> Result<f64> {
        let c = case.with(knob, g)?;
        let a = analyze(&c)?;
        a.rap_mode()
            .map(|z| z.re)
            .ok_or(Error::TuningFailed { variant: label.clone(), achieved: f64::NAN })
    };
    let mut g0 = initial;
    let mut f0 = eval(g0)? - target;
    let mut g1 = initial * 1.02;
    let mut f1 = eval(g1)? - target;
    for _ in 0..40 {
        if f1.abs() < 1e-3 * tol {
            break;
        }
        let slope = (f1 - f0) / (g1 - g0);
        if !slope.is_finite() || slope == 0.0 {
            break;
        }
        let mut g2 = g1 - f1 / slope;
        if g2 <= 0.0 {
            g2 = 0.5 * g1;
        }
        g0 = g1;
        f0 = f1;
        g1 = g2;
        f1 = eval(g1)? - target;
    }
    if f1.abs() > tol {
        return Err(Error::TuningFailed { variant: label, achieved: f1 + target });
    }
    Ok((case.with(knob, g1)?, f1 + target))
}

#[derive(Clone, Debug, Serialize)]
pub struct RankOptions {
    /// Slow-mode placement target (1/s).
    pub target: f64,
    /// Accepted deviation from `target`.
    pub tolerance: f64,
    /// Droop coefficient used by the droop-I variant.
    pub d_q: f64,
    /// Static droop gain of the two droop variants.
    pub droop_gain: f64,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self { target: -40.0, tolerance: 1.0, d_q: 10.0, droop_gain: 0.1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RankEntry {
    pub label: String,
    pub control: RapControl,
    /// Slow reactive-control mode after tuning; absent for untunable variants.
    pub slow_mode: Option<f64>,
    pub max_lcl_re: f64,
    pub stable: bool,
}

/// Initial gain estimate from the simplified slow-pole anchor.
fn initial_gain(case: &Case, knob: &str, target: f64) -> Result<f64> {
    let eq = solve_equilibrium(case)?;
    let tfs = simplified_tfs(case, &eq)?;
    let anchor = rap_anchor(&case.control, &tfs)
        .ok_or_else(|| Error::InvalidParams("variant has no tunable slow mode".into()))?;
    let g = case.get(knob)?;
    // anchors are linear in k_q / k_v and inversely proportional to t_q
    Ok(if knob == "t_q" { g * anchor / target } else { g * target / anchor })
}

/// Ranks the six reactive-control structures by their critical LCL real
/// part, most stable first, after tuning every tunable variant's slow
/// mode to the common target.
pub fn rank_rap_strategies(case: &Case, opts: &RankOptions) -> Result<Vec<RankEntry>> {
    let k = opts.droop_gain;
    let variants: Vec<(RapControl, Option<&str>)> = vec![
        (RapControl::DroopI { d_q: opts.d_q, k_q: 4.0 }, Some("k_q")),
        (RapControl::Rap { k_q: 10.0 }, Some("k_q")),
        (RapControl::FixedVoltage, None),
        (RapControl::Voltage { k_v: 50.0 }, Some("k_v")),
        (RapControl::Droop { k_droop: k, t_q: 0.03 }, Some("t_q")),
        (RapControl::PureDroop { k_droop: k }, None),
    ];
    let mut entries: Vec<RankEntry> = variants
        .into_par_iter()
        .map(|(control, knob)| {
            let base = case.with_control(control).with_damper(Damper::Off);
            let (tuned, slow) = match knob {
                Some(knob) => {
                    let g0 = initial_gain(&base, knob, opts.target)?;
                    let (c, s) = tune_slow_mode(&base, knob, g0, opts.target, opts.tolerance)?;
                    (c, Some(s))
                }
                None => (base, None),
            };
            let a = analyze(&tuned)?;
            let max_lcl_re = a.max_lcl_real().ok_or_else(|| {
                Error::DegenerateEquilibrium(format!("no LCL mode found for {}", tuned.control.label()))
            })?;
            Ok(RankEntry {
                label: tuned.control.label().to_string(),
                control: tuned.control.clone(),
                slow_mode: slow,
                max_lcl_re,
                stable: a.max_real() < 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.max_lcl_re.total_cmp(&b.max_lcl_re));
    Ok(entries)
}

/// Steady-state change of reactive power per unit step of the active-power
/// set-point, from the linearized model.
pub fn coupling_gain_kqp(case: &Case) -> Result<f64> {
    let a = analyze(case)?;
    let max_re = a.max_real();
    if max_re >= 0.0 {
        return Err(Error::UnstableModel { max_re });
    }
    let input = a.ss.input_index("p_st").expect("p_st input");
    let output = a.ss.output_index("q").expect("q output");
    a.ss.dc_gain(input, output)
}

/// Series virtual resistor in the line branch, emulated as added line resistance.
pub fn with_series_line_resistance(case: &Case, r_v: f64) -> Case {
    let mut c = case.clone();
    c.params.r_g += r_v;
    c
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KqpPoint {
    /// Swept quantity: `k_d` for the damper sweep, added resistance for the series sweep.
    pub value: f64,
    pub k_qp: f64,
    pub critical_lcl_re: f64,
}

fn kqp_point(case: &Case, value: f64) -> Result<KqpPoint> {
    let a = analyze(case)?;
    let max_re = a.max_real();
    if max_re >= 0.0 {
        return Err(Error::UnstableModel { max_re });
    }
    let critical = a
        .max_lcl_real()
        .ok_or_else(|| Error::DegenerateEquilibrium("no LCL mode found".into()))?;
    let k_qp = a.ss.dc_gain(a.ss.input_index("p_st").unwrap(), a.ss.output_index("q").unwrap())?;
    Ok(KqpPoint { value, k_qp, critical_lcl_re: critical })
}

/// `K_qp` over a sweep of the capacitor-voltage damper gain.
pub fn kqp_damper_sweep(case: &Case, k_d: &[f64], t_d: f64) -> Result<Vec<KqpPoint>> {
    k_d.par_iter()
        .map(|&k| kqp_point(&case.with_damper(Damper::Filtered { k_d: k, t_d }), k))
        .collect()
}

/// `K_qp` over a sweep of the series line-branch virtual resistor.
pub fn kqp_series_sweep(case: &Case, r_v: &[f64]) -> Result<Vec<KqpPoint>> {
    r_v.par_iter()
        .map(|&r| kqp_point(&with_series_line_resistance(case, r), r))
        .collect()
}
