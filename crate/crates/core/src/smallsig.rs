//! Linearization, modal analysis and parameter sensitivity.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{solve_equilibrium, Equilibrium};
use crate::error::{Error, Result};
use crate::freq::{simplified_tfs, SimplifiedTfs};
use crate::linalg;
use crate::model::Case;
use crate::params::RapControl;
use crate::poly::Poly;

pub const INPUT_NAMES: [&str; 6] = ["p_st", "q_st", "v_st", "v_dcst", "v_g", "omega_g"];
pub const OUTPUT_NAMES: [&str; 5] = ["p", "q", "v", "v_dc", "omega"];

/// Relative entrywise tolerance between Jacobians at steps `h` and `h/2`.
pub const JACOBIAN_TOLERANCE: f64 = 1e-4;

/// Relative band around each nominal frequency used for classification.
const BAND: f64 = 0.35;

#[derive(Clone, Debug)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Largest relative entrywise difference between the two step sizes.
    pub jacobian_discrepancy: f64,
}

impl StateSpaceModel {
    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        linalg::eigs(&self.a)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_names.iter().position(|n| n == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.output_names.iter().position(|n| n == name)
    }

    /// Steady-state gain `d − c a⁻¹ b` from one input to one output.
    pub fn dc_gain(&self, input: usize, output: usize) -> Result<f64> {
        let b: Vec<f64> = self.b.column(input).iter().copied().collect();
        let z = linalg::solve(&self.a, &b)?;
        let cz: f64 = (0..self.a.nrows()).map(|k| self.c[(output, k)] * z[k]).sum();
        Ok(self.d[(output, input)] - cz)
    }
}

fn output_vec(case: &Case, x: &[f64]) -> Result<Vec<f64>> {
    let o = case.outputs(x)?;
    Ok(vec![o.p, o.q, o.v, o.v_dc, o.omega])
}

fn input_value(case: &Case, k: usize) -> f64 {
    case.get(INPUT_NAMES[k]).expect("inputs are always addressable")
}

fn with_input(case: &Case, k: usize, value: f64) -> Case {
    case.with(INPUT_NAMES[k], value).expect("inputs are always addressable")
}

/// Jacobians with respect to the inputs at a fixed state.
fn input_jacobian<F>(case: &Case, x: &[f64], factor: f64, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&Case, &[f64]) -> Result<Vec<f64>>,
{
    let m = f(case, x)?.len();
    let mut jac = DMatrix::zeros(m, INPUT_NAMES.len());
    for k in 0..INPUT_NAMES.len() {
        let u = input_value(case, k);
        let h = linalg::fd_step(u, factor);
        let fp = f(&with_input(case, k, u + h), x)?;
        let fm = f(&with_input(case, k, u - h), x)?;
        for i in 0..m {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Entrywise relative difference, floored at `1e-5·max|J|` so that
/// entries that are zero up to roundoff do not dominate.
pub fn jacobian_discrepancy(j1: &DMatrix<f64>, j2: &DMatrix<f64>) -> (f64, usize, usize) {
    let scale = j1.iter().chain(j2.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-5 * scale;
    let mut worst = (0.0, 0, 0);
    for i in 0..j1.nrows() {
        for j in 0..j1.ncols() {
            let (a, b) = (j1[(i, j)], j2[(i, j)]);
            let den = a.abs().max(b.abs()).max(floor);
            if den == 0.0 {
                continue;
            }
            let r = (a - b).abs() / den;
            if r > worst.0 {
                worst = (r, i, j);
            }
        }
    }
    worst
}

/// Central-difference linearization around `eq`, verified by repeating the
/// state Jacobian at half the step.
pub fn linearize(case: &Case, eq: &Equilibrium) -> Result<StateSpaceModel> {
    let x = &eq.x0;
    let layout = case.layout();
    if x.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), got: x.len() });
    }
    let f = |z: &[f64]| case.rhs_vec(z);
    let a = linalg::central_jacobian(f, x, 1.0)?;
    let a2 = linalg::central_jacobian(f, x, 0.5)?;
    let (disc, row, col) = jacobian_discrepancy(&a, &a2);
    if disc > JACOBIAN_TOLERANCE {
        return Err(Error::JacobianInconsistent { discrepancy: disc, row, col });
    }
    let b = input_jacobian(case, x, 1.0, |c, z| c.rhs_vec(z))?;
    let c = linalg::central_jacobian(|z| output_vec(case, z), x, 1.0)?;
    let d = input_jacobian(case, x, 1.0, output_vec)?;
    Ok(StateSpaceModel {
        a,
        b,
        c,
        d,
        state_names: layout.names().iter().map(|s| s.to_string()).collect(),
        input_names: INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        output_names: OUTPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        jacobian_discrepancy: disc,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ModeClass {
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "RAP")]
    Rap,
    SynchronousResonance,
    #[serde(rename = "LCLResonance")]
    LclResonance,
    Other,
}

impl ModeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeClass::Dc => "DC",
            ModeClass::Ap => "AP",
            ModeClass::Rap => "RAP",
            ModeClass::SynchronousResonance => "SynchronousResonance",
            ModeClass::LclResonance => "LCLResonance",
            ModeClass::Other => "Other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModeReport {
    #[serde(serialize_with = "ser_complex")]
    pub lambda: Complex64,
    pub freq_hz: f64,
    pub damping_ratio: f64,
    pub class: ModeClass,
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

impl ModeReport {
    pub fn new(lambda: Complex64, class: ModeClass) -> Self {
        let norm = lambda.norm();
        Self {
            lambda,
            freq_hz: lambda.im.abs() / (2.0 * PI),
            damping_ratio: if norm > 0.0 { -lambda.re / norm } else { 0.0 },
            class,
        }
    }
}

/// Nominal slow poles predicted by the simplified loop models.
#[derive(Clone, Debug)]
pub struct ModeAnchors {
    pub rap: Vec<Complex64>,
    pub ap: Vec<Complex64>,
    pub dc: Vec<Complex64>,
    /// Angular frequencies (rad/s) of the two LCL resonances.
    pub lcl: [f64; 2],
    pub synchronous: f64,
}

/// Slow real pole of the reactive-power/voltage loop from the static gains.
pub fn rap_anchor(control: &RapControl, tfs: &SimplifiedTfs) -> Option<f64> {
    match *control {
        RapControl::DroopI { d_q, k_q } => Some(-k_q * (d_q * tfs.g_ve + tfs.g_qe)),
        RapControl::Rap { k_q } => Some(-k_q * tfs.g_qe),
        RapControl::Voltage { k_v } => Some(-k_v * tfs.g_ve),
        RapControl::Droop { k_droop, t_q } => Some(-(1.0 + k_droop * tfs.g_qe) / t_q),
        RapControl::FixedVoltage | RapControl::PureDroop { .. } => None,
    }
}

pub fn mode_anchors(case: &Case, eq: &Equilibrium) -> Result<ModeAnchors> {
    let p = &case.params;
    let tfs = simplified_tfs(case, eq)?;
    let wn = p.omega_n;
    let ap = Poly::new(vec![2.0 * p.h, p.d_p, wn * tfs.g_pdelta]).roots()?;
    let dc = Poly::new(vec![p.c_dc, wn * (tfs.g_dcv + p.k_pdc), wn * p.k_idc]).roots()?;
    let wr = p.omega_res();
    Ok(ModeAnchors {
        rap: rap_anchor(&case.control, &tfs).map(|r| Complex64::new(r, 0.0)).into_iter().collect(),
        ap,
        dc,
        lcl: [wn * (wr + p.omega_g), wn * (wr - p.omega_g)],
        synchronous: wn * p.omega_g,
    })
}

fn within(value: f64, nominal: f64) -> bool {
    (value - nominal).abs() <= BAND * nominal.abs()
}

/// Labels every eigenvalue. Resonances are recognized by frequency band;
/// the slow modes by proximity to their simplified-model anchor poles.
/// An eigenvalue claimed by more than one class is labelled `Other`.
pub fn classify(anchors: &ModeAnchors, eigs: &[Complex64]) -> Vec<ModeReport> {
    let n = eigs.len();
    let mut claims: Vec<Vec<ModeClass>> = vec![Vec::new(); n];
    for (i, l) in eigs.iter().enumerate() {
        let w = l.im.abs();
        if anchors.lcl.iter().any(|&c| within(w, c)) {
            claims[i].push(ModeClass::LclResonance);
        }
        if within(w, anchors.synchronous) {
            claims[i].push(ModeClass::SynchronousResonance);
        }
    }
    let free: Vec<bool> = claims.iter().map(|c| c.is_empty()).collect();
    let groups = [
        (ModeClass::Rap, &anchors.rap),
        (ModeClass::Ap, &anchors.ap),
        (ModeClass::Dc, &anchors.dc),
    ];
    for (class, targets) in groups {
        for a in targets.iter() {
            let nearest = (0..n)
                .filter(|&i| free[i])
                .min_by(|&i, &j| (eigs[i] - a).norm().total_cmp(&(eigs[j] - a).norm()));
            if let Some(i) = nearest {
                if (eigs[i] - a).norm() <= BAND * a.norm() && !claims[i].contains(&class) {
                    claims[i].push(class);
                }
            }
        }
    }
    eigs.iter()
        .zip(claims)
        .map(|(l, c)| {
            let class = if c.len() == 1 { c[0] } else { ModeClass::Other };
            ModeReport::new(*l, class)
        })
        .collect()
}

/// Equilibrium, linear model and classified spectrum of a case.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub eq: Equilibrium,
    pub ss: StateSpaceModel,
    pub modes: Vec<ModeReport>,
}

impl Analysis {
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn max_real(&self) -> f64 {
        self.modes.iter().map(|m| m.lambda.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_lcl_real(&self) -> Option<f64> {
        max_lcl_real(&self.modes)
    }

    pub fn critical_lcl(&self) -> Option<Complex64> {
        critical_lcl(&self.modes)
    }

    pub fn rap_mode(&self) -> Option<Complex64> {
        self.modes.iter().find(|m| m.class == ModeClass::Rap).map(|m| m.lambda)
    }
}

pub fn analyze(case: &Case) -> Result<Analysis> {
    let eq = solve_equilibrium(case)?;
    analyze_at(case, eq)
}

pub fn analyze_at(case: &Case, eq: Equilibrium) -> Result<Analysis> {
    let ss = linearize(case, &eq)?;
    let eigs = ss.eigenvalues()?;
    let anchors = mode_anchors(case, &eq)?;
    let modes = classify(&anchors, &eigs);
    Ok(Analysis { eq, ss, modes })
}

pub fn max_lcl_real(modes: &[ModeReport]) -> Option<f64> {
    modes
        .iter()
        .filter(|m| m.class == ModeClass::LclResonance)
        .map(|m| m.lambda.re)
        .fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r))))
}

/// LCL mode (upper half plane) with the largest real part.
pub fn critical_lcl(modes: &[ModeReport]) -> Option<Complex64> {
    modes
        .iter()
        .filter(|m| m.class == ModeClass::LclResonance && m.lambda.im > 0.0)
        .map(|m| m.lambda)
        .max_by(|a, b| a.re.total_cmp(&b.re))
}

/// Nearest eigenvalue to `target` among those in the closed upper half
/// plane, together with the ratio of second-nearest to nearest distance.
pub fn track_nearest(target: Complex64, eigs: &[Complex64]) -> Option<(Complex64, f64)> {
    let mut d: Vec<(f64, Complex64)> = eigs
        .iter()
        .filter(|l| l.im >= 0.0)
        .map(|l| ((l - target).norm(), *l))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (d1, l1) = *d.first()?;
    let ratio = match d.get(1) {
        Some((d2, _)) if d1 > 0.0 => d2 / d1,
        _ => f64::INFINITY,
    };
    Some((l1, ratio))
}

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityEntry {
    pub param: String,
    pub base_value: f64,
    pub step: f64,
    /// Signed change in the real part of the critical LCL mode.
    pub delta_re: f64,
    #[serde(serialize_with = "ser_complex")]
    pub lambda_base: Complex64,
    #[serde(serialize_with = "ser_complex")]
    pub lambda_perturbed: Complex64,
}

/// Change of the critical LCL-resonance real part for a `rel_step`
/// relative increase of each named parameter.
pub fn sensitivity(
    case: &Case,
    eq: &Equilibrium,
    names: &[&str],
    rel_step: f64,
) -> Result<Vec<SensitivityEntry>> {
    let base = analyze_at(case, eq.clone())?;
    let target = base
        .critical_lcl()
        .ok_or_else(|| Error::DegenerateEquilibrium("no LCL resonance mode found".into()))?;
    names
        .par_iter()
        .map(|&name| {
            let v = case.get(name)?;
            let step = if v != 0.0 { rel_step * v.abs() } else { rel_step };
            let perturbed = case.with(name, v + step)?;
            let eigs = linearize(&perturbed, &solve_equilibrium(&perturbed)?)?.eigenvalues()?;
            let (l, ratio) = track_nearest(target, &eigs).ok_or_else(|| Error::ModeTrackingLost {
                param: name.to_string(),
                ratio: 0.0,
            })?;
            if ratio < 2.0 {
                return Err(Error::ModeTrackingLost { param: name.to_string(), ratio });
            }
            Ok(SensitivityEntry {
                param: name.to_string(),
                base_value: v,
                step,
                delta_re: l.re - target.re,
                lambda_base: target,
                lambda_perturbed: l,
            })
        })
        .collect()
}
