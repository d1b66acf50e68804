//! Capacitor-voltage derivative feedback damper and its worst-case design.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::lcl_resonant_frequency;
use crate::model::{Case, Damper};
use crate::params::RapControl;
use crate::smallsig::analyze;
use crate::sweeps::tune_slow_mode;

/// `G_ad(s) = k_d s / (T_d s + 1)` on each capacitor-voltage axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdConfig {
    pub k_d: f64,
    pub t_d: f64,
    pub enabled: bool,
}

impl AdConfig {
    pub fn new(k_d: f64, t_d: f64) -> Self {
        Self { k_d, t_d, enabled: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.t_d > 0.0 && self.k_d >= 0.0 && self.k_d.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "damper needs k_d >= 0 and t_d > 0, got k_d = {}, t_d = {}",
                self.k_d, self.t_d
            )));
        }
        Ok(())
    }

    pub fn damper(&self) -> Damper {
        if self.enabled {
            Damper::Filtered { k_d: self.k_d, t_d: self.t_d }
        } else {
            Damper::Off
        }
    }
}

/// Installs the damper on a case. The damper output is subtracted from the
/// voltage reference (`E_rf` on d, zero on q), adding two filter states.
pub fn apply_ad(case: &Case, ad: &AdConfig) -> Result<Case> {
    ad.validate()?;
    Ok(case.with_damper(ad.damper()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdDesignSpec {
    /// Slow reactive-control mode placement for the worst case (1/s).
    pub rap_mode_target: f64,
    /// Largest line inductance to be covered.
    pub l_g_max: f64,
    /// Required bound on the largest LCL real part (1/s).
    pub margin: f64,
}

impl Default for AdDesignSpec {
    fn default() -> Self {
        Self { rap_mode_target: -110.0, l_g_max: 0.5, margin: -10.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdDesign {
    pub config: AdConfig,
    /// `k_q` placing the slow mode at the target in the worst case.
    pub k_q_worst: f64,
    /// Smallest pure-derivative gain meeting the margin.
    pub k_d_ideal: f64,
    pub margin_ideal: f64,
    /// Worst-case LCL resonant frequency (Hz) behind the filter corner.
    pub f_res_worst_hz: f64,
    /// Largest LCL real part of the worst case with the final damper.
    pub margin_achieved: f64,
}

/// Largest upper limit searched for `k_d`.
pub const K_D_MAX: f64 = 1e-3;

fn lcl_margin(case: &Case) -> Option<f64> {
    analyze(case).ok().and_then(|a| a.max_lcl_real())
}

/// Worst-case damper design:
///
/// 1. raise `L_g` to its maximum and place the slow reactive mode at the target;
/// 2. with a pure derivative, find the smallest `k_d` meeting the margin
///    (logarithmic scan, then bisection to 1 %);
/// 3. put the filter corner at twice the worst-case resonant frequency;
/// 4. re-verify, raising `k_d` by up to a factor of two if needed.
pub fn design_ad(case: &Case, spec: &AdDesignSpec) -> Result<AdDesign> {
    if !(spec.margin < 0.0) {
        return Err(Error::InvalidParams(format!("margin must be negative, got {}", spec.margin)));
    }
    if spec.l_g_max < case.params.l_g {
        return Err(Error::InvalidParams(format!(
            "l_g_max = {} is below the nominal l_g = {}",
            spec.l_g_max, case.params.l_g
        )));
    }
    if !matches!(case.control, RapControl::DroopI { .. }) {
        return Err(Error::InvalidParams("damper design assumes droop-I control".into()));
    }
    let mut worst = case.with_damper(Damper::Off);
    worst.params.l_g = spec.l_g_max;
    let k_q0 = worst.get("k_q")?;
    let anchor = analyze(&worst)?
        .rap_mode()
        .ok_or(Error::TuningFailed { variant: "worst case".into(), achieved: f64::NAN })?
        .re;
    let (worst, _) = tune_slow_mode(&worst, "k_q", k_q0 * spec.rap_mode_target / anchor, spec.rap_mode_target, 0.5)?;
    let k_q_worst = worst.get("k_q")?;

    // pure derivative: logarithmic scan
    let grid: Vec<f64> = (0..=40).map(|i| 1e-8 * 10f64.powf(i as f64 / 8.0)).collect();
    let margins: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&k| lcl_margin(&worst.with_damper(Damper::Ideal { k_d: k })))
        .collect();
    let meets = |m: Option<f64>| m.is_some_and(|m| m <= spec.margin);
    let best = margins.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hit = margins.iter().position(|m| meets(*m)).ok_or(Error::DesignInfeasible {
        k_d: K_D_MAX,
        best_margin: best,
    })?;
    let (mut lo, mut hi) = if hit == 0 { (0.0, grid[0]) } else { (grid[hit - 1], grid[hit]) };
    let mut margin_ideal = margins[hit].unwrap();
    while hi - lo > 0.01 * hi {
        let mid = 0.5 * (lo + hi);
        let m = lcl_margin(&worst.with_damper(Damper::Ideal { k_d: mid }));
        if meets(m) {
            hi = mid;
            margin_ideal = m.unwrap();
        } else {
            lo = mid;
        }
    }
    let k_d_ideal = hi;

    // filter corner at twice the worst-case resonance
    let p = &worst.params;
    let f_res = p.omega_n * lcl_resonant_frequency(p.l_f, spec.l_g_max, p.c_f) / (2.0 * PI);
    let t_d = 1.0 / (2.0 * PI * 2.0 * f_res);

    let mut k_d = k_d_ideal;
    loop {
        let m = lcl_margin(&worst.with_damper(Damper::Filtered { k_d, t_d }));
        if meets(m) {
            return Ok(AdDesign {
                config: AdConfig::new(k_d, t_d),
                k_q_worst,
                k_d_ideal,
                margin_ideal,
                f_res_worst_hz: f_res,
                margin_achieved: m.unwrap(),
            });
        }
        if k_d >= 2.0 * k_d_ideal {
            return Err(Error::DesignInfeasible { k_d, best_margin: m.unwrap_or(f64::NAN) });
        }
        k_d = (k_d * 1.02).min(2.0 * k_d_ideal);
    }
}
