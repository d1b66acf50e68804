//! Steady-state operating points.
//!
//! A reduced two-unknown power-flow problem in `(V, δ_v)` is solved first;
//! its phasor solution seeds a damped Newton iteration on the full model.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Case, Damper, DELTA, OMEGA, V_DC, XI_DC};
use crate::params::RapControl;

const MAX_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 8;
const TOLERANCE: f64 = 1e-10;

/// Solution of the algebraic steady-state system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReducedSteadyState {
    pub p: f64,
    pub q: f64,
    /// Capacitor voltage magnitude.
    pub v: f64,
    /// Angle of the capacitor voltage relative to the grid voltage.
    pub delta_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Equilibrium {
    /// Full state vector in the layout of the case that produced it.
    pub x0: Vec<f64>,
    pub p0: f64,
    pub q0: f64,
    pub v0: f64,
    pub delta_v0: f64,
    pub i_dc0: f64,
    pub e_rf0: f64,
    /// Converter-voltage angle relative to the grid.
    pub delta0: f64,
    /// Final `‖f(x0)‖∞`.
    pub residual: f64,
}

/// Steady-state phasors in the grid frame at frequency `ω_g`.
struct Phasors {
    v: Complex64,
    i_g: Complex64,
    i: Complex64,
    e: Complex64,
}

fn phasors(case: &Case, v: f64, delta_v: f64) -> Phasors {
    let p = &case.params;
    let w = p.omega_g;
    let v = Complex64::from_polar(v, delta_v);
    let z = Complex64::new(p.r_g, w * p.l_g);
    let i_g = (v - p.v_g) / z;
    let i = i_g + Complex64::i() * w * p.c_f * v;
    let e = v + Complex64::i() * w * p.l_f * i;
    Phasors { v, i_g, i, e }
}

/// Line power flow at the capacitor bus for a Thevenin line `R_g + j ω_g L_g`.
pub fn line_power(case: &Case, v: f64, delta_v: f64) -> (f64, f64) {
    let p = &case.params;
    let x = p.omega_g * p.l_g;
    let r = p.r_g;
    let z2 = r * r + x * x;
    let (s, c) = delta_v.sin_cos();
    let pw = (v * v * r + v * p.v_g * (x * s - r * c)) / z2;
    let q = (v * v * x - v * p.v_g * (r * s + x * c)) / z2;
    (pw, q)
}

fn reduced_residual(case: &Case, y: [f64; 2]) -> [f64; 2] {
    let p = &case.params;
    let (v, dv) = (y[0], y[1]);
    let (pw, q) = line_power(case, v, dv);
    let p_target = case.inputs.p_st - p.d_p * (p.omega_g - p.omega_st);
    let e_mag = || phasors(case, v, dv).e.norm();
    let r2 = match case.control {
        RapControl::DroopI { d_q, .. } => p.q_st - q + d_q * (p.v_st - v),
        RapControl::Rap { .. } => p.q_st - q,
        RapControl::Voltage { .. } => p.v_st - v,
        RapControl::FixedVoltage => e_mag() - p.v_st,
        RapControl::Droop { k_droop, .. } | RapControl::PureDroop { k_droop } => {
            e_mag() - (p.v_st + k_droop * (p.q_st - q))
        }
    };
    [p_target - pw, r2]
}

/// Solves the steady-state power balance and the variant's reactive/voltage
/// condition for `(V, δ_v)` by damped 2-D Newton.
pub fn reduced_steady_state(case: &Case) -> Result<ReducedSteadyState> {
    case.validate()?;
    let p = &case.params;
    let x = p.omega_g * p.l_g;
    let p_target = case.inputs.p_st - p.d_p * (p.omega_g - p.omega_st);
    let v_seed = if p.v_st > 0.0 { p.v_st } else { 1.0 };
    let sin_seed = (p_target * x / (v_seed * p.v_g)).clamp(-0.99, 0.99);
    let mut y = [v_seed, sin_seed.asin()];

    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let mut r = reduced_residual(case, y);
    let mut iterations = 0;
    while norm(r) >= 1e-13 {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                solver: "reduced steady state",
                iterations,
                residual: norm(r),
            });
        }
        iterations += 1;
        let f = |z: &[f64]| Ok(reduced_residual(case, [z[0], z[1]]).to_vec());
        let jac = linalg::central_jacobian(f, &y, 1.0)?;
        let det = jac[(0, 0)] * jac[(1, 1)] - jac[(0, 1)] * jac[(1, 0)];
        if !(det.abs() > 1e-14) || !det.is_finite() {
            return Err(Error::NoConvergence {
                solver: "reduced steady state",
                iterations,
                residual: norm(r),
            });
        }
        let dx = [
            -(jac[(1, 1)] * r[0] - jac[(0, 1)] * r[1]) / det,
            -(-jac[(1, 0)] * r[0] + jac[(0, 0)] * r[1]) / det,
        ];
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = [y[0] + step * dx[0], y[1] + step * dx[1]];
            let rc = reduced_residual(case, cand);
            if cand[0] > 0.0 && norm(rc) < norm(r) {
                y = cand;
                r = rc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                solver: "reduced steady state",
                iterations,
                residual: norm(r),
            });
        }
    }
    if y[1].abs() >= FRAC_PI_2 {
        return Err(Error::NoConvergence {
            solver: "reduced steady state (angle branch)",
            iterations,
            residual: norm(r),
        });
    }
    let (pw, q) = line_power(case, y[0], y[1]);
    Ok(ReducedSteadyState { p: pw, q, v: y[0], delta_v: y[1] })
}

/// Full state vector assembled from the reduced solution, without damper states.
fn seed_state(core: &Case, red: &ReducedSteadyState) -> Result<Vec<f64>> {
    let p = &core.params;
    let ph = phasors(core, red.v, red.delta_v);
    let delta = ph.e.arg();
    let rot = Complex64::from_polar(1.0, -delta);
    let (v, i_g, i, e) = (ph.v * rot, ph.i_g * rot, ph.i * rot, ph.e * rot);
    let i_dc = (e.re * i.re + e.im * i.im) / p.v_dcst;
    if p.k_idc == 0.0 {
        return Err(Error::DegenerateEquilibrium(
            "k_idc = 0 leaves the DC integrator state undetermined".into(),
        ));
    }
    let layout = core.layout();
    let mut x = vec![0.0; layout.dim()];
    x[XI_DC] = i_dc / p.k_idc;
    x[V_DC] = p.v_dcst;
    x[OMEGA] = p.omega_g;
    x[DELTA] = delta;
    if let Some(ci) = layout.control_index() {
        x[ci] = match core.control {
            RapControl::Droop { .. } => red.q,
            _ => e.norm(),
        };
    }
    let l = layout.lcl();
    x[l..l + 6].copy_from_slice(&[i.re, i.im, v.re, v.im, i_g.re, i_g.im]);
    Ok(x)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton on the full right-hand side.
fn newton(case: &Case, mut x: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let f = |z: &[f64]| case.rhs_vec(z);
    let mut r = f(&x)?;
    let mut iterations = 0;
    while inf_norm(&r) >= TOLERANCE * 1e-2 {
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let jac: DMatrix<f64> = linalg::central_jacobian(f, &x, 1.0)?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = match linalg::solve(&jac, &neg) {
            Ok(dx) => dx,
            Err(_) => {
                return Err(Error::NoConvergence {
                    solver: "equilibrium newton (singular jacobian)",
                    iterations,
                    residual: inf_norm(&r),
                })
            }
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            if let Ok(rc) = f(&cand) {
                if inf_norm(&rc) < inf_norm(&r) {
                    x = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let res = inf_norm(&r);
    if res >= TOLERANCE {
        return Err(Error::NoConvergence {
            solver: "equilibrium newton",
            iterations,
            residual: res,
        });
    }
    Ok((x, res))
}

/// Steady state of the full model on the small-angle branch.
///
/// The damper has zero DC gain, so the operating point is computed without
/// it and the damper states (if any) are appended as zeros. The result is
/// therefore bit-identical with and without the damper.
pub fn solve_equilibrium(case: &Case) -> Result<Equilibrium> {
    case.validate()?;
    let core = case.with_damper(Damper::Off);
    let red = reduced_steady_state(&core)?;
    let seed = seed_state(&core, &red)?;
    let (x_core, _) = newton(&core, seed)?;

    let x0 = core.layout().remap(&x_core, &case.layout());
    let out = core.outputs(&x_core)?;
    let l = core.layout();
    let v = Complex64::new(x_core[l.v_d()], x_core[l.v_q()]);
    let delta0 = x_core[DELTA];
    let delta_v0 = wrap_angle(v.arg() + delta0);
    if delta_v0.abs() >= FRAC_PI_2 {
        return Err(Error::NoConvergence {
            solver: "equilibrium newton (angle branch)",
            iterations: 0,
            residual: delta_v0,
        });
    }
    let residual = inf_norm(&case.rhs_vec(&x0)?);
    Ok(Equilibrium {
        x0,
        p0: out.p,
        q0: out.q,
        v0: out.v,
        delta_v0,
        i_dc0: out.i_dc,
        e_rf0: out.e_rf,
        delta0,
        residual,
    })
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a < -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Case;

    #[test]
    fn baseline_power_equals_setpoint() {
        let c = Case::reference();
        let eq = solve_equilibrium(&c).unwrap();
        assert!((eq.p0 - 0.5).abs() < 1e-10);
        assert_eq!(eq.x0[OMEGA], 1.0);
        assert!(eq.residual < 1e-10);
        assert!(inf_norm(&c.rhs_vec(&eq.x0).unwrap()) < 1e-10);
    }

    #[test]
    fn no_load_is_flat() {
        let mut c = Case::reference();
        c.params.r_g = 0.0;
        c.inputs.p_st = 0.0;
        let r = reduced_steady_state(&c).unwrap();
        assert!(r.p.abs() < 1e-12 && r.q.abs() < 1e-12);
        assert!((r.v - 1.0).abs() < 1e-12 && r.delta_v.abs() < 1e-12);
        let eq = solve_equilibrium(&c).unwrap();
        let l = c.layout();
        assert!(eq.x0[l.i_gd()].abs() < 1e-10 && eq.x0[l.i_gq()].abs() < 1e-10);
    }

    #[test]
    fn frequency_offset_shifts_power_by_droop() {
        let mut c = Case::reference();
        c.params.omega_g = 1.001;
        let eq = solve_equilibrium(&c).unwrap();
        assert!((eq.p0 - (0.5 - 50.0 * 0.001)).abs() < 1e-9);
        assert!((eq.x0[OMEGA] - 1.001).abs() < 1e-14);
    }

    #[test]
    fn transfer_limit_exceeded() {
        let mut c = Case::reference();
        c.params.v_g = 0.2;
        c.params.l_g = 0.5;
        c.inputs.p_st = 1.2;
        assert!(matches!(solve_equilibrium(&c), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn damper_does_not_move_equilibrium() {
        let c = Case::reference();
        let a = solve_equilibrium(&c).unwrap();
        let b = solve_equilibrium(&c.with_damper(Damper::Filtered { k_d: 4e-6, t_d: 1e-4 })).unwrap();
        assert_eq!(&b.x0[..11], &a.x0[..]);
        assert_eq!(&b.x0[11..], &[0.0, 0.0]);
        assert_eq!(a.q0, b.q0);
        let c = solve_equilibrium(&c.with_damper(Damper::Ideal { k_d: 4e-6 })).unwrap();
        assert_eq!(c.x0, a.x0);
    }

    #[test]
    fn every_variant_converges() {
        let variants = [
            RapControl::reference(),
            RapControl::Rap { k_q: 10.0 },
            RapControl::FixedVoltage,
            RapControl::Voltage { k_v: 50.0 },
            RapControl::Droop { k_droop: 0.1, t_q: 0.03 },
            RapControl::PureDroop { k_droop: 0.1 },
        ];
        for v in variants {
            let c = Case::reference().with_control(v.clone());
            let eq = solve_equilibrium(&c).unwrap_or_else(|e| panic!("{v:?}: {e}"));
            assert!(eq.residual < 1e-10, "{v:?}");
        }
    }
}
