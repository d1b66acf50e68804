//! Transfer functions: simplified static-gain loop models, the detailed
//! reactive-power loop, pole extraction and frequency response.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Case;
use crate::params::RapControl;
use crate::poly::Poly;

/// LCL resonant frequency `√((L_f + L_g)/(L_f L_g C_f))` in p.u. of `ω_n`.
pub fn lcl_resonant_frequency(l_f: f64, l_g: f64, c_f: f64) -> f64 {
    ((l_f + l_g) / (l_f * l_g * c_f)).sqrt()
}

/// Ratio of real polynomials, stored with a monic denominator.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalTF {
    num: Poly,
    den: Poly,
}

impl RationalTF {
    pub fn new(num: Poly, den: Poly) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::Domain("transfer function with zero denominator".into()));
        }
        let k = 1.0 / den.leading();
        Ok(Self { num: num.scale(k), den: den.scale(k) })
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval(s) / self.den.eval(s)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        self.den.roots()
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        if self.num.is_zero() {
            return Ok(Vec::new());
        }
        self.num.roots()
    }

    /// Number of poles with strictly positive real part.
    pub fn rhp_pole_count(&self) -> Result<usize> {
        Ok(self
            .poles()?
            .iter()
            .filter(|p| p.re > 1e-9 * p.norm().max(1.0))
            .count())
    }

    /// Smallest pole-zero distance relative to the pole magnitude; values
    /// below 1e-8 indicate a cancellable common root.
    pub fn min_pole_zero_gap(&self) -> Result<Option<f64>> {
        let zeros = self.zeros()?;
        let gap = self
            .poles()?
            .iter()
            .flat_map(|p| zeros.iter().map(move |z| (p - z).norm() / p.norm().max(1.0)))
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
        Ok(gap)
    }

    /// Unity negative feedback `G / (1 + G)`.
    pub fn feedback(&self) -> Result<Self> {
        Self::new(self.num.clone(), &self.den + &self.num)
    }

    /// Step response sampled at `k·dt`, `k = 0..n`, by RK4 on the
    /// controllable canonical realization. Requires a proper TF.
    pub fn step_response(&self, dt: f64, n: usize) -> Result<Vec<f64>> {
        let order = self.den.degree();
        if self.num.degree() > order {
            return Err(Error::Domain("step response of an improper transfer function".into()));
        }
        let a = self.den.coeffs();
        let mut b = vec![0.0; order + 1 - self.num.coeffs().len()];
        b.extend_from_slice(self.num.coeffs());
        let d = b[0];
        // x_1' = x_2, …, x_n' = −a_n x_1 − … − a_1 x_n + u ; y = Σ c_i x_i + d u
        let c: Vec<f64> = (0..order).map(|i| b[order - i] - a[order - i] * d).collect();
        let deriv = |x: &[f64]| -> Vec<f64> {
            let mut dx = vec![0.0; order];
            for i in 0..order.saturating_sub(1) {
                dx[i] = x[i + 1];
            }
            if order > 0 {
                dx[order - 1] = 1.0 - (0..order).map(|i| a[order - i] * x[i]).sum::<f64>();
            }
            dx
        };
        let output = |x: &[f64]| c.iter().zip(x).map(|(ci, xi)| ci * xi).sum::<f64>() + d;
        let mut x = vec![0.0; order];
        let mut y = Vec::with_capacity(n + 1);
        y.push(output(&x));
        for _ in 0..n {
            x = rk4_step(&deriv, &x, dt);
            y.push(output(&x));
        }
        Ok(y)
    }
}

fn rk4_step<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let add = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + s * b).collect()
    };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, h / 2.0));
    let k3 = f(&add(x, &k2, h / 2.0));
    let k4 = f(&add(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Static gains with the LCL dynamics neglected, and the three decoupled
/// loop transfer functions built from them.
#[derive(Clone, Debug)]
pub struct SimplifiedTfs {
    pub x_eq: f64,
    pub g_dcv: f64,
    pub g_pdelta: f64,
    pub g_qe: f64,
    pub g_ve: f64,
    /// DC-voltage loop.
    pub g_dc_sim: RationalTF,
    /// Active-power loop.
    pub g_p_sim: RationalTF,
    /// Reactive-power loop; only defined for integrating reactive control.
    pub g_q_sim: Option<RationalTF>,
}

pub fn simplified_tfs(case: &Case, eq: &Equilibrium) -> Result<SimplifiedTfs> {
    let p = &case.params;
    let (xf, xg, xc) = (p.l_f, p.l_g, p.c_f);
    let x_eq = xf + xg - xc * xf * xg;
    if x_eq.abs() < 1e-9 {
        return Err(Error::SingularXeq(x_eq));
    }
    let e0 = eq.e_rf0;
    let vg = p.v_g;
    let cos_d = eq.delta0.cos();
    let l = case.layout();
    let i_d0 = eq.x0[l.i_d()];
    let v_dc0 = eq.x0[crate::model::V_DC];

    let g_dcv = -e0 * i_d0 / (v_dc0 * v_dc0);
    let g_pdelta = e0 * vg / x_eq * cos_d;
    let g_qe = (2.0 * e0 * xg + vg * cos_d * (2.0 * xf - x_eq)) / (x_eq * x_eq);
    let root = (e0 * e0 * xg * xg + 2.0 * e0 * vg * xf * xg * cos_d + vg * vg * xf * xf).sqrt();
    let g_ve = xg * (e0 * xg + vg * xf * cos_d) / (x_eq * root);

    let wn = p.omega_n;
    let s = Poly::s();
    // (k_pdc + k_idc/s) · ω_n / (C_dc s + ω_n G_dcv)
    let g_dc_sim = RationalTF::new(
        Poly::new(vec![wn * p.k_pdc, wn * p.k_idc]),
        &s * &Poly::new(vec![p.c_dc, wn * g_dcv]),
    )?;
    // ω_n G_pδ / (s (2H s + D_p))
    let g_p_sim = RationalTF::new(
        Poly::constant(wn * g_pdelta),
        &s * &Poly::new(vec![2.0 * p.h, p.d_p]),
    )?;
    // G_qE / ((1/k_q) s + D_q G_VE)
    let g_q_sim = match case.control {
        RapControl::DroopI { d_q, k_q } => Some(RationalTF::new(
            Poly::constant(k_q * g_qe),
            Poly::new(vec![1.0, k_q * d_q * g_ve]),
        )?),
        RapControl::Rap { k_q } => Some(RationalTF::new(Poly::constant(k_q * g_qe), s.clone())?),
        _ => None,
    };
    Ok(SimplifiedTfs { x_eq, g_dcv, g_pdelta, g_qe, g_ve, g_dc_sim, g_p_sim, g_q_sim })
}

/// Polynomials of the detailed reactive-power loop with a lossless line.
#[derive(Clone, Debug)]
pub struct RapLoop {
    pub n_qe: Poly,
    pub n_ve: Poly,
    pub d_lcl: Poly,
    /// `s² + ω_n² ω_g²`
    pub sync: Poly,
    /// Open loop `G_q`.
    pub g_q: RationalTF,
    /// Characteristic polynomial of the closed reactive-power loop.
    pub closed_loop: Poly,
}

/// Detailed open-loop transfer function of the droop-I reactive-power loop.
///
/// With the line resistance neglected, the LCL network from `E_rf` to `q`
/// and `V` reduces to closed-form numerators over the resonance polynomial
/// `D_LCL(s) = [s² + ω_n²(ω_res+ω_g)²][s² + ω_n²(ω_res−ω_g)²]`.
pub fn rap_open_loop_tf(case: &Case, eq: &Equilibrium) -> Result<RapLoop> {
    let (d_q, k_q) = match case.control {
        RapControl::DroopI { d_q, k_q } => (d_q, k_q),
        _ => {
            return Err(Error::InvalidParams(
                "the detailed reactive-power loop is defined for droop-I control".into(),
            ))
        }
    };
    let p = &case.params;
    if p.r_g != 0.0 {
        return Err(Error::InvalidParams(format!(
            "the closed-form reactive-power loop assumes r_g = 0, got {}",
            p.r_g
        )));
    }
    let x_eq = p.x_eq();
    if x_eq.abs() < 1e-9 {
        return Err(Error::SingularXeq(x_eq));
    }
    let l = case.layout();
    let (vd, vq, igd, igq) = (eq.x0[l.v_d()], eq.x0[l.v_q()], eq.x0[l.i_gd()], eq.x0[l.i_gq()]);
    let v0 = vd.hypot(vq);
    if v0 == 0.0 {
        return Err(Error::DegenerateEquilibrium("capacitor voltage is zero".into()));
    }
    let (lf, lg, cf) = (p.l_f, p.l_g, p.c_f);
    let wn = p.omega_n;
    let wg = p.omega_g;
    let wr = lcl_resonant_frequency(lf, lg, cf);
    let (wn2, wg2, wr2) = (wn * wn, wg * wg, wr * wr);

    let sync = Poly::new(vec![1.0, 0.0, wn2 * wg2]);
    let d_lcl = &Poly::new(vec![1.0, 0.0, wn2 * (wr + wg).powi(2)])
        * &Poly::new(vec![1.0, 0.0, wn2 * (wr - wg).powi(2)]);
    let shifted = Poly::new(vec![1.0, 0.0, wn2 * wr2 - wn2 * wg2]);

    let n_ve = Poly::new(vec![vd, -2.0 * vq * wn * wg, vd * (wn2 * wr2 - wn2 * wg2)])
        .scale(wn2 / (lf * cf * v0));

    let t_vq = Poly::new(vec![1.0, 0.0, wn2 * wr2 - 3.0 * wn2 * wg2, 0.0]).scale(wn * vq);
    let t_vd = Poly::new(vec![3.0, 0.0, wn2 * wr2 - wn2 * wg2]).scale(wn * vd * wn * wg);
    let t_igq = (&sync * &shifted).scale(-igq * lg);
    let t_igd = (&Poly::s() * &sync).scale(-2.0 * igd * lg * wn * wg);
    let n_qe = (&(&t_vq + &t_vd) + &(&t_igq + &t_igd)).scale(wn2 / (lf * lg * cf));

    let inner = &(&Poly::s() * &d_lcl) + &n_ve.scale(k_q * d_q);
    let den = &inner * &sync;
    let num = n_qe.scale(k_q);
    let closed_loop = &den + &num;
    let g_q = RationalTF::new(num, den)?;
    Ok(RapLoop { n_qe, n_ve, d_lcl, sync, g_q, closed_loop })
}

/// Open-loop poles of the reactive-power loop taken from the full linear
/// model, including line resistance: the control and LCL states with
/// frequency and angle frozen and the `q` feedback path cut.
pub fn rap_open_loop_poles_detailed(case: &Case, eq: &Equilibrium) -> Result<Vec<Complex64>> {
    let k_q = match case.control {
        RapControl::DroopI { k_q, .. } => k_q,
        _ => {
            return Err(Error::InvalidParams(
                "the detailed reactive-power loop is defined for droop-I control".into(),
            ))
        }
    };
    let ss = crate::smallsig::linearize(case, eq)?;
    let l = case.layout();
    let ci = l.control_index().expect("droop-I has a control state");
    let idx: Vec<usize> = std::iter::once(ci).chain(l.lcl()..l.lcl() + 6).collect();
    let n = idx.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| ss.a[(idx[i], idx[j])]);
    let x = &eq.x0;
    // ∂q/∂(v_d, v_q, i_gd, i_gq) for q = v_q i_gd − v_d i_gq
    let dq = [-x[l.i_gq()], x[l.i_gd()], x[l.v_q()], -x[l.v_d()]];
    for (k, g) in dq.iter().enumerate() {
        a[(0, 3 + k)] += k_q * g;
    }
    linalg::eigs(&a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BodePoint {
    pub freq_hz: f64,
    pub mag_db: f64,
    pub phase_deg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BodeData {
    pub points: Vec<BodePoint>,
    /// Open-loop right-half-plane poles; with any present, gain and phase
    /// margins alone do not decide closed-loop stability.
    pub rhp_pole_count: usize,
}

/// Frequency response on the given grid with unwrapped phase.
pub fn bode(tf: &RationalTF, freqs_hz: &[f64]) -> Result<BodeData> {
    let mut points = Vec::with_capacity(freqs_hz.len());
    let mut prev: Option<f64> = None;
    for &f in freqs_hz {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Domain(format!("bode frequency must be positive, got {f}")));
        }
        let s = Complex64::new(0.0, 2.0 * PI * f);
        let den = tf.den.eval(s);
        if den.norm() < 1e-12 * tf.den.eval_abs_scale(s) {
            return Err(Error::PoleOnGrid { freq_hz: f });
        }
        let g = tf.num.eval(s) / den;
        let mut phase = g.arg();
        if let Some(pp) = prev {
            while phase - pp > PI {
                phase -= 2.0 * PI;
            }
            while phase - pp < -PI {
                phase += 2.0 * PI;
            }
        }
        prev = Some(phase);
        points.push(BodePoint {
            freq_hz: f,
            mag_db: 20.0 * g.norm().log10(),
            phase_deg: phase.to_degrees(),
        });
    }
    Ok(BodeData { points, rhp_pole_count: tf.rhp_pole_count()? })
}

/// Logarithmically spaced grid of `n ≥ 2` points between `f_min` and `f_max`.
pub fn log_grid(f_min: f64, f_max: f64, n: usize) -> Vec<f64> {
    let (a, b) = (f_min.log10(), f_max.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n.max(2) - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium;

    #[test]
    fn resonant_frequency_values() {
        assert_eq!(lcl_resonant_frequency(1.0, 1.0, 2.0), 1.0);
        assert!((lcl_resonant_frequency(0.1, 0.2, 0.048) - 17.6777).abs() < 1e-3);
        assert!((lcl_resonant_frequency(0.1, 0.5, 0.048) - 15.8114).abs() < 1e-3);
    }

    #[test]
    fn first_order_corner() {
        let tf = RationalTF::new(Poly::constant(1.0), Poly::new(vec![1.0, 1.0])).unwrap();
        let b = bode(&tf, &[1.0 / (2.0 * PI)]).unwrap();
        assert!((b.points[0].mag_db + 3.0103).abs() < 1e-3);
        assert!((b.points[0].phase_deg + 45.0).abs() < 1e-9);
        assert_eq!(b.rhp_pole_count, 0);
    }

    #[test]
    fn pole_on_grid_is_rejected() {
        let tf = RationalTF::new(Poly::constant(1.0), Poly::new(vec![1.0, 0.0, 4.0 * PI * PI])).unwrap();
        assert!(matches!(bode(&tf, &[1.0]), Err(Error::PoleOnGrid { .. })));
    }

    #[test]
    fn phase_is_unwrapped() {
        // triple pole: phase runs continuously to −270°
        let den = Poly::from_roots(&[Complex64::new(-1.0, 0.0); 3]);
        let tf = RationalTF::new(Poly::constant(1.0), den).unwrap();
        let b = bode(&tf, &log_grid(1e-3, 1e2, 200)).unwrap();
        assert!((b.points.last().unwrap().phase_deg + 270.0).abs() < 1.0);
    }

    #[test]
    fn step_response_of_first_order() {
        let tf = RationalTF::new(Poly::constant(2.0), Poly::new(vec![1.0, 2.0])).unwrap();
        let y = tf.step_response(1e-3, 1000).unwrap();
        assert!((y[1000] - (1.0 - (-2.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn no_load_dc_gain_is_zero() {
        let mut c = Case::reference();
        c.inputs.p_st = 0.0;
        c.params.r_g = 0.0;
        let eq = solve_equilibrium(&c).unwrap();
        let t = simplified_tfs(&c, &eq).unwrap();
        assert!(t.g_dcv.abs() < 1e-12);
    }

    #[test]
    fn resonance_polynomial_roots() {
        let mut c = Case::reference();
        c.params.r_g = 0.0;
        let eq = solve_equilibrium(&c).unwrap();
        let rl = rap_open_loop_tf(&c, &eq).unwrap();
        let p = &c.params;
        let wr = p.omega_res();
        for w in [wr + 1.0, wr - 1.0] {
            let s = Complex64::new(0.0, p.omega_n * w);
            assert!(rl.d_lcl.eval(s).norm() < 1e-9 * rl.d_lcl.eval_abs_scale(s));
        }
    }

    #[test]
    fn rap_loop_requires_lossless_line() {
        let c = Case::reference();
        let eq = solve_equilibrium(&c).unwrap();
        assert!(matches!(rap_open_loop_tf(&c, &eq), Err(Error::InvalidParams(_))));
    }
}
