//! Per-unit system parameters, reactive-power control variants and inputs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wind-turbine aerodynamic constants for the maximum-power-point map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpptParams {
    /// Air density, kg/m³.
    pub rho: f64,
    /// Blade length, m.
    pub r_blade: f64,
    /// Optimal power coefficient.
    pub c_opt: f64,
    /// Optimal tip-speed ratio.
    pub lambda_opt: f64,
}

/// Physical and control constants of the converter, its LCL filter and the
/// Thevenin grid. Everything is per unit except the bases (SI), `h` (s) and
/// `omega_n` (rad/s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Power base, W.
    pub s_n: f64,
    /// AC voltage base, V line-to-line RMS.
    pub v_n: f64,
    /// Nominal frequency, Hz.
    pub f_n: f64,
    /// DC voltage base, V.
    pub v_dcn: f64,
    /// Filter capacitor.
    pub c_f: f64,
    /// Inverter-side inductor.
    pub l_f: f64,
    /// Grid-side inductor plus line.
    pub l_g: f64,
    /// Line resistance.
    pub r_g: f64,
    /// DC-link capacitor.
    pub c_dc: f64,
    /// Inertia constant, s.
    pub h: f64,
    /// Active-power damping.
    pub d_p: f64,
    /// Nominal angular frequency, rad/s.
    pub omega_n: f64,
    pub omega_g: f64,
    pub v_g: f64,
    pub omega_st: f64,
    pub q_st: f64,
    pub v_st: f64,
    pub v_dcst: f64,
    pub k_pdc: f64,
    pub k_idc: f64,
    pub mppt: MpptParams,
}

impl SystemParams {
    /// The 5 MW / 690 V / 50 Hz reference turbine.
    pub fn reference() -> Self {
        let l_g = 0.2;
        Self {
            s_n: 5.0e6,
            v_n: 690.0,
            f_n: 50.0,
            v_dcn: 1200.0,
            c_f: 0.048,
            l_f: 0.1,
            l_g,
            r_g: Self::resistance_from_xr(l_g, 6.0),
            c_dc: 27.0,
            h: 0.5,
            d_p: 50.0,
            omega_n: 2.0 * PI * 50.0,
            omega_g: 1.0,
            v_g: 1.0,
            omega_st: 1.0,
            q_st: 0.0,
            v_st: 1.0,
            v_dcst: 1.0,
            k_pdc: 3.8,
            k_idc: 63.8,
            mppt: MpptParams {
                rho: 1.2,
                r_blade: 63.0,
                c_opt: 0.44,
                lambda_opt: 7.0,
            },
        }
    }

    /// Line resistance for a given reactance and X/R ratio.
    pub fn resistance_from_xr(x: f64, xr_ratio: f64) -> f64 {
        x / xr_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("s_n", self.s_n),
            ("v_n", self.v_n),
            ("f_n", self.f_n),
            ("v_dcn", self.v_dcn),
            ("c_f", self.c_f),
            ("l_f", self.l_f),
            ("l_g", self.l_g),
            ("c_dc", self.c_dc),
            ("h", self.h),
            ("omega_n", self.omega_n),
            ("v_dcst", self.v_dcst),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let finite = [
            ("r_g", self.r_g),
            ("d_p", self.d_p),
            ("v_g", self.v_g),
            ("q_st", self.q_st),
            ("v_st", self.v_st),
            ("k_pdc", self.k_pdc),
            ("k_idc", self.k_idc),
            ("omega_st", self.omega_st),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite")));
            }
        }
        if self.r_g < 0.0 {
            return Err(Error::InvalidParams(format!("r_g must be nonnegative, got {}", self.r_g)));
        }
        if !(0.9..=1.1).contains(&self.omega_g) {
            return Err(Error::InvalidParams(format!(
                "omega_g = {} outside the [0.9, 1.1] p.u. operating range",
                self.omega_g
            )));
        }
        Ok(())
    }

    /// LCL resonant frequency in p.u. of `omega_n`.
    pub fn omega_res(&self) -> f64 {
        crate::freq::lcl_resonant_frequency(self.l_f, self.l_g, self.c_f)
    }

    /// LCL resonant frequency in Hz.
    pub fn f_res_hz(&self) -> f64 {
        self.omega_n * self.omega_res() / (2.0 * PI)
    }

    /// Series equivalent reactance of the LCL network, with the capacitor
    /// entering as a per-unit susceptance.
    pub fn x_eq(&self) -> f64 {
        self.l_f + self.l_g - self.c_f * self.l_f * self.l_g
    }
}

/// Maximum-power-point active-power set-point (p.u.) for rotor speed `omega_r` (rad/s).
pub fn mppt_setpoint(omega_r: f64, params: &SystemParams) -> f64 {
    let m = &params.mppt;
    let r = m.r_blade;
    0.5 * m.rho * PI * r * r * m.c_opt * (omega_r.powi(3) * r.powi(3)) / m.lambda_opt.powi(3)
        / params.s_n
}

/// Rotor speed giving the requested MPPT set-point; inverse of [`mppt_setpoint`].
pub fn mppt_rotor_speed(p_st: f64, params: &SystemParams) -> f64 {
    let at_unit_speed = mppt_setpoint(1.0, params);
    (p_st / at_unit_speed).cbrt()
}

/// Reactive-power / voltage control structure producing the voltage-reference magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum RapControl {
    /// `(1/k_q) ė = Q_st − q + D_q (V_st − V)`
    DroopI { d_q: f64, k_q: f64 },
    /// `ė = k_q (Q_st − q)`
    Rap { k_q: f64 },
    /// `e ≡ V_st`
    FixedVoltage,
    /// `ė = k_v (V_st − V)`
    Voltage { k_v: f64 },
    /// `T_q q̇_f = q − q_f`, `e = V_st + k_droop (Q_st − q_f)`
    Droop { k_droop: f64, t_q: f64 },
    /// `e = V_st + k_droop (Q_st − q)`
    PureDroop { k_droop: f64 },
}

impl RapControl {
    pub fn reference() -> Self {
        RapControl::DroopI { d_q: 10.0, k_q: 4.0 }
    }

    /// Short label used in reports, matching the (a)–(f) lettering.
    pub fn label(&self) -> &'static str {
        match self {
            RapControl::DroopI { .. } => "(a) droop-I",
            RapControl::Rap { .. } => "(b) RAP",
            RapControl::FixedVoltage => "(c) fixed voltage",
            RapControl::Voltage { .. } => "(d) voltage",
            RapControl::Droop { .. } => "(e) droop",
            RapControl::PureDroop { .. } => "(f) pure droop",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gains: Vec<(&str, f64)> = match *self {
            RapControl::DroopI { d_q, k_q } => vec![("d_q", d_q), ("k_q", k_q)],
            RapControl::Rap { k_q } => vec![("k_q", k_q)],
            RapControl::FixedVoltage => vec![],
            RapControl::Voltage { k_v } => vec![("k_v", k_v)],
            RapControl::Droop { k_droop, t_q } => {
                if !(t_q > 0.0) {
                    return Err(Error::InvalidParams(format!("t_q must be positive, got {t_q}")));
                }
                vec![("k_droop", k_droop)]
            }
            RapControl::PureDroop { k_droop } => vec![("k_droop", k_droop)],
        };
        for (name, g) in gains {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be nonnegative, got {g}")));
            }
        }
        Ok(())
    }

    fn gain_mut(&mut self, name: &str) -> Option<&mut f64> {
        match (self, name) {
            (RapControl::DroopI { k_q, .. }, "k_q") => Some(k_q),
            (RapControl::DroopI { d_q, .. }, "d_q") => Some(d_q),
            (RapControl::Rap { k_q }, "k_q") => Some(k_q),
            (RapControl::Voltage { k_v }, "k_v") => Some(k_v),
            (RapControl::Droop { k_droop, .. }, "k_droop") => Some(k_droop),
            (RapControl::Droop { t_q, .. }, "t_q") => Some(t_q),
            (RapControl::PureDroop { k_droop }, "k_droop") => Some(k_droop),
            _ => None,
        }
    }
}

/// Exogenous inputs held constant during linearization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    /// Active-power set-point, p.u.
    pub p_st: f64,
}

impl Inputs {
    pub fn new(p_st: f64) -> Self {
        Self { p_st }
    }

    /// Set-point from rotor speed through the MPPT map.
    pub fn from_rotor_speed(omega_r: f64, params: &SystemParams) -> Self {
        Self { p_st: mppt_setpoint(omega_r, params) }
    }
}

impl Default for Inputs {
    fn default() -> Self {
        Self { p_st: 0.5 }
    }
}

/// Names accepted by [`crate::model::Case::get`] / [`crate::model::Case::set`].
pub const PARAMETER_NAMES: &[&str] = &[
    "c_f", "l_f", "l_g", "r_g", "c_dc", "h", "d_p", "omega_g", "v_g", "omega_st", "q_st", "v_st",
    "v_dcst", "k_pdc", "k_idc", "p_st", "k_q", "d_q", "k_v", "k_droop", "t_q", "k_d", "t_d",
];

pub(crate) fn system_param_mut<'a>(p: &'a mut SystemParams, name: &str) -> Option<&'a mut f64> {
    Some(match name {
        "c_f" => &mut p.c_f,
        "l_f" => &mut p.l_f,
        "l_g" => &mut p.l_g,
        "r_g" => &mut p.r_g,
        "c_dc" => &mut p.c_dc,
        "h" => &mut p.h,
        "d_p" => &mut p.d_p,
        "omega_g" => &mut p.omega_g,
        "v_g" => &mut p.v_g,
        "omega_st" => &mut p.omega_st,
        "q_st" => &mut p.q_st,
        "v_st" => &mut p.v_st,
        "v_dcst" => &mut p.v_dcst,
        "k_pdc" => &mut p.k_pdc,
        "k_idc" => &mut p.k_idc,
        _ => return None,
    })
}

pub(crate) fn control_gain_mut<'a>(c: &'a mut RapControl, name: &str) -> Option<&'a mut f64> {
    c.gain_mut(name)
}
