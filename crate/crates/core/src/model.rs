//! Nonlinear averaged model of the single-loop grid-forming converter with an
//! LCL filter, connected to a Thevenin grid, in the converter dq frame.
//!
//! State order is fixed: DC PI integrator, DC-link voltage, GFM frequency,
//! angle to grid, then the optional reactive-control state (`e_rf` or `q_f`),
//! the six LCL/line states and finally the optional damper filter states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{control_gain_mut, system_param_mut, Inputs, RapControl, SystemParams};

pub const XI_DC: usize = 0;
pub const V_DC: usize = 1;
pub const OMEGA: usize = 2;
pub const DELTA: usize = 3;

/// Capacitor-voltage derivative feedback `y = k_d s / (T_d s + 1) · v_dq`,
/// subtracted from the inverter voltage reference on each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Damper {
    Off,
    /// Pure derivative (`T_d = 0`); adds no states.
    Ideal { k_d: f64 },
    /// Derivative with first-order roll-off; adds two states holding `y_d, y_q`.
    Filtered { k_d: f64, t_d: f64 },
}

impl Damper {
    pub fn k_d(&self) -> f64 {
        match *self {
            Damper::Off => 0.0,
            Damper::Ideal { k_d } | Damper::Filtered { k_d, .. } => k_d,
        }
    }

    pub fn has_states(&self) -> bool {
        matches!(self, Damper::Filtered { .. })
    }
}

/// Which reactive-control state, if any, the variant carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlState {
    None,
    VoltageReference,
    FilteredReactivePower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateLayout {
    pub control: ControlState,
    pub damper: bool,
}

impl StateLayout {
    pub fn new(control: &RapControl, damper: &Damper) -> Self {
        let control = match control {
            RapControl::DroopI { .. } | RapControl::Rap { .. } | RapControl::Voltage { .. } => {
                ControlState::VoltageReference
            }
            RapControl::Droop { .. } => ControlState::FilteredReactivePower,
            RapControl::FixedVoltage | RapControl::PureDroop { .. } => ControlState::None,
        };
        Self { control, damper: damper.has_states() }
    }

    pub fn dim(&self) -> usize {
        self.lcl() + 6 + if self.damper { 2 } else { 0 }
    }

    /// Index of `e_rf` or `q_f`.
    pub fn control_index(&self) -> Option<usize> {
        match self.control {
            ControlState::None => None,
            _ => Some(4),
        }
    }

    /// Index of `i_d`; the LCL block is `i_d, i_q, v_d, v_q, i_gd, i_gq`.
    pub fn lcl(&self) -> usize {
        if self.control == ControlState::None {
            4
        } else {
            5
        }
    }

    pub fn i_d(&self) -> usize {
        self.lcl()
    }
    pub fn i_q(&self) -> usize {
        self.lcl() + 1
    }
    pub fn v_d(&self) -> usize {
        self.lcl() + 2
    }
    pub fn v_q(&self) -> usize {
        self.lcl() + 3
    }
    pub fn i_gd(&self) -> usize {
        self.lcl() + 4
    }
    pub fn i_gq(&self) -> usize {
        self.lcl() + 5
    }

    pub fn damper_index(&self) -> Option<usize> {
        self.damper.then(|| self.lcl() + 6)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut n = vec!["xi_dc", "v_dc", "omega", "delta"];
        match self.control {
            ControlState::VoltageReference => n.push("e_rf"),
            ControlState::FilteredReactivePower => n.push("q_f"),
            ControlState::None => {}
        }
        n.extend(["i_d", "i_q", "v_d", "v_q", "i_gd", "i_gq"]);
        if self.damper {
            n.extend(["ad_d", "ad_q"]);
        }
        n
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| *n == name)
    }

    /// Re-expresses `x` in `target` layout: shared states are copied by
    /// name, new states start at zero.
    pub fn remap(&self, x: &[f64], target: &StateLayout) -> Vec<f64> {
        let names = self.names();
        target
            .names()
            .iter()
            .map(|n| names.iter().position(|m| m == n).map_or(0.0, |i| x[i]))
            .collect()
    }
}

/// Algebraic outputs of a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outputs {
    pub p: f64,
    pub q: f64,
    /// Capacitor voltage magnitude.
    pub v: f64,
    pub v_dc: f64,
    pub omega: f64,
    /// Inverter voltage after damper correction.
    pub e_d: f64,
    pub e_q: f64,
    /// Voltage-reference magnitude from the reactive control.
    pub e_rf: f64,
    pub i_dc: f64,
}

/// Grid voltage seen in the converter frame: `V_g e^{-jδ}` for a grid phasor `V_g`.
pub fn grid_voltage_dq(grid: Complex64, delta: f64) -> Complex64 {
    grid * Complex64::from_polar(1.0, -delta)
}

/// A fully specified model instance: parameters, control, damper and inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub params: SystemParams,
    pub control: RapControl,
    #[serde(default = "damper_off")]
    pub damper: Damper,
    pub inputs: Inputs,
}

fn damper_off() -> Damper {
    Damper::Off
}

impl Case {
    pub fn new(params: SystemParams, control: RapControl, damper: Damper, inputs: Inputs) -> Self {
        Self { params, control, damper, inputs }
    }

    /// Reference case: nominal parameters, droop-I control, `P_st = 0.5`.
    pub fn reference() -> Self {
        Self::new(SystemParams::reference(), RapControl::reference(), Damper::Off, Inputs::default())
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(&self.control, &self.damper)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.control.validate()?;
        match self.damper {
            Damper::Off => {}
            Damper::Ideal { k_d } => {
                if !(k_d >= 0.0 && k_d.is_finite()) {
                    return Err(Error::InvalidParams(format!("k_d must be nonnegative, got {k_d}")));
                }
            }
            Damper::Filtered { k_d, t_d } => {
                if !(k_d >= 0.0 && k_d.is_finite()) || !(t_d > 0.0 && t_d.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "damper needs k_d >= 0 and t_d > 0, got k_d = {k_d}, t_d = {t_d}"
                    )));
                }
            }
        }
        if !self.inputs.p_st.is_finite() {
            return Err(Error::InvalidParams("p_st must be finite".into()));
        }
        Ok(())
    }

    pub fn with_damper(&self, damper: Damper) -> Self {
        Self { damper, ..self.clone() }
    }

    pub fn with_control(&self, control: RapControl) -> Self {
        Self { control, ..self.clone() }
    }

    /// Reads a named parameter (see [`crate::params::PARAMETER_NAMES`]).
    pub fn get(&self, name: &str) -> Result<f64> {
        let mut c = self.clone();
        c.slot(name).map(|v| *v)
    }

    /// Writes a named parameter. Damper gains on a disabled damper are rejected.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        *self.slot(name)? = value;
        Ok(())
    }

    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        c.set(name, value)?;
        Ok(c)
    }

    fn slot(&mut self, name: &str) -> Result<&mut f64> {
        if name == "p_st" {
            return Ok(&mut self.inputs.p_st);
        }
        if let Some(v) = system_param_mut(&mut self.params, name) {
            return Ok(v);
        }
        if let Some(v) = control_gain_mut(&mut self.control, name) {
            return Ok(v);
        }
        match (&mut self.damper, name) {
            (Damper::Ideal { k_d }, "k_d") | (Damper::Filtered { k_d, .. }, "k_d") => Ok(k_d),
            (Damper::Filtered { t_d, .. }, "t_d") => Ok(t_d),
            _ => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<StateLayout> {
        let layout = self.layout();
        if x.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), got: x.len() });
        }
        Ok(layout)
    }

    /// Voltage-reference magnitude produced by the reactive control.
    fn e_ref(&self, layout: &StateLayout, x: &[f64], q: f64) -> f64 {
        let p = &self.params;
        match self.control {
            RapControl::DroopI { .. } | RapControl::Rap { .. } | RapControl::Voltage { .. } => {
                x[layout.control_index().unwrap()]
            }
            RapControl::FixedVoltage => p.v_st,
            RapControl::Droop { k_droop, .. } => {
                p.v_st + k_droop * (p.q_st - x[layout.control_index().unwrap()])
            }
            RapControl::PureDroop { k_droop } => p.v_st + k_droop * (p.q_st - q),
        }
    }

    /// Capacitor-voltage derivatives, which do not depend on the inverter voltage.
    fn cap_derivatives(&self, layout: &StateLayout, x: &[f64]) -> (f64, f64) {
        let p = &self.params;
        let w = x[OMEGA];
        let (id, iq, vd, vq, igd, igq) = (
            x[layout.i_d()],
            x[layout.i_q()],
            x[layout.v_d()],
            x[layout.v_q()],
            x[layout.i_gd()],
            x[layout.i_gq()],
        );
        let k = p.omega_n / p.c_f;
        (k * (id - igd + w * p.c_f * vq), k * (iq - igq - w * p.c_f * vd))
    }

    /// Damper output `(y_d, y_q)`.
    fn damper_output(&self, layout: &StateLayout, x: &[f64], dv: (f64, f64)) -> (f64, f64) {
        match self.damper {
            Damper::Off => (0.0, 0.0),
            Damper::Ideal { k_d } => (k_d * dv.0, k_d * dv.1),
            Damper::Filtered { .. } => {
                let i = layout.damper_index().unwrap();
                (x[i], x[i + 1])
            }
        }
    }

    pub fn outputs(&self, x: &[f64]) -> Result<Outputs> {
        let layout = self.check_dim(x)?;
        Ok(self.outputs_unchecked(&layout, x))
    }

    fn outputs_unchecked(&self, layout: &StateLayout, x: &[f64]) -> Outputs {
        let (id, iq, vd, vq, igd, igq) = (
            x[layout.i_d()],
            x[layout.i_q()],
            x[layout.v_d()],
            x[layout.v_q()],
            x[layout.i_gd()],
            x[layout.i_gq()],
        );
        // p + jq = (v_d + j v_q)(i_gd − j i_gq)
        let p = vd * igd + vq * igq;
        let q = vq * igd - vd * igq;
        let v = vd.hypot(vq);
        let e_rf = self.e_ref(layout, x, q);
        let dv = self.cap_derivatives(layout, x);
        let (yd, yq) = self.damper_output(layout, x, dv);
        let e_d = e_rf - yd;
        let e_q = -yq;
        let v_dc = x[V_DC];
        Outputs {
            p,
            q,
            v,
            v_dc,
            omega: x[OMEGA],
            e_d,
            e_q,
            e_rf,
            i_dc: (e_d * id + e_q * iq) / v_dc,
        }
    }

    /// Right-hand side `ẋ = f(x, u)`.
    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let layout = self.check_dim(x)?;
        if dx.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: dx.len() });
        }
        let v_dc = x[V_DC];
        if !(v_dc > 0.0) {
            return Err(Error::Domain(format!("v_dc must be positive, got {v_dc}")));
        }
        let p = &self.params;
        let wn = p.omega_n;
        let w = x[OMEGA];
        let delta = x[DELTA];
        let (id, iq, vd, vq, igd, igq) = (
            x[layout.i_d()],
            x[layout.i_q()],
            x[layout.v_d()],
            x[layout.v_q()],
            x[layout.i_gd()],
            x[layout.i_gq()],
        );
        let out = self.outputs_unchecked(&layout, x);
        debug_assert!(
            (out.i_dc * v_dc - (Complex64::new(out.e_d, out.e_q) * Complex64::new(id, -iq)).re)
                .abs()
                <= 1e-12 * (1.0 + (out.e_d * id).abs() + (out.e_q * iq).abs())
        );

        // DC link with ideal machine-side current source
        let i_wdc = p.k_pdc * (p.v_dcst - v_dc) + p.k_idc * x[XI_DC];
        dx[XI_DC] = p.v_dcst - v_dc;
        dx[V_DC] = wn / p.c_dc * (i_wdc - out.i_dc);

        // active-power swing and angle to grid
        dx[OMEGA] = (self.inputs.p_st - out.p - p.d_p * (w - p.omega_st)) / (2.0 * p.h);
        dx[DELTA] = wn * (w - p.omega_g);

        if let Some(ci) = layout.control_index() {
            dx[ci] = match self.control {
                RapControl::DroopI { d_q, k_q } => k_q * (p.q_st - out.q + d_q * (p.v_st - out.v)),
                RapControl::Rap { k_q } => k_q * (p.q_st - out.q),
                RapControl::Voltage { k_v } => k_v * (p.v_st - out.v),
                RapControl::Droop { t_q, .. } => (out.q - x[ci]) / t_q,
                RapControl::FixedVoltage | RapControl::PureDroop { .. } => unreachable!(),
            };
        }

        let vg = grid_voltage_dq(Complex64::new(p.v_g, 0.0), delta);
        let (dvd, dvq) = self.cap_derivatives(&layout, x);
        let l = layout.lcl();
        dx[l] = wn / p.l_f * (out.e_d - vd + w * p.l_f * iq);
        dx[l + 1] = wn / p.l_f * (out.e_q - vq - w * p.l_f * id);
        dx[l + 2] = dvd;
        dx[l + 3] = dvq;
        dx[l + 4] = wn / p.l_g * (vd - vg.re - p.r_g * igd + w * p.l_g * igq);
        dx[l + 5] = wn / p.l_g * (vq - vg.im - p.r_g * igq - w * p.l_g * igd);

        if let (Damper::Filtered { k_d, t_d }, Some(ai)) = (self.damper, layout.damper_index()) {
            dx[ai] = (k_d * dvd - x[ai]) / t_d;
            dx[ai + 1] = (k_d * dvq - x[ai + 1]) / t_d;
        }
        Ok(())
    }

    pub fn rhs_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut dx = vec![0.0; x.len()];
        self.rhs(x, &mut dx)?;
        Ok(dx)
    }
}
