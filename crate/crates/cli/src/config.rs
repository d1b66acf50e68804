//! JSON run configuration: one schema for every subcommand.

use std::collections::BTreeMap;
use std::path::Path;

use gfm_core::sim::Event;
use gfm_core::{AdDesignSpec, Case, Damper, Inputs, RankOptions, RapControl};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_HELP: &str = r#"Configuration file (JSON, every key optional):
{
  "control":  {"variant": "droop_i", "d_q": 10, "k_q": 4},   // or rap, fixed_voltage, voltage, droop, pure_droop
  "damper":   {"mode": "filtered", "k_d": 4.2e-6, "t_d": 1.0e-4},  // or {"mode": "off"}, {"mode": "ideal", "k_d": ...}
  "omega_r":  1.0,                       // rotor speed; sets p_st through the MPPT map
  "params":   {"l_g": 0.2, "k_q": 4, "p_st": 0.5},   // any name from the parameter list, applied last
  "locus":    {"param": "k_q", "from": 4, "to": 11, "points": 40},
  "sweep":    {"param": "l_g", "from": 0.2, "to": 0.5, "points": 40},
  "bode":     {"loop": "g_q", "f_min": 1, "f_max": 5000, "points": 400},  // g_q, g_q_sim, g_p_sim, g_dc_sim
  "sim":      {"duration": 4, "dt": 1e-5, "record": ["p", "q"], "record_stride": 1,
               "events": [{"time": 1, "action": "set", "target": "p_st", "value": 0.8}],
               "envelope": {"signal": "q", "from": 1.1, "to": 1.4, "band": [400, 1400],
                            "decay_after": 2.4, "decay_limit": 1e-3},
               "compare_simplified": false},
  "design_ad":   {"rap_mode_target": -110, "l_g_max": 0.5, "margin": -10},
  "rank_rap":    {"target": -40, "tolerance": 1, "d_q": 10, "droop_gain": 0.1},
  "sensitivity": {"params": ["l_g", "l_f", "k_q"], "rel_step": 0.01},
  "kqp":         {"k_d_max": 1e-5, "t_d": 1e-4, "r_v_max": 0.05, "points": 20}
}"#;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub control: Option<RapControl>,
    pub damper: Option<Damper>,
    pub omega_r: Option<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub locus: RangeSection,
    #[serde(default = "RangeSection::sweep_default")]
    pub sweep: RangeSection,
    #[serde(default)]
    pub bode: BodeSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub design_ad: DesignSection,
    #[serde(default)]
    pub rank_rap: RankSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub kqp: KqpSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSection {
    pub param: String,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl Default for RangeSection {
    fn default() -> Self {
        Self { param: "k_q".into(), from: 4.0, to: 11.0, points: 40 }
    }
}

impl RangeSection {
    fn sweep_default() -> Self {
        Self { param: "l_g".into(), from: 0.2, to: 0.5, points: 40 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodeSection {
    #[serde(rename = "loop")]
    pub loop_name: String,
    pub f_min: f64,
    pub f_max: f64,
    pub points: usize,
}

impl Default for BodeSection {
    fn default() -> Self {
        Self { loop_name: "g_q".into(), f_min: 1.0, f_max: 5000.0, points: 400 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSection {
    #[serde(default = "default_signal")]
    pub signal: String,
    pub from: f64,
    pub to: f64,
    pub band: (f64, f64),
    pub decay_after: Option<f64>,
    #[serde(default = "default_decay_limit")]
    pub decay_limit: f64,
}

fn default_signal() -> String {
    "q".into()
}

fn default_decay_limit() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<Event>,
    pub record: Option<Vec<String>>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    pub envelope: Option<EnvelopeSection>,
    /// Compare every DC-voltage, active- and reactive-power set-point step
    /// with the simplified closed loops.
    #[serde(default)]
    pub compare_simplified: bool,
}

fn default_stride() -> usize {
    1
}

impl Default for SimSection {
    fn default() -> Self {
        Self { duration: 1.0, dt: 1e-5, events: Vec::new(), record: None, record_stride: 1, envelope: None, compare_simplified: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub rap_mode_target: f64,
    pub l_g_max: f64,
    pub margin: f64,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = AdDesignSpec::default();
        Self { rap_mode_target: d.rap_mode_target, l_g_max: d.l_g_max, margin: d.margin }
    }
}

impl DesignSection {
    pub fn spec(&self) -> AdDesignSpec {
        AdDesignSpec { rap_mode_target: self.rap_mode_target, l_g_max: self.l_g_max, margin: self.margin }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub target: f64,
    pub tolerance: f64,
    pub d_q: f64,
    pub droop_gain: f64,
}

impl Default for RankSection {
    fn default() -> Self {
        let r = RankOptions::default();
        Self { target: r.target, tolerance: r.tolerance, d_q: r.d_q, droop_gain: r.droop_gain }
    }
}

impl RankSection {
    pub fn options(&self) -> RankOptions {
        RankOptions { target: self.target, tolerance: self.tolerance, d_q: self.d_q, droop_gain: self.droop_gain }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub params: Vec<String>,
    pub rel_step: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            params: ["l_g", "l_f", "k_q", "k_pdc", "k_idc", "h", "d_p"].iter().map(|s| s.to_string()).collect(),
            rel_step: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KqpSection {
    pub k_d_max: f64,
    /// Filter time constant; defaults to the corner rule at the nominal resonance.
    pub t_d: Option<f64>,
    pub r_v_max: f64,
    pub points: usize,
}

impl Default for KqpSection {
    fn default() -> Self {
        Self { k_d_max: 1e-5, t_d: None, r_v_max: 0.05, points: 20 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}\n\n{SCHEMA_HELP}", path.display())))
    }

    /// Reference case with the configured overrides applied.
    pub fn case(&self) -> Result<Case, CliError> {
        let mut case = Case::reference();
        if let Some(c) = &self.control {
            case.control = c.clone();
        }
        if let Some(d) = self.damper {
            case.damper = d;
        }
        if let Some(w) = self.omega_r {
            case.inputs = Inputs::from_rotor_speed(w, &case.params);
        }
        for (name, value) in &self.params {
            case.set(name, *value).map_err(|e| CliError::Usage(format!("params.{name}: {e}")))?;
        }
        case.validate().map_err(|e| CliError::Usage(format!("invalid parameters: {e}")))?;
        Ok(case)
    }
}
