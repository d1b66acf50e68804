//! Small-signal and time-domain analysis of a single-loop grid-forming
//! wind-turbine converter with an LCL filter on an infinite bus.

pub mod damping;
pub mod equilibrium;
pub mod error;
pub mod freq;
pub mod linalg;
pub mod model;
pub mod params;
pub mod poly;
pub mod sim;
pub mod smallsig;
pub mod sweeps;

pub use equilibrium::{reduced_steady_state, solve_equilibrium, Equilibrium, ReducedSteadyState};
pub use error::{Error, Result};
pub use freq::{bode, lcl_resonant_frequency, rap_open_loop_tf, simplified_tfs, RationalTF};
pub use model::{Case, Damper, StateLayout};
pub use params::{mppt_setpoint, Inputs, RapControl, SystemParams};
pub use poly::Poly;
pub use smallsig::{analyze, linearize, sensitivity, ModeClass, ModeReport, StateSpaceModel};
pub use damping::{apply_ad, design_ad, AdConfig, AdDesign, AdDesignSpec};
pub use sim::{envelope_metrics, simulate, Event, Scenario, TimeSeries};
pub use sweeps::{coupling_gain_kqp, rank_rap_strategies, root_locus, LocusResult, RankOptions};
