use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state dimension {got} does not match layout dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no convergence in {solver} after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("eigenvalue iteration did not converge: {found} of {n} eigenvalues deflated")]
    EigenNoConvergence { found: usize, n: usize },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("jacobian step check failed: relative discrepancy {discrepancy:.3e} at ({row}, {col})")]
    JacobianInconsistent {
        discrepancy: f64,
        row: usize,
        col: usize,
    },

    #[error("equivalent reactance X_eq = {0:.3e} is singular")]
    SingularXeq(f64),

    #[error("degenerate equilibrium: {0}")]
    DegenerateEquilibrium(String),

    #[error("frequency {freq_hz} Hz lies on a pole")]
    PoleOnGrid { freq_hz: f64 },

    #[error("mode tracking lost for `{param}` (distance ratio {ratio:.3})")]
    ModeTrackingLost { param: String, ratio: f64 },

    #[error("equilibrium lost at {param} = {value}: {reason}")]
    EquilibriumLost {
        param: String,
        value: f64,
        reason: String,
    },

    #[error("tuning failed for {variant}: achieved slow mode {achieved:.3}")]
    TuningFailed { variant: String, achieved: f64 },

    #[error("model is unstable (max real part {max_re:.4})")]
    UnstableModel { max_re: f64 },

    #[error("active damper design infeasible: best margin {best_margin:.3} at k_d = {k_d:.3e}")]
    DesignInfeasible { k_d: f64, best_margin: f64 },

    #[error("simulation diverged at t = {time:.6} s")]
    Diverged { time: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
