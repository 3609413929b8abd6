use thiserror::Error;

/// Errors raised across the learning, synthesis and control pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionError(String),

    #[error("integration diverged (non-finite state)")]
    IntegrationDiverged,

    #[error("observable `{name}` returned a non-finite value")]
    LiftFailed { name: String },

    #[error("dictionary is not norm bounding: |x| = {x_norm} > |Phi(x) - Phi(0)| = {lift_norm}")]
    DictionaryNotNormBounding { x_norm: f64, lift_norm: f64 },

    #[error("sampling failed: {discarded} of {requested} samples diverged")]
    SamplingFailed { discarded: usize, requested: usize },

    #[error("regression failed: {0}")]
    FitFailed(String),

    #[error("prediction diverged at step {step}")]
    PredictionDiverged { step: usize },

    #[error("validation failed: {0}")]
    ValidationFailed(String),

    #[error("terminal ingredients invalid: {0}")]
    SynthesisInvalid(String),

    #[error("terminal synthesis failed: {0}")]
    SynthesisFailed(String),

    #[error("terminal region collapsed below level {c_min}")]
    TerminalRegionEmpty { c_min: f64 },

    #[error("terminal controller matrix is singular at x = {x:?}")]
    ControllerSingular { x: Vec<f64> },

    #[error("state {x:?} lies outside the terminal region")]
    OutsideTerminalRegion { x: Vec<f64> },

    #[error("tightening margin {margin} exceeds box half-width {half_width} at step {step}")]
    InfeasibleTightening {
        step: usize,
        margin: f64,
        half_width: f64,
    },

    #[error("optimal control solver diverged: {0}")]
    SolverDiverged(String),

    #[error("no feasible input sequence found at step {step}")]
    FeasibilityLost { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
