use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("bound violation: {quantity} = {value} outside [{lo}, {hi}]")]
    BoundViolation { quantity: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("infeasible strategy at lap {lap}: {constraint}")]
    InfeasibleStrategy { lap: usize, constraint: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration failure: {reason} (residuals {residuals:?})")]
    Failure { reason: String, residuals: Vec<f64> },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("nlp diverged after {iterations} iterations (violation {violation:e}, stationarity {stationarity:e})")]
    NlpDiverged { iterations: usize, violation: f64, stationarity: f64, best: Vec<f64> },
    #[error("problem is infeasible: {0}")]
    Infeasible(String),
    #[error("time limit reached with gap {gap} s")]
    Timeout { gap: f64, incumbent: Box<crate::minlp::OcpSolution> },
    #[error("enumeration too large: {schedules} schedules")]
    TooLarge { schedules: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite loss at update {update}: {detail}")]
    NonFiniteLoss { update: usize, detail: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("arm `{arm}` failed: {source}")]
    Arm { arm: &'static str, source: OptimizeError },
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}
