use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("grid validation failed: {0}")]
    Validation(String),
    #[error("grid is not connected")]
    DisconnectedGrid,
    #[error("branch {index} has zero impedance")]
    SingularBranch { index: usize },
    #[error("singular Jacobian at iteration {iteration}")]
    Numerical { iteration: usize },
    #[error("power flow did not converge")]
    NotConverged,
    #[error("negative price {0}")]
    NegativePrice(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid sampler range for {column}: [{min}, {max}]")]
    SamplerRange { column: String, min: f64, max: f64 },
    #[error("generator {generator}: active power {p_mw} MW exceeds apparent capability {s_max_mva} MVA")]
    Capability {
        generator: usize,
        p_mw: f64,
        s_max_mva: f64,
    },
    #[error("infeasible scenario: {0}")]
    InfeasibleSpec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("episode finished; call reset before stepping again")]
    EpisodeFinished,
    #[error("training diverged at step {step}")]
    DivergenceDetected { step: usize },
    #[error("no oracle solution cached for state {0}")]
    OracleMissing(String),
    #[error("oracle optimum {0} is too close to zero for a relative error")]
    DegenerateOracle(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, documents).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Validation(_)
                | Error::Config(_)
                | Error::SamplerRange { .. }
                | Error::InfeasibleSpec(_)
                | Error::DisconnectedGrid
                | Error::SingularBranch { .. }
        )
    }
}
