use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("ill-conditioned weight (condition number {condition:.3e})")]
    IllConditionedWeight { condition: f64 },
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("positivity violated: minimum eigenvalue {eigenvalue:.6e}")]
    PositivityViolated { eigenvalue: f64 },
    #[error("operator not positive: minimum eigenvalue {eigenvalue:.6e} below floor {floor:.1e}")]
    NotPositive { eigenvalue: f64, floor: f64 },
    #[error("operator not self-adjoint: residual {residual:.3e}")]
    NotSelfAdjoint { residual: f64 },
    #[error("singular resolvent at shift {shift:.6e}")]
    SingularResolvent { shift: f64 },
    #[error("Riccati iteration diverged at step {step} (norm ratio {ratio:.3e})")]
    IterationDiverged { step: usize, ratio: f64 },
    #[error("gap repair failed: clamp perturbation decays only like p = {p:.3}")]
    GapRepairFailed { p: f64 },
    #[error("no convergence: fitted increment exponent {gamma:.4}")]
    NoConvergence { gamma: f64 },
    #[error("bad wavepacket: {0}")]
    BadPacket(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: Box<Error> },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
