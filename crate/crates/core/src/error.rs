use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A matrix left the immersion set `det(PᵀP) > 0`, or a point left a map's domain.
    #[error("domain violation ({set}): {detail}")]
    DomainViolation { set: &'static str, detail: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("finite-difference stencil leaves the grid at node {node}")]
    StencilOutOfDomain { node: usize },

    #[error("rank of the projection changes along the patch at sample {sample}: {from} -> {to}")]
    RankDrift { sample: usize, from: usize, to: usize },

    #[error("variation patch mixes phases: labels {0:?}")]
    PhaseMixed(Vec<usize>),

    #[error("normal frame cannot be continued at {0:?}")]
    FrameDiscontinuity(Vec<f64>),

    #[error("initializer is not an immersion: {0}")]
    Initialization(String),

    #[error("solver stalled at p = {p}, iteration {iteration}: {detail}")]
    SolverStall { p: f64, iteration: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl QcError {
    pub(crate) fn s_plus(detail: impl Into<String>) -> Self {
        QcError::DomainViolation { set: "S+", detail: detail.into() }
    }

    pub(crate) fn map_domain(detail: impl Into<String>) -> Self {
        QcError::DomainViolation { set: "map domain", detail: detail.into() }
    }

    /// True for errors caused by leaving `S⁺` or a map's domain.
    pub fn is_domain_violation(&self) -> bool {
        matches!(self, QcError::DomainViolation { .. })
    }
}

impl From<std::io::Error> for QcError {
    fn from(e: std::io::Error) -> Self {
        QcError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for QcError {
    fn from(e: serde_json::Error) -> Self {
        QcError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QcError>;
