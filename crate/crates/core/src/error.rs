use std::path::PathBuf;

/// Errors raised by mesh construction, material evaluation, assembly and the flow solver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    /// `J(F) = det(FᵀF)` fell below the degeneracy floor. `element` is
    /// unknown when the density is evaluated outside of assembly.
    #[error(
        "degenerate element{}: J = {j:e}",
        .element.map(|e| format!(" {e}")).unwrap_or_default()
    )]
    DegenerateElement { element: Option<usize>, j: f64 },

    #[error("crease segment {segment} is not covered by mesh edges")]
    UnfittedCrease { segment: usize },

    #[error("director field is singular at ({x}, {y})")]
    SingularDirector { x: f64, y: f64 },

    #[error("initializer produced a non-finite value at vertex {vertex}")]
    InvalidInitializer { vertex: usize },

    #[error("matrix is not symmetric positive definite (pivot {pivot})")]
    NotSpd { pivot: usize },

    #[error("linear system is singular")]
    Singular,

    #[error("Newton sub-iteration diverged at iteration {iteration}: {reason}")]
    DivergedNewton { iteration: usize, reason: DivergenceReason },

    #[error("no diverging time step found up to tau = {cap}")]
    NoDivergingTau { cap: f64 },

    #[error("insufficient points for a convergence fit: {0}")]
    InsufficientPoints(usize),

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Why a Newton sub-iteration was declared divergent.
#[derive(Debug, Clone, PartialEq)]
pub enum DivergenceReason {
    /// The system matrix was not SPD, or the factorization failed.
    Factorization(String),
    /// The Newton decrement grew for three consecutive iterations.
    GrowingResidual,
    /// The iteration cap was reached before the decrement test passed.
    IterationCap,
    /// An element degenerated during assembly.
    Degenerate { element: usize, j: f64 },
    /// The discrete energy increased beyond the admissible slack.
    EnergyIncrease { before: f64, after: f64 },
    /// A NaN or infinity appeared in the iterate.
    NonFinite,
}

impl std::fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceReason::Factorization(msg) => write!(f, "factorization failed ({msg})"),
            DivergenceReason::GrowingResidual => write!(f, "decrement grew three times in a row"),
            DivergenceReason::IterationCap => write!(f, "iteration cap reached"),
            DivergenceReason::Degenerate { element, j } => {
                write!(f, "element {element} degenerated (J = {j:e})")
            }
            DivergenceReason::EnergyIncrease { before, after } => {
                write!(f, "energy increased from {before:e} to {after:e}")
            }
            DivergenceReason::NonFinite => write!(f, "non-finite iterate"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
