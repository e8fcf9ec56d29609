use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// H_{r+1} <= 0 where the operator requires it to be positive.
    #[error("precondition violated: H_{order} = {value:e} <= 0{}", vertex.map(|v| format!(" at vertex {v}")).unwrap_or_default())]
    CurvatureNotPositive {
        order: usize,
        value: f64,
        vertex: Option<usize>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-manifold edge ({a}, {b}) shared by {count} faces")]
    NonManifoldEdge { a: usize, b: usize, count: usize },

    #[error("open boundary at edge ({a}, {b})")]
    OpenBoundary { a: usize, b: usize },

    #[error("inconsistent orientation: face {face} traverses edge ({a}, {b}) in the same direction as a neighbour")]
    InconsistentOrientation { face: usize, a: usize, b: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("projection onto the target surface did not converge for vertex {vertex}")]
    Projection { vertex: usize },

    #[error("shape-operator least-squares system is rank deficient on face {face}")]
    RankDeficient { face: usize },

    #[error("factorization breakdown at pivot {pivot} (value {value:e}); try lowering the shift")]
    Factorization { pivot: usize, value: f64 },

    #[error("no convergence after {iterations} iterations; residuals {residuals:?}")]
    NonConvergence { iterations: usize, residuals: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero vector has no Rayleigh quotient")]
    ZeroVector,

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("pointwise domination c_r |A|^(r+2) >= W_r^2 fails at vertex {vertex} (gap {gap:e})")]
    Domination { vertex: usize, gap: f64 },

    #[error("resolvent bound violated for trial {trial} (seed {seed}): slack {slack:e}")]
    BoundViolation { trial: usize, seed: u64, slack: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
