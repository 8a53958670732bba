use thiserror::Error;

/// Errors raised across the library. Each variant names the failing entity where possible.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {0} outside [0, 1]")]
    Domain(f64),
    #[error("index {index} outside the admissible range {range}")]
    Range { index: usize, range: String },
    #[error("invalid spline space: {0}")]
    InvalidSpace(String),
    #[error("refinement target does not nest the source: {0}")]
    NotNested(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("edge {edge} is not AS-G1: residual {residual:e}")]
    NotAsG1 { edge: usize, residual: f64 },
    #[error("degenerate gluing data on edge {0}: alpha changes sign")]
    DegenerateGluing(usize),
    #[error("invalid discretisation parameter: {0}")]
    Parameter(String),
    #[error("singular geometry: {0}")]
    SingularGeometry(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("Newton iteration did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize, history: Vec<f64> },
    #[error("arc-length continuation failed: {0}")]
    ArcLength(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("benchmark construction failed: {0}")]
    Factory(String),
    #[error("non-finite result: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
