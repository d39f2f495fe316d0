use alloc::string::String;

/// Errors raised by the discretisation and solver layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("topology error: face {face} ({detail})")]
    Topology { face: usize, detail: String },

    #[error("degenerate cell {cell}: sub-triangle of local face {local_face} has area {area:e}")]
    DegenerateCell { cell: usize, local_face: usize, area: f64 },

    #[error("point ({x}, {y}) lies outside the mesh domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("no quadrature rule with exactness degree {0}")]
    UnsupportedDegree(usize),

    #[error("ill-conditioned or singular matrix: {0}")]
    Conditioning(String),

    #[error("linear solve failed ({context}): relative residual {residual:e}")]
    Solver { context: String, residual: f64 },

    #[error("incompatible right-hand side: kernel defect {defect:e}")]
    Incompatible { defect: f64 },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invariant violated at step {step}: {what}")]
    Invariant { step: usize, what: String },

    #[error("unstable time integration at step {step}: |c|^2 = {norm_sq:e} exceeds {limit:e}")]
    Unstable { step: usize, norm_sq: f64, limit: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
