use thiserror::Error;

/// Errors raised by grid construction, solvers and experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("axis {axis} has {nodes} nodes; at least {min} are required")]
    TooFewNodes { axis: usize, nodes: usize, min: usize },

    #[error("multiplier base point {point:?} is not strictly inside the domain")]
    PointOutsideDomain { point: Vec<f64> },

    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),

    #[error("inclusion does not fit inside the domain: {0}")]
    InclusionOutsideDomain(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("grid has {interior} interior nodes, dense eigensolve is limited to {limit}")]
    GridTooLarge { interior: usize, limit: usize },

    #[error("requested {requested} eigenpairs but the interior dimension is {available}")]
    TooManyModes { requested: usize, available: usize },

    #[error("linear solver breakdown: {reason} (relative residual {residual:.3e})")]
    SolverBreakdown { reason: String, residual: f64 },

    #[error("initial data are not admissible: {0}")]
    NotAdmissible(String),

    #[error("empty ensemble: {0}")]
    EmptyEnsemble(String),

    #[error("search range [{lo}, {hi}] does not bracket a minimum")]
    NonBracketing { lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
