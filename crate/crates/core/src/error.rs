use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid mismatch: expected {expected} nodes per side, got {got}")]
    GridMismatch { expected: usize, got: usize },

    /// Gradient left the product cone by more than the allowed tolerance.
    #[error("gradient leaves the product cone at node ({i}, {j}): component {value:.3e} below -{tol:.3e}")]
    ConeViolation { i: usize, j: usize, value: f64, tol: f64 },

    #[error("argument {value} outside domain: {what}")]
    DomainViolation { what: &'static str, value: f64 },

    #[error("ODE singularity at theta = {theta:.6}: |denominator| = {denom:.3e}")]
    SingularityAbort { theta: f64, denom: f64 },

    #[error("non-finite ODE state at theta = {theta:.6}")]
    StepRejected { theta: f64 },

    #[error("region is empty or not connected ({components} components)")]
    NonConnectedDomain { components: usize },

    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("chart inversion failed for {} nodes", nodes.len())]
    ChartInversionFailure { nodes: Vec<(usize, usize)> },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed field file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
