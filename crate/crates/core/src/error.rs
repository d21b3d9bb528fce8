use thiserror::Error;

/// Errors surfaced by grid construction, drivers and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("refinement would exceed the {max}-step cap")]
    RefinementOverflow { max: usize },
    #[error("path tree backend is capped at {cap} steps, requested {steps}")]
    PathTreeTooLarge { steps: usize, cap: usize },
    #[error("monte carlo backend needs at least 2 paths, got {0}")]
    TooFewPaths(usize),
    #[error("node function lives at step {found}, step {expected} required")]
    StepMismatch { expected: usize, found: usize },
    #[error("node function has {found} values, {expected} required")]
    NodeCountMismatch { expected: usize, found: usize },
    #[error("{0} cannot be represented on the recombining lattice")]
    LatticeUnsupported(String),
    #[error("{0} requires the path tree backend")]
    PathTreeOnly(String),
    #[error("expression error: {0}")]
    Expression(String),
    #[error("generator: {0}")]
    Generator(String),
    #[error("implicit drift step not solvable: dt * L_y = {0} >= 1")]
    ImplicitStepUnsolvable(f64),
    #[error("inner fixed point stalled at step {step}, node {node}, residual {residual:.3e}")]
    InnerFixedPoint {
        step: usize,
        node: usize,
        residual: f64,
    },
    #[error("picard iteration did not converge after {iterations} sweeps, differences {history:?}")]
    PicardDiverged {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("outer m-solution loop did not converge after {iterations} passes, changes {history:?}")]
    OuterDiverged {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("family row {outer}: {source}")]
    FamilyRow {
        outer: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("comparison hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("partition is not nested in the driver grid: {0}")]
    PartitionNotNested(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
