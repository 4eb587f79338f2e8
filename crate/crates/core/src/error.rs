use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("uncertainty outside the admissible set: spectral norm {0} > 1")]
    OutsideUncertaintySet(f64),

    #[error("epsilon {eps:e} is infeasible: {reason}")]
    InfeasibleEpsilon { eps: f64, reason: String },

    #[error("fixed-point iteration did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("no feasible epsilon found (smallest probed {0:e})")]
    NoFeasibleEpsilon(f64),

    #[error("pair (F, G) is not controllable: controllability rank {rank} < {n}")]
    Uncontrollable { rank: usize, n: usize },

    #[error("tube gain does not stabilize: spectral radius {0} >= 1")]
    UnstableTube(f64),

    #[error("stage constraint polytope is empty")]
    EmptyConstraintSet,

    #[error("robust problem infeasible at the given state")]
    RobustInfeasible,

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("scenario tree too large: {nodes} nodes exceeds the cap of {cap}")]
    TreeTooLarge { nodes: u128, cap: usize },

    #[error("trace has {got} steps but the plan horizon is {need}")]
    TraceTooShort { got: usize, need: usize },

    #[error("{}", fmt_problem(.line, .msg))]
    ProblemFile { line: Option<usize>, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn fmt_problem(line: &Option<usize>, msg: &str) -> String {
    match line {
        Some(l) => format!("problem file, line {l}: {msg}"),
        None => format!("problem file: {msg}"),
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
