use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected at node {0}")]
    Cycle(usize),
    #[error("node {node} is disconnected: parent {parent} does not exist")]
    UnknownParent { node: usize, parent: usize },
    #[error("duplicate node id {0}")]
    DuplicateId(usize),
    #[error("node ids must be 1..={n}, found {id}")]
    IdOutOfRange { id: usize, n: usize },
    #[error("instance has no nodes")]
    Empty,
    #[error("no source node: every node has a parent")]
    NoSource,
    #[error("multiple source nodes: {0} and {1}")]
    MultipleSources(usize, usize),
    #[error("{field} of node {node} must be positive, got {value}")]
    NonPositive {
        field: &'static str,
        node: usize,
        value: f64,
    },
    #[error("budget must be positive, got {0}")]
    NonPositiveBudget(f64),
    #[error("trivial budget: B = {budget} is not below total cost {total}")]
    TrivialBudget { budget: f64, total: f64 },
    #[error("invalid severity model: {0}")]
    InvalidSeverity(String),
    #[error("value {0} lies outside [0, 1]")]
    Domain(f64),
    #[error("mode undefined for uniform severity")]
    ModeUndefined,
    #[error("plan has {got} levels but the instance has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("instance is not a series system")]
    NotSeries,
    #[error("severity is not uniform; use the envelope or nsa method")]
    NotUniform,
    #[error("closed form is degenerate (zero denominator); use the bisection path")]
    DegenerateSystem,
    #[error("instance too large for the grid oracle: n = {n}, about {estimate:.3e} lattice points")]
    OracleTooLarge { n: usize, estimate: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors meaning "this method does not apply to this instance".
    pub fn is_method_mismatch(&self) -> bool {
        matches!(
            self,
            Error::NotSeries | Error::NotUniform | Error::OracleTooLarge { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
