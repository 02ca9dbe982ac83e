use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rotation vector must be non-zero with finite components")]
    ZeroRotation,

    #[error("dominant rotation component is zero or negative ({0})")]
    BadDominantComponent(f64),

    #[error("lattice scan of radius {requested} exceeds budget; largest feasible radius is {feasible}")]
    ScanBudget { requested: u64, feasible: u64 },

    #[error("beta = {beta} outside family range [{lo}, {hi}]")]
    BetaOutOfRange { beta: f64, lo: f64, hi: f64 },

    #[error("direction vector must have unit length (|v| = {0})")]
    NotUnitDirection(f64),

    #[error("finite-time blow-up: step size collapsed between t = {t_low} and t = {t_high}")]
    BlowUp { t_low: f64, t_high: f64 },

    #[error("trajectory escaped the window at t = {time} (x = {x})")]
    Escaped { time: f64, x: f64 },

    #[error("invariant graph did not converge within {iterations} iterations (last sup change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("{role} graph left the section at sweep {iteration}, node {node}")]
    GraphEscaped { role: &'static str, iteration: usize, node: usize },

    #[error("input graph is not invariant: defect {defect:e} exceeds {limit:e}")]
    NotInvariant { defect: f64, limit: f64 },

    #[error("graphs are on different grids or have mismatched roles")]
    GraphMismatch,

    #[error("bisection bracket invalid: {0}")]
    Bracket(String),

    #[error("predicate is not monotone in beta: {0}")]
    NonMonotone(String),

    #[error("family `{0}` does not have the required shape for this operation")]
    WrongFamily(&'static str),

    #[error("bump support straddles the section; try section_offset = {suggested_offset}")]
    BumpStraddlesSection { suggested_offset: f64 },

    #[error("gate precondition violated: {0}")]
    GatePrecondition(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::Escaped { .. }
                | Error::NotConverged { .. }
                | Error::GraphEscaped { .. }
                | Error::NotInvariant { .. }
                | Error::Bracket(_)
                | Error::NonMonotone(_)
        )
    }
}

impl Error {
    /// Process exit status for this failure: 2 for bad input, 3 for
    /// numerical failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 1,
            e if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
