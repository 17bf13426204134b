use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: truncation {left} vs {right}")]
    GridMismatch { left: u32, right: u32 },

    #[error("invalid cutoff N0 = {n0} for truncation N = {n}")]
    InvalidCutoff { n0: u32, n: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mode ({0}, {1}) is not part of the grid")]
    UnknownMode(i32, i32),

    #[error("simulation blew up at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    #[error("hypothesis `{name}` fails: {lhs} > {rhs} is false")]
    Hypothesis { name: String, lhs: f64, rhs: f64 },

    #[error("time {0} is not a node of the time grid")]
    OffGrid(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
