use thiserror::Error;

/// A scenario or parameter set that cannot be simulated.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid topology: need n > 3f, got n={n}, f={f}")]
    Topology { n: usize, f: usize },
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("d={d} ticks does not match (delta+pi)(1+rho)={product}")]
    InconsistentD { d: i64, product: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Reading or writing a trace failed.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

/// A simulation aborted before reaching its horizon.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event queue exceeded {0} entries")]
    QueueOverflow(usize),
}

/// A history query reached further back than the cell retains.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("look-back of {requested} ticks exceeds retained horizon of {horizon}")]
pub struct HorizonError {
    pub requested: i64,
    pub horizon: i64,
}
