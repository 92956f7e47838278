//! Error type shared across the simulator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates an invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// A signal-level precondition failed (sample-rate mismatch, template
    /// longer than the received window, and so on).
    #[error("signal error: {0}")]
    Signal(String),

    /// A measured duration cannot come from a valid exchange.
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    /// Trace file could not be decoded; `offset` is the byte position of
    /// the first inconsistency.
    #[error("trace parse error at byte {offset}: {message}")]
    TraceParse { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn signal(msg: impl Into<String>) -> Self {
        Error::Signal(msg.into())
    }
}
