//! Differentiable-stack recurrent recognizers for context-free languages.
//!
//! The crate is organized around a small reverse-mode autodiff tape
//! ([`math::tape`]), a continuous stack memory ([`stack`]), nine recurrent
//! cell families that drive it ([`cells`]), formal-language dataset
//! machinery ([`datagen`]), a BPTT training loop ([`training`]) and
//! whole-string evaluation ([`eval`]).

pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod math;
pub mod stack;
pub mod training;

use std::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor contained NaN/Inf; carries the tensor name.
    NonFinite(String),
    /// Matrix/vector shape mismatch.
    Shape(String),
    /// Invalid configuration or parameters.
    Config(String),
    /// Data generation could not satisfy its constraints.
    Generation(String),
    /// File / parse problems.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Generation(msg) => write!(f, "data generation failed: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
