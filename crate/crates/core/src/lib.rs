//! Lexicalized TreeCRF for nested named entity recognition.

pub mod chart;
pub mod check;
pub mod cyk;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod losses;
pub mod marginals;
pub mod mask;
pub mod model;
pub mod model_io;
pub mod oracle;
pub mod scorer;
pub mod semiring;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
