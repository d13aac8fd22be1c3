//! Spectrum sensing, power allocation and retrieval tooling for studying
//! language-model baselines on wireless tasks.

pub mod detector;
pub mod error;
pub mod harness;
pub mod llm;
pub mod prompting;
pub mod ragstore;
pub mod signal;
pub mod waterfill;

pub use error::{Error, Result};
