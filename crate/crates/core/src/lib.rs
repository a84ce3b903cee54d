//! Multi-time-step coupling of Newmark subdomains.

pub mod baselines;
pub mod cli;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod newmark;
pub mod problems;
pub mod runner;

pub use error::{Error, Result};
