//! Simulated tempering for mixtures of log-concave distributions, with exact
//! finite-chain and closed-form verification tools.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod finitelab;
pub mod ladder;
pub mod logspace;
pub mod quad;
pub mod rng;
pub mod targets;
pub mod tempering;
pub mod zconst;

pub use error::{Error, Result};
