//! Deciding and synthesizing deadlock-avoiding local control strategies
//! for lock-sharing systems of communicating finite-state processes.

pub mod annotate;
pub mod error;
pub mod model;
pub mod oracle;
pub mod patterns2;
pub mod lockgraph;
pub mod exclusive;
pub mod nested;
pub mod initown;
pub mod generators;
pub mod strategy;

pub use error::{Error, Result};
