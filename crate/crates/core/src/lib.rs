//! Structured L1-norm pruning, Jacobian singular value analysis and QR
//! re-orthogonalization of small MNIST networks, plus the experiment
//! harness that trains, prunes and finetunes them.

pub mod data;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod schedule;
pub mod pruning;
pub mod isometry;
pub mod harness;

pub use error::{Error, Result};
