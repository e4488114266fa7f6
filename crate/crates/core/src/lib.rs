//! Simulated distributed full-batch GCN training with sparsity-aware SpMM.

pub mod cli;
pub mod cost;
pub mod error;
pub mod gcn;
pub mod graphgen;
pub mod io;
pub mod partition;
pub mod sim;
pub mod sparse;
pub mod spmm;

pub use error::{Error, Result};
