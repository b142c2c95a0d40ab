//! Distributed hierarchical N-body laboratory.

pub mod error;
pub mod fmm;
pub mod lettree;
pub mod partition;
pub mod protocols;
pub mod runner;
pub mod simnet;
pub mod space;

pub use error::{Error, Result};
