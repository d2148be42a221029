//! Cooperative target sensing with multiple active IRSs: CRB evaluation and
//! joint transmit/reflective beamforming.

pub mod ao;
pub mod cli;
pub mod convexsolver;
pub mod error;
pub mod fim;
pub mod linalg;
pub mod rbf;
pub mod scenario;
pub mod txbf;

pub use error::{Error, Result};
