pub mod cli;
pub mod config;
pub mod data;
pub mod doubly_robust;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
mod linalg;
pub mod outcome_bridge;
pub mod pipeline;
pub mod ridge;
pub mod treatment_bridge;

pub use error::{Error, Result};
pub use faer;
