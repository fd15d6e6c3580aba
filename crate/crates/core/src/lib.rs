pub mod bundle;
pub mod cli;
pub mod convergence;
pub mod error;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod oracles;
pub mod partition;
pub mod pmp;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
