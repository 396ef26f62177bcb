//! CMSA for binary integer linear programs.
//!
//! The solver repeatedly builds randomized solutions (optionally guided by
//! constraint propagation), merges their (variable, value) components into a
//! pool, solves the BIP restricted to that pool exactly, and ages out
//! components the restricted optimum did not use.

pub mod cli;
pub mod cmsa;
pub mod construction;
pub mod error;
pub mod lp;
pub mod model;
pub mod mps;
pub mod propagation;
pub mod subsolver;

pub use cmsa::{run, run_subsolver_only, CmsaParams, RunResult, RunStatus};
pub use error::{Error, Result};
pub use model::{BipBuilder, BipInstance, ObjectiveSense, Row, Sense, Solution};
pub use mps::{parse_mps_str, read_mps_file, write_mps, MpsError};
pub use propagation::PropagationState;
