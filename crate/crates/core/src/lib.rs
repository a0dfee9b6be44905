//! Finite-horizon distributed controller synthesis in the closed-loop
//! (system-level) parameterization.
//!
//! The crate covers the full design flow for linear time-varying plants
//! controlled over a finite horizon under an information structure:
//!
//! * [`model`]: plants, lifted block operators, the spring-mass chain benchmark.
//! * [`sparsity`]: binary information patterns, quadratic invariance, the
//!   nearest QI superset and sparsity-invariance state patterns.
//! * [`sls`]: closed-loop maps, controller recovery and constraint assembly.
//! * [`conic`]: a small primal-dual interior-point SDP solver.
//! * [`synthesis`]: H2, H-infinity, oracle and spatial-regret synthesis.
//! * [`evaluation`]: costs, regret values, disturbance sampling and the
//!   Monte-Carlo win-rate experiments.

pub mod conic;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod model;
pub mod sls;
pub mod sparsity;
pub mod synthesis;

pub use error::{Error, Result};
pub use model::{BlockLift, CostWeights, Discretization, HorizonSystem};
pub use sls::{ClosedLoopMap, Controller, Provenance};
pub use sparsity::SparsityPattern;
