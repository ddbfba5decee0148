//! Robust interior point method for empirical risk minimization with
//! adaptive leverage-score sparsification.
//!
//! The crate is organised bottom-up: [`linalg`] and [`sketch`] provide dense
//! kernels and randomized sketches, [`levscore`] and [`dynsparsifier`] maintain
//! leverage-score overestimates under adversarial updates, [`barrier`] holds the
//! self-concordant barriers, [`maintenance`] keeps the lazily updated primal and
//! slack approximations, and [`ipm`] runs the short-step method. [`frontend`]
//! converts primal ERM problems and handles instance files.

pub mod barrier;
pub mod dynsparsifier;
pub mod error;
pub mod frontend;
pub mod ipm;
pub mod levscore;
pub mod linalg;
pub mod maintenance;
pub mod rng;
pub mod sketch;

pub use error::{ErmError, Result};
pub use linalg::DenseMatrix;
