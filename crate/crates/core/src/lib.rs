//! Randomized submanifold subgradient methods on the Stiefel manifold.
//!
//! The crate is organized bottom-up: dense kernels ([`matrix`]), manifold
//! geometry ([`stiefel`]), column blocks ([`blocks`]), the averaging operator
//! used in the analysis ([`averaging`]), the solvers ([`solvers`]), test
//! problems ([`problems`]) and numerical certificates ([`diagnostics`]).

pub mod averaging;
pub mod blocks;
pub mod diagnostics;
pub mod error;
pub mod flops;
pub mod matrix;
pub mod problems;
pub mod rng;
pub mod solvers;
pub mod stiefel;

pub use error::{Error, Result};
pub use flops::FlopCounter;
pub use matrix::DenseMatrix;
pub use rng::Rng64;
pub use stiefel::{StiefelPoint, TangentVector};
