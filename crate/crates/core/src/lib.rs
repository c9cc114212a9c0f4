//! Identification of nonlinear vector fields from trajectory samples with a
//! built-in region-of-attraction guarantee.
//!
//! The model is `f(x) = P^{-1} A k(x)` over a derivative-augmented kernel
//! feature map. `A` and the Lyapunov matrix `P` solve one convex conic
//! program whose constraints make `V(x) = x'Px / 2` decrease along `f` on a
//! whole ball around the origin.

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod program;
pub mod registry;
pub mod sampling;
pub mod solver;

pub use dynamics::{integrate, sample_dataset, DataSet, Trajectory, VectorField};
pub use error::{Error, Result};
pub use estimator::{certify_decay, cross_validate, fit, r_squared, rollout_compare, VectorFieldModel};
pub use grid::{GridSet, RegionSpec};
pub use kernels::{Centers, KernelSpec, ScalarKernel};
pub use program::{assemble_program, FitConfig, KKTReport};
pub use solver::{solve, verify_solution, SolveStatus};
