//! Reparametrized gradient flow on linear models and the Bregman-projection
//! characterization of its limit.
//!
//! The flow `w′ = −∇L(ρ_link(A ρ(w)), y)` is integrated in parameter space;
//! its image `w̃ = ρ(w)` is compared against independent constrained solvers
//! and against the inequalities that govern its convergence.

pub mod bias;
pub mod cli;
pub mod flow;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod problem;
pub mod reparam;
pub mod selfcheck;
pub mod verify;

pub use linalg::{sigma_min_nonzero, Matrix, SpectralInfo};
pub use model::{LinkKind, LossKind};
pub use problem::ProblemInstance;
pub use reparam::{PotentialValue, ReparamFamily};
