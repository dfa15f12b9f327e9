//! Numerical toolkit for optimal ∞-quasiconformal immersions `u: Ω ⊆ ℝⁿ → ℝᴺ`.
//!
//! The crate is organised bottom-up: [`tensor_core`] supplies small dense
//! linear algebra, [`dilation_calculus`] the dilation `K` and its derivatives,
//! [`pde_residuals`] the pointwise Euler–Lagrange residuals, and the remaining
//! modules work on sampled maps.

pub mod error;
pub mod sampling;
pub mod tensor_core;
pub mod dilation_calculus;
pub mod pde_residuals;
pub mod analytic_maps;
pub mod grid_domain;
pub mod phase_analysis;
pub mod lp_solver;
pub mod variations;

pub use error::{QcError, Result};
