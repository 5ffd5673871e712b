//! Monotone smoothing splines generated by linear systems.
//!
//! A curve `y(t) = Σ η_i ⟨φ_t, φ_{t_i}⟩ + C e^{At} x_0` is fitted to samples
//! `(t_i, α_i)` by minimizing `λ∫u² + Σ w_i (y(t_i) - α_i)²`. Monotonicity
//! `ẏ ≥ 0` on all of `[0, T]` is enforced by a margin `ε` on a uniform grid
//! fine enough that the margin covers the gaps between grid points.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixture;
pub mod kernel;
pub mod linalg;
pub mod problem;
pub mod qpsolve;
pub mod realization;
pub mod spline;

pub use error::{Error, Result};
