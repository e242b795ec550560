//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Models register their weights in a [`ParamStore`], build a fresh
//! [`Graph`] for every forward pass and call [`Graph::backward`] on the scalar
//! loss. Everything runs in 64-bit precision so finite-difference gradient
//! checks are meaningful.

mod check;
mod graph;
mod matrix;
mod params;

pub use check::{sample_gradient_check, GradSample};
pub use graph::{Graph, Var};
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore};
