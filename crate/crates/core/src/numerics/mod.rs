//! Dense-tensor numerics: deterministic RNG, tensors and parameter storage,
//! a tape-based reverse-mode autodiff graph, and finite-difference gradient
//! checking.
//!
//! Everything is generic over [`Scalar`] so the same op implementations run
//! in f32 for training and in f64 for gradient verification.

pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use graph::{Gradients, Graph, Var, MASK_FILL};
pub use rng::Rng;
pub use tensor::{ParamId, ParamStore, Scalar, Tensor};
