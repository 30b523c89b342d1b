//! Minimal reverse-mode automatic differentiation over dense, row-major tensors.
//!
//! A [`Graph`] records every operation executed on it together with the values
//! needed to differentiate it. Calling [`Graph::backward`] on a scalar node walks
//! the record in reverse and leaves `∂loss/∂leaf` on every leaf that asked for a
//! gradient. Learned parameters live in a [`ParamSet`] outside of any graph, so
//! several graphs (one per utterance, say) can be evaluated independently and
//! their gradients summed afterwards in a fixed order.
//!
//! The engine is generic over [`Real`], implemented for `f32` (training) and
//! `f64` (finite-difference gradient checking).

mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod real;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, grad_check_fn, Coords, GradCheckReport};
pub use graph::{ConvPadding, Graph, Var};
pub use params::{Gradients, ParamId, ParamSet};
pub use real::Real;
pub use tensor::Tensor;
