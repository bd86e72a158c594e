//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then sweeps the tape in reverse and accumulates exact partial derivatives
//! into each node that requires a gradient. Binary elementwise ops broadcast
//! with the usual trailing-dimension rules.
//!
//! ```
//! use mctd_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).item(), 6.0);
//! ```

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{sigmoid, Graph, Var};
pub use tensor::Tensor;
