//! Dense row-major `f64` tensors, a dynamic reverse-mode tape and Adam.
//!
//! The tape is rebuilt for every training step: each op is evaluated
//! eagerly when it is recorded, and [`Graph::backward`] walks the records
//! in reverse. Parameters live in a [`ParamSet`] outside the tape so a
//! graph can be dropped and rebuilt without touching optimizer state.
//!
//! ```
//! use tqr_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
//! ```

mod adam;
mod error;
mod gradcheck;
mod graph;
pub mod io;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId, OpKind};
pub use param::{ParamId, ParamSet, Parameter};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
