//! Small reverse-mode automatic differentiation engine.
//!
//! Values live on a [`Graph`] that records every primitive executed on it
//! (define-by-run). [`Graph::backward`] replays the record in reverse and
//! leaves gradients on the leaves. Parameters are owned by a [`ParamStore`]
//! and bound to a fresh graph for every training iteration.
//!
//! ```
//! use spi_engine::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::new([1], vec![3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
//! ```

mod error;
mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod params;
mod real;
mod tensor;

pub use error::{EngineError, Result};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use optim::{clip_global_norm, cosine_lr, global_norm, AdamState};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::{numel, Tensor};
