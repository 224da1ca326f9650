//! Reference reconstructions: differential ghost imaging and ISTA.

mod dct;
mod dgi;
mod ista;

pub use dct::Dct2;
pub use dgi::{dgi_correlation, dgi_reconstruct};
pub use ista::{
    ista_reconstruct, ista_solve, power_iteration, soft_threshold, DenseOp, IstaConfig, IstaImage, IstaResult, Sparsifier,
};
