pub mod arch;
pub mod classical;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod image;
pub mod metrics;
pub mod scenes;
pub mod train;

pub use error::{Result, SpiError};
pub use image::Image;
