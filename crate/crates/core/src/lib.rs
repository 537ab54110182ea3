//! Training-side machinery for multi-regime Gaussian splatting at desk scale.

pub mod diagnostics;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod reconcile;
pub mod render;
pub mod sampler;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
