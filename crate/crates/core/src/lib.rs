//! Language-guided animation of a still image through a recurrent residual
//! trajectory in a layered style-latent space.

pub mod animate;
pub mod backend;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod export;
pub mod loss;
pub mod mapper;
pub mod metrics;
pub mod motion;
pub mod params;
pub mod pipeline;
pub mod train;
pub mod types;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
