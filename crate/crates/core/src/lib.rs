//! Self-stabilising region sampling of spatial signals on networks of devices.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod runtime;
pub mod sampler;
pub mod seed;
pub mod signals;
pub mod topology;

pub use error::{Error, Result};
