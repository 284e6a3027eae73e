//! Hermite-Sobolev lifting of finite-dimensional SDEs.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod functions;
pub mod hermite;
pub mod lab;
pub mod sde;
pub mod sobolev;
pub mod spde;
pub mod stats;

pub use error::{Error, Result};
