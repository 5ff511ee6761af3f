//! HTTP API and command line for the annotation backend.

pub mod api;
pub mod cli;
pub mod error;
pub mod script;

pub use error::{ApiError, ErrorClass};
