mod binio;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod signal;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
