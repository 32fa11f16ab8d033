pub mod error;
pub mod field;
pub mod gs;
pub mod metasurface;
pub mod metrics;
pub mod pipeline;
pub mod pfm;
pub mod quantum;
pub mod spad;
pub mod target;

pub use error::{Error, Result};
