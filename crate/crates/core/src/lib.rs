pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod envs;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod policy;
pub mod rvq;

pub use error::{Error, FormatError, Result};
