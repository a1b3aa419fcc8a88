pub mod error;
pub mod embedding;
pub mod hashing;
pub mod eval;
pub mod head;
pub mod kg;
pub mod pipeline;
pub mod probe;

pub use error::{Error, Result};
