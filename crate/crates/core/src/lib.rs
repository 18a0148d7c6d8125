pub mod calculus;
pub mod elliptic;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod norms;
pub mod oracle;
pub mod parabolic;
pub mod penalty;

pub use error::{Error, Result};
