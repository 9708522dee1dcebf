//! Dense shape correspondence with functional maps.

pub mod error;
pub mod evalbench;
pub mod features;
pub mod funcmap;
pub mod geodesics;
pub mod mesh;
pub mod pipeline;
pub mod sparse;
pub mod spectral;
pub mod transfer;

pub use error::{Error, ErrorKind, Result};
