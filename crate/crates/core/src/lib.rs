//! Locally covariant free Klein–Gordon field theory on 1+1-dimensional
//! lattice spacetimes `I × S¹`.

pub mod algebra;
mod dual;
pub mod deformation;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod states;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
