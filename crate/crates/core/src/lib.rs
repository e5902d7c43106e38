//! On-the-fly speaker adaptation for frame-level acoustic models.

pub mod am;
pub mod corpus;
pub mod error;
pub mod flhuc;
pub mod frontend;
pub mod io;
pub mod lhuc;
pub mod nn;
#[cfg(feature = "pipeline")]
pub mod pipeline;
pub mod spectral;
pub mod svr;

pub use error::{Error, Result};
