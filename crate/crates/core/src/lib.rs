pub mod certify;
pub mod charfn;
pub mod cli;
pub mod error;
pub mod kernels;
pub mod picard;
pub mod simulate;
pub mod spectrum;
pub mod stationary;

pub use error::{Error, Result};
