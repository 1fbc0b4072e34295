pub mod baselines;
pub mod binio;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod retrieval;
pub mod textpipe;
pub mod training;

pub use error::{Error, Result};
