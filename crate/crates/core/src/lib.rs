pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tempdrop;
pub mod trainer;
pub mod uq;

pub use error::{Error, ErrorKind, Result};
