pub mod autodiff;
pub mod baselines;
pub mod dap;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod nn;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
