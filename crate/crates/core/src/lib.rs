pub mod autograd;
pub mod cli_io;
pub mod error;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod resample;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
