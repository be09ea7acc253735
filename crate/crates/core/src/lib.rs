pub mod adapter;
pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod objectives;
pub mod param;
pub mod prompt;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use param::{Module, Parameter};
pub use tensor::{Gradients, Tensor};
