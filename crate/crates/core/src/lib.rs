pub mod data;
pub mod gradcheck;
mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod seed;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod wiener;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
