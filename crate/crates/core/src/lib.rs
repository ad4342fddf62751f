//! Post-training quantization, bit-exact integer inference and cycle-level
//! accelerator simulation for softmax-free linear-attention vision transformers.

pub mod diag;
pub mod error;
pub mod exec;
pub mod model;
pub mod quant;
pub mod runtime;
pub mod sim;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use exec::Exec;
pub use tensor::Tensor;
pub use diag::Diagnostics;
