//! Quantized toy LLaMA decoder whose attention heads can be evaluated under
//! fully homomorphic encryption.

pub mod bench;
pub mod circuit;
pub mod enc_attn;
pub mod error;
pub mod model;
pub mod protocol;
pub mod quant;

pub use error::{Error, Result};
