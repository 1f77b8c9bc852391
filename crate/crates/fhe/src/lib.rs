//! Toy-parameter LWE/GLWE homomorphic encryption with programmable
//! bootstrapping and an explicit worst-case noise ledger.
//!
//! None of the parameter sets are secure. They exist to make encrypted
//! transformer experiments small enough to run in tests.

pub mod error;
pub mod eval;
pub mod fft;
pub mod glwe;
pub mod keys;
pub mod keyswitch;
pub mod lut;
pub mod lwe;
pub mod noise;
pub mod params;
pub mod pbs;
pub mod serialize;
pub mod torus;

pub use error::{FheError, Result};
pub use eval::{square_table, ClearCiphertext, ClearEvaluator, Evaluator};
pub use keys::{keygen, peek_role, ClientKey, KeyMaterial, RoleTag, ServerKey};
pub use keyswitch::KeySwitchKey;
pub use lut::LookupTable;
pub use lwe::LweCiphertext;
pub use noise::NoiseEstimate;
pub use params::CryptoParams;
pub use pbs::PbsBackend;
