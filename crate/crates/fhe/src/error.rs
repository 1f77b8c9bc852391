use thiserror::Error;

pub type Result<T> = std::result::Result<T, FheError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FheError {
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("plaintext {value} outside [0, {limit})")]
    Range { value: i64, limit: u64 },
    #[error("noise budget exhausted: magnitude {magnitude:e} >= limit {limit:e}")]
    BudgetExhausted { magnitude: f64, limit: f64 },
    #[error("ciphertexts are incompatible: {0}")]
    Incompatible(String),
    #[error("lookup table has {got} entries, ciphertext needs {expected}")]
    Shape { expected: usize, got: usize },
    #[error("key error: {0}")]
    Key(String),
    #[error("malformed encoding: {0}")]
    Decode(String),
}
