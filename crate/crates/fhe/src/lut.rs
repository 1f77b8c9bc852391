//! Univariate lookup tables evaluated by programmable bootstrapping.

use crate::error::{FheError, Result};
use crate::params::CryptoParams;

/// A table `T` with `2^input_bits` entries.
///
/// Entries are integers taken modulo the torus message modulus `2p'`, so
/// negative outputs are stored in two's complement on the torus. When the
/// bootstrapped input lies in the upper (padding) half `[p', 2p')`, blind
/// rotation returns `-T[m - p']`; [`LookupTable::eval_residue`] reproduces
/// that exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTable {
    entries: Vec<i64>,
    input_bits: u8,
    output_bits: u8,
}

impl LookupTable {
    pub fn new(entries: Vec<i64>, output_bits: u8) -> Result<Self> {
        let len = entries.len();
        if len == 0 || !len.is_power_of_two() || len > 1 << 16 {
            return Err(FheError::Shape { expected: len.next_power_of_two().max(1), got: len });
        }
        Ok(Self { input_bits: len.trailing_zeros() as u8, entries, output_bits })
    }

    pub fn from_fn<F: Fn(u64) -> i64>(input_bits: u8, output_bits: u8, f: F) -> Self {
        let entries = (0..1u64 << input_bits).map(f).collect();
        Self { entries, input_bits, output_bits }
    }

    pub fn identity(bits: u8) -> Self {
        Self::from_fn(bits, bits, |m| m as i64)
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }

    pub fn input_bits(&self) -> u8 {
        self.input_bits
    }

    /// Plaintext space of bootstrapped outputs.
    pub fn output_bits(&self) -> u8 {
        self.output_bits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `T[m mod 2^input_bits]`.
    pub fn apply(&self, m: u64) -> i64 {
        self.entries[(m as usize) & (self.entries.len() - 1)]
    }

    /// Output residue in `Z_{2p'}` for an input residue in `Z_{2p'}`,
    /// including the negacyclic sign flip of the upper half.
    pub fn eval_residue(&self, params: &CryptoParams, residue: u64) -> u64 {
        let p = params.message_modulus();
        let modulus = params.torus_modulus();
        let r = residue % modulus;
        let v = if r < p { self.apply(r) } else { self.apply(r - p).wrapping_neg() };
        (v as u64) & (modulus - 1)
    }

    /// Test polynomial for blind rotation: coefficient `j` holds `Δ·T[box]`
    /// with `box = j / (N / p')`.
    pub fn negacyclic_encoding(&self, params: &CryptoParams) -> Vec<u64> {
        let n = params.ring_dim;
        let per_box = n / params.message_modulus() as usize;
        let delta = params.delta();
        (0..n).map(|j| (self.apply((j / per_box) as u64) as u64).wrapping_mul(delta)).collect()
    }
}
