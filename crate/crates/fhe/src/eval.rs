//! Homomorphic evaluation interface shared by the real evaluator
//! ([`ServerKey`]) and the clear simulator ([`ClearEvaluator`]).
//!
//! Both implement identical plaintext-space and noise bookkeeping, so a
//! circuit that runs under one runs under the other with the same decrypted
//! integers.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{FheError, Result};
use crate::keys::ServerKey;
use crate::lut::LookupTable;
use crate::lwe::{scaled_width, LweCiphertext};
use crate::noise::NoiseEstimate;
use crate::params::CryptoParams;

/// Square table used by quarter-square products: `floor((u - shift)^2 / 4)`.
pub fn square_table(params: &CryptoParams, shift: i64) -> LookupTable {
    let w = params.widened_bits();
    LookupTable::from_fn(w, w, |u| {
        let x = u as i64 - shift;
        (x * x).div_euclid(4)
    })
}

pub trait Evaluator: Sync {
    type Ct: Clone + Send + Sync;

    fn params(&self) -> &CryptoParams;
    fn trivial(&self, value: i64, plaintext_space: u8) -> Self::Ct;
    fn add(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct>;
    fn sub(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct>;
    /// Add a clear constant. The result occupies the whole widened space.
    fn add_scalar(&self, a: &Self::Ct, k: i64) -> Self::Ct;
    /// Multiply by a clear integer; fails if `|k|·m` can leave the widened space.
    fn mul_scalar(&self, a: &Self::Ct, k: i64) -> Result<Self::Ct>;
    /// Multiply by a clear integer without the width check. The caller is
    /// responsible for keeping the product inside the torus message space.
    fn scale_wrapping(&self, a: &Self::Ct, k: i64) -> Self::Ct;
    /// Declare the ciphertext as occupying the whole widened space.
    fn widen(&self, a: &Self::Ct) -> Self::Ct;
    fn pbs(&self, a: &Self::Ct, table: &LookupTable) -> Result<Self::Ct>;
    fn noise(&self, a: &Self::Ct) -> NoiseEstimate;
    fn plaintext_space(&self, a: &Self::Ct) -> u8;
    fn pbs_count(&self) -> u64;

    /// Unsigned product of messages in `[0, p'/2)` via two bootstraps.
    fn mul_ct(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct> {
        let p = self.params();
        let w = p.widened_bits();
        for c in [a, b] {
            let ps = self.plaintext_space(c);
            if ps >= w {
                return Err(FheError::Range { value: ps as i64, limit: w as u64 - 1 });
            }
        }
        let half = (p.message_modulus() / 2) as i64;
        let s = self.widen(&self.add(a, b)?);
        let d = self.add_scalar(&self.sub(a, b)?, half);
        let sq_s = self.pbs(&s, &square_table(p, 0))?;
        let sq_d = self.pbs(&d, &square_table(p, half))?;
        Ok(self.widen(&self.sub(&sq_s, &sq_d)?))
    }

    /// Product of signed messages in `[-p'/4, p'/4)`, stored in two's
    /// complement on the torus. The caller guarantees the range.
    fn mul_ct_signed(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct> {
        let p = self.params();
        let half = (p.message_modulus() / 2) as i64;
        let table = square_table(p, half);
        let s = self.add_scalar(&self.add(a, b)?, half);
        let d = self.add_scalar(&self.sub(a, b)?, half);
        let sq_s = self.pbs(&s, &table)?;
        let sq_d = self.pbs(&d, &table)?;
        Ok(self.widen(&self.sub(&sq_s, &sq_d)?))
    }
}

impl Evaluator for ServerKey {
    type Ct = LweCiphertext;

    fn params(&self) -> &CryptoParams {
        ServerKey::params(self)
    }

    fn trivial(&self, value: i64, plaintext_space: u8) -> LweCiphertext {
        ServerKey::trivial(self, value, plaintext_space)
    }

    fn add(&self, a: &LweCiphertext, b: &LweCiphertext) -> Result<LweCiphertext> {
        a.add_raw(b, self.params().widened_bits())
    }

    fn sub(&self, a: &LweCiphertext, b: &LweCiphertext) -> Result<LweCiphertext> {
        a.sub_raw(b, self.params().widened_bits())
    }

    fn add_scalar(&self, a: &LweCiphertext, k: i64) -> LweCiphertext {
        let mut out = a.add_scalar_raw(k, self.params().delta());
        out.plaintext_space = self.params().widened_bits();
        out
    }

    fn mul_scalar(&self, a: &LweCiphertext, k: i64) -> Result<LweCiphertext> {
        let w = self.params().widened_bits();
        let width = scaled_width(a.plaintext_space, k);
        if width > w as u32 {
            return Err(FheError::Range { value: k, limit: 1u64 << (w - a.plaintext_space.min(w)) });
        }
        Ok(a.scale_raw(k, width as u8))
    }

    fn scale_wrapping(&self, a: &LweCiphertext, k: i64) -> LweCiphertext {
        a.scale_raw(k, self.params().widened_bits())
    }

    fn widen(&self, a: &LweCiphertext) -> LweCiphertext {
        let mut out = a.clone();
        out.plaintext_space = self.params().widened_bits();
        out
    }

    fn pbs(&self, a: &LweCiphertext, table: &LookupTable) -> Result<LweCiphertext> {
        ServerKey::pbs(self, a, table)
    }

    fn noise(&self, a: &LweCiphertext) -> NoiseEstimate {
        a.noise
    }

    fn plaintext_space(&self, a: &LweCiphertext) -> u8 {
        a.plaintext_space
    }

    fn pbs_count(&self) -> u64 {
        ServerKey::pbs_count(self)
    }
}

/// Clear stand-in for a ciphertext: the residue in `Z_{2p'}` plus the same
/// ledger a real ciphertext would carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearCiphertext {
    pub residue: u64,
    pub noise: NoiseEstimate,
    pub plaintext_space: u8,
}

impl ClearCiphertext {
    /// Message modulo `2^plaintext_space`.
    pub fn value(&self) -> u64 {
        self.residue & ((1u64 << self.plaintext_space) - 1)
    }

    pub fn signed(&self, params: &CryptoParams) -> i64 {
        let p = params.message_modulus();
        if self.residue >= p {
            self.residue as i64 - 2 * p as i64
        } else {
            self.residue as i64
        }
    }
}

/// Evaluates circuits on clear residues, mirroring bootstrapping semantics
/// (including the negacyclic upper half) and the noise ledger.
#[derive(Debug)]
pub struct ClearEvaluator {
    params: CryptoParams,
    pbs_counter: AtomicU64,
}

impl ClearEvaluator {
    pub fn new(params: CryptoParams) -> Self {
        Self { params, pbs_counter: AtomicU64::new(0) }
    }

    /// Clear counterpart of a fresh encryption.
    pub fn encrypt_value(&self, value: i64, plaintext_space: u8) -> ClearCiphertext {
        ClearCiphertext {
            residue: self.reduce(value),
            noise: NoiseEstimate::fresh(&self.params),
            plaintext_space,
        }
    }

    fn reduce(&self, v: i64) -> u64 {
        (v as u64) & (self.params.torus_modulus() - 1)
    }
}

impl Evaluator for ClearEvaluator {
    type Ct = ClearCiphertext;

    fn params(&self) -> &CryptoParams {
        &self.params
    }

    fn trivial(&self, value: i64, plaintext_space: u8) -> ClearCiphertext {
        ClearCiphertext { residue: self.reduce(value), noise: NoiseEstimate::zero(), plaintext_space }
    }

    fn add(&self, a: &ClearCiphertext, b: &ClearCiphertext) -> Result<ClearCiphertext> {
        Ok(ClearCiphertext {
            residue: self.reduce(a.residue.wrapping_add(b.residue) as i64),
            noise: a.noise.add(&b.noise),
            plaintext_space: (a.plaintext_space.max(b.plaintext_space) + 1).min(self.params.widened_bits()),
        })
    }

    fn sub(&self, a: &ClearCiphertext, b: &ClearCiphertext) -> Result<ClearCiphertext> {
        Ok(ClearCiphertext {
            residue: self.reduce(a.residue.wrapping_sub(b.residue) as i64),
            noise: a.noise.add(&b.noise),
            plaintext_space: (a.plaintext_space.max(b.plaintext_space) + 1).min(self.params.widened_bits()),
        })
    }

    fn add_scalar(&self, a: &ClearCiphertext, k: i64) -> ClearCiphertext {
        ClearCiphertext {
            residue: self.reduce(a.residue.wrapping_add(k as u64) as i64),
            noise: a.noise,
            plaintext_space: self.params.widened_bits(),
        }
    }

    fn mul_scalar(&self, a: &ClearCiphertext, k: i64) -> Result<ClearCiphertext> {
        let w = self.params.widened_bits();
        let width = scaled_width(a.plaintext_space, k);
        if width > w as u32 {
            return Err(FheError::Range { value: k, limit: 1u64 << (w - a.plaintext_space.min(w)) });
        }
        Ok(ClearCiphertext {
            residue: self.reduce(a.residue.wrapping_mul(k as u64) as i64),
            noise: a.noise.scale(k),
            plaintext_space: width as u8,
        })
    }

    fn scale_wrapping(&self, a: &ClearCiphertext, k: i64) -> ClearCiphertext {
        ClearCiphertext {
            residue: self.reduce(a.residue.wrapping_mul(k as u64) as i64),
            noise: a.noise.scale(k),
            plaintext_space: self.params.widened_bits(),
        }
    }

    fn widen(&self, a: &ClearCiphertext) -> ClearCiphertext {
        ClearCiphertext { plaintext_space: self.params.widened_bits(), ..*a }
    }

    fn pbs(&self, a: &ClearCiphertext, table: &LookupTable) -> Result<ClearCiphertext> {
        if table.input_bits() != a.plaintext_space {
            return Err(FheError::Shape { expected: 1 << a.plaintext_space, got: table.len() });
        }
        if !a.noise.within_pbs_budget(&self.params) {
            return Err(FheError::BudgetExhausted {
                magnitude: a.noise.magnitude,
                limit: self.params.pbs_budget(),
            });
        }
        self.pbs_counter.fetch_add(1, Ordering::Relaxed);
        Ok(ClearCiphertext {
            residue: table.eval_residue(&self.params, a.residue),
            noise: NoiseEstimate::bootstrapped(&self.params),
            plaintext_space: table.output_bits(),
        })
    }

    fn noise(&self, a: &ClearCiphertext) -> NoiseEstimate {
        a.noise
    }

    fn plaintext_space(&self, a: &ClearCiphertext) -> u8 {
        a.plaintext_space
    }

    fn pbs_count(&self) -> u64 {
        self.pbs_counter.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clear_products_match_integers() {
        let ev = ClearEvaluator::new(CryptoParams::micro());
        for a in 0..16 {
            for b in 0..16 {
                let x = ev.encrypt_value(a, 4);
                let y = ev.encrypt_value(b, 4);
                let z = ev.mul_ct(&x, &y).unwrap();
                assert_eq!(z.residue, (a * b) as u64 % 64, "{a}*{b}");
            }
        }
        assert_eq!(ev.pbs_count(), 2 * 256);
    }

    #[test]
    fn clear_signed_products_match_integers() {
        let ev = ClearEvaluator::new(CryptoParams::micro());
        for a in -8..8 {
            for b in -8..8 {
                let x = ev.trivial(a, 5);
                let y = ev.trivial(b, 5);
                let z = ev.mul_ct_signed(&x, &y).unwrap();
                assert_eq!(z.residue, ((a * b) as u64) & 63, "{a}*{b}");
            }
        }
    }
}
