//! LWE ciphertexts `(a, b = <a, s> + e + Δm)` over the 64-bit torus.

use crate::error::{FheError, Result};
use crate::noise::NoiseEstimate;
use crate::params::CryptoParams;
use crate::serialize::{get_u64s, put_u64s, Reader, CIPHERTEXT_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct LweCiphertext {
    pub mask: Vec<u64>,
    pub body: u64,
    pub noise: NoiseEstimate,
    /// Effective message width in bits; grows with sums and clear products.
    pub plaintext_space: u8,
    /// Identifies the secret key (and thereby the parameter set).
    pub key_id: u64,
}

/// Bits needed to hold `|k|·m` when `m` fits `bits`.
pub(crate) fn scaled_width(bits: u8, k: i64) -> u32 {
    let k = k.unsigned_abs();
    let extra = if k <= 1 { 0 } else { 64 - (k - 1).leading_zeros() };
    bits as u32 + extra
}

impl LweCiphertext {
    /// Noiseless encryption of a clear residue. Anyone can build one.
    pub fn trivial(params: &CryptoParams, key_id: u64, value: i64, plaintext_space: u8) -> Self {
        Self {
            mask: vec![0; params.lwe_dim],
            body: (value as u64).wrapping_mul(params.delta()),
            noise: NoiseEstimate::zero(),
            plaintext_space,
            key_id,
        }
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.key_id != other.key_id || self.mask.len() != other.mask.len() {
            return Err(FheError::Incompatible(format!(
                "key {:#x}/dim {} vs key {:#x}/dim {}",
                self.key_id,
                self.dim(),
                other.key_id,
                other.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn add_raw(&self, other: &Self, widened: u8) -> Result<Self> {
        self.check_compatible(other)?;
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| a.wrapping_add(*b)).collect();
        Ok(Self {
            mask,
            body: self.body.wrapping_add(other.body),
            noise: self.noise.add(&other.noise),
            plaintext_space: (self.plaintext_space.max(other.plaintext_space) + 1).min(widened),
            key_id: self.key_id,
        })
    }

    pub(crate) fn sub_raw(&self, other: &Self, widened: u8) -> Result<Self> {
        self.check_compatible(other)?;
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| a.wrapping_sub(*b)).collect();
        Ok(Self {
            mask,
            body: self.body.wrapping_sub(other.body),
            noise: self.noise.add(&other.noise),
            plaintext_space: (self.plaintext_space.max(other.plaintext_space) + 1).min(widened),
            key_id: self.key_id,
        })
    }

    pub(crate) fn scale_raw(&self, k: i64, plaintext_space: u8) -> Self {
        let ku = k as u64;
        Self {
            mask: self.mask.iter().map(|a| a.wrapping_mul(ku)).collect(),
            body: self.body.wrapping_mul(ku),
            noise: self.noise.scale(k),
            plaintext_space,
            key_id: self.key_id,
        }
    }

    pub(crate) fn add_scalar_raw(&self, k: i64, delta: u64) -> Self {
        let mut out = self.clone();
        out.body = out.body.wrapping_add((k as u64).wrapping_mul(delta));
        out
    }

    /// Serialized size in bytes for dimension `n`.
    pub fn encoded_len(n: usize) -> usize {
        4 + 2 + 1 + 1 + 8 * (n + 1) + 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.dim()));
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&CIPHERTEXT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u16).to_le_bytes());
        out.push(64);
        out.push(self.plaintext_space);
        put_u64s(out, &self.mask);
        out.extend_from_slice(&self.body.to_le_bytes());
        out.extend_from_slice(&self.noise.magnitude.to_le_bytes());
    }

    /// Decode one ciphertext. The wire format carries no key identifier, so
    /// the caller states which key the ciphertext belongs to.
    pub fn read_from(r: &mut Reader<'_>, params: &CryptoParams, key_id: u64) -> Result<Self> {
        let version = r.u32()?;
        if version != CIPHERTEXT_VERSION {
            return Err(FheError::Decode(format!("ciphertext version {version}")));
        }
        let n = r.u16()? as usize;
        if n != params.lwe_dim {
            return Err(FheError::Decode(format!("dimension {n}, expected {}", params.lwe_dim)));
        }
        let log_q = r.u8()?;
        if log_q != params.log2_q {
            return Err(FheError::Decode(format!("log2q {log_q}")));
        }
        let plaintext_space = r.u8()?;
        if plaintext_space > params.widened_bits() {
            return Err(FheError::Decode(format!("plaintext space {plaintext_space}")));
        }
        let mask = get_u64s(r, n)?;
        let body = r.u64()?;
        let magnitude = r.f64()?;
        if !(magnitude >= 0.0) || !magnitude.is_finite() {
            return Err(FheError::Decode("invalid noise magnitude".into()));
        }
        Ok(Self {
            mask,
            body,
            noise: NoiseEstimate { magnitude, ops_since_refresh: 0 },
            plaintext_space,
            key_id,
        })
    }

    pub fn from_bytes(bytes: &[u8], params: &CryptoParams, key_id: u64) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let ct = Self::read_from(&mut r, params, key_id)?;
        r.finish()?;
        Ok(ct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_of_clear_products() {
        assert_eq!(scaled_width(2, 1), 2);
        assert_eq!(scaled_width(2, -1), 2);
        assert_eq!(scaled_width(2, 3), 4);
        assert_eq!(scaled_width(2, 4), 4);
        assert_eq!(scaled_width(2, 5), 5);
    }

    #[test]
    fn encoded_len_matches_layout() {
        let p = CryptoParams::micro();
        let ct = LweCiphertext::trivial(&p, 1, 3, 2);
        assert_eq!(ct.to_bytes().len(), LweCiphertext::encoded_len(p.lwe_dim));
        let back = LweCiphertext::from_bytes(&ct.to_bytes(), &p, 1).unwrap();
        assert_eq!(back, ct);
    }
}
