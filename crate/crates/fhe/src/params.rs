//! Parameter sets for the toy LWE/GLWE scheme.
//!
//! None of the parameter sets here are secure. They are sized so that the
//! whole widened plaintext space can be bootstrapped exhaustively in tests.

use sha2::{Digest, Sha256};

use crate::error::{FheError, Result};

/// Cryptographic parameters shared by client and server.
///
/// All noise magnitudes are expressed on the 64-bit torus, i.e. in the same
/// units as the ciphertext residues.
#[derive(Debug, Clone, PartialEq)]
pub struct CryptoParams {
    /// LWE dimension `n` of data ciphertexts.
    pub lwe_dim: usize,
    /// GLWE ring dimension `N` used by the bootstrapping accumulator.
    pub ring_dim: usize,
    pub log2_q: u8,
    pub plaintext_bits: u8,
    pub carry_bits: u8,
    /// Worst-case magnitude `E0` of a freshly encrypted ciphertext.
    pub fresh_noise: f64,
    pub rng_seed: u64,
    /// Noise bound of the GLWE encryptions inside the bootstrapping key.
    pub bsk_noise: f64,
    pub pbs_base_log: u8,
    pub pbs_levels: u8,
    /// Noise bound of the LWE encryptions inside key-switching keys.
    pub ksk_noise: f64,
    pub ks_base_log: u8,
    pub ks_levels: u8,
    /// Number of encryptions of zero in the public encryption material.
    pub public_key_size: usize,
    /// Standard deviations used for the modulus-switching term. Infinity
    /// selects the strict worst case.
    pub ms_sigmas: f64,
}

impl CryptoParams {
    /// Small parameter set used by the exhaustive test suites.
    pub fn micro() -> Self {
        Self {
            lwe_dim: 16,
            ring_dim: 1024,
            log2_q: 64,
            plaintext_bits: 2,
            carry_bits: 3,
            fresh_noise: 2f64.powi(46),
            rng_seed: 0x5eed,
            bsk_noise: 2f64.powi(20),
            pbs_base_log: 8,
            pbs_levels: 4,
            ksk_noise: 2f64.powi(20),
            ks_base_log: 4,
            ks_levels: 8,
            public_key_size: 64,
            ms_sigmas: f64::INFINITY,
        }
    }

    /// Larger "toy" profile with `n = 512`. Still insecure.
    pub fn toy() -> Self {
        Self {
            lwe_dim: 512,
            ring_dim: 4096,
            log2_q: 64,
            plaintext_bits: 2,
            carry_bits: 3,
            fresh_noise: 2f64.powi(52),
            rng_seed: 0x5eed,
            bsk_noise: 2f64.powi(10),
            pbs_base_log: 11,
            pbs_levels: 3,
            ksk_noise: 2f64.powi(10),
            ks_base_log: 6,
            ks_levels: 5,
            public_key_size: 1024,
            ms_sigmas: 6.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Bits of the widened message space `p' = 2^(plaintext_bits + carry_bits)`.
    pub fn widened_bits(&self) -> u8 {
        self.plaintext_bits + self.carry_bits
    }

    /// `p'`, the widened message modulus.
    pub fn message_modulus(&self) -> u64 {
        1u64 << self.widened_bits()
    }

    /// Residues per ciphertext phase, including the padding bit: `2p'`.
    pub fn torus_modulus(&self) -> u64 {
        2 * self.message_modulus()
    }

    /// Scaling factor `Δ = q / (2p')`. The extra factor two is the padding bit
    /// that keeps the whole widened space bootstrappable.
    pub fn delta(&self) -> u64 {
        1u64 << (64 - self.widened_bits() as u32 - 1)
    }

    /// Decryption stays exact while the error magnitude is below this.
    pub fn decrypt_limit(&self) -> f64 {
        self.delta() as f64 / 2.0
    }

    /// Upper bound on the error introduced by switching the modulus from `q`
    /// to `2N` before blind rotation.
    pub fn modswitch_bound(&self) -> f64 {
        let step = 2f64.powi(64) / (4.0 * self.ring_dim as f64);
        let terms = (self.lwe_dim + 1) as f64;
        let worst = terms * step;
        let probable = self.ms_sigmas * step * (terms / 3.0).sqrt();
        worst.min(probable)
    }

    /// Largest input error a bootstrap (or anything feeding one) may carry.
    pub fn pbs_budget(&self) -> f64 {
        self.decrypt_limit() - self.modswitch_bound()
    }

    /// Worst-case error of a bootstrapped ciphertext, `E_pbs`.
    pub fn pbs_output_noise(&self) -> f64 {
        let n = self.lwe_dim as f64;
        let big_n = self.ring_dim as f64;
        let q = 2f64.powi(64);
        let rows = 2.0 * self.pbs_levels as f64;
        let half_base = 2f64.powi(self.pbs_base_log as i32 - 1);
        let gadget_prec = 2f64.powi((self.pbs_base_log as i32) * (self.pbs_levels as i32));
        let key_term = rows * big_n * half_base * self.bsk_noise;
        let rounding = (big_n + 1.0) * q / (2.0 * gadget_prec);
        // f64 FFT products: relative error well under 2^-45 at these sizes.
        let fft = rows * big_n * half_base * 2f64.powi(63) * 2f64.powi(-45);
        let blind_rotate = n * (key_term + rounding + fft);
        blind_rotate + self.keyswitch_noise(self.ring_dim)
    }

    /// In-memory size of the evaluation key (bootstrapping key in Fourier
    /// form plus the key-switching key), in bytes.
    pub fn eval_key_bytes(&self) -> usize {
        let spectrum = self.ring_dim / 2;
        let bsk = self.lwe_dim * 2 * self.pbs_levels as usize * 2 * spectrum * 16;
        let ksk = self.ring_dim * self.ks_levels as usize * (self.lwe_dim + 1) * 8;
        bsk + ksk
    }

    /// Additive error of key switching a ciphertext of dimension `input_dim`.
    pub fn keyswitch_noise(&self, input_dim: usize) -> f64 {
        let d = input_dim as f64;
        let q = 2f64.powi(64);
        let half_base = 2f64.powi(self.ks_base_log as i32 - 1);
        let prec = 2f64.powi((self.ks_base_log as i32) * (self.ks_levels as i32));
        d * self.ks_levels as f64 * half_base * self.ksk_noise + d * q / (2.0 * prec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FheError::Parameter(msg));
        let widened = self.plaintext_bits as u32 + self.carry_bits as u32;
        if self.log2_q as u32 <= widened + 2 {
            return bad(format!(
                "log2(q)={} leaves no headroom for {} plaintext + {} carry bits",
                self.log2_q, self.plaintext_bits, self.carry_bits
            ));
        }
        if self.log2_q != 64 {
            return bad(format!("only log2(q)=64 is supported, got {}", self.log2_q));
        }
        if self.plaintext_bits == 0 || widened > 16 {
            return bad(format!("unsupported plaintext width {widened}"));
        }
        if !self.ring_dim.is_power_of_two() || self.ring_dim < 4 {
            return bad(format!("ring dimension {} is not a power of two", self.ring_dim));
        }
        if self.lwe_dim == 0 || self.lwe_dim > u16::MAX as usize {
            return bad(format!("lwe dimension {} out of range", self.lwe_dim));
        }
        let boxes = 2 * self.message_modulus() as usize;
        if self.ring_dim * 2 < 2 * boxes {
            return bad(format!("ring dimension {} too small for {} boxes", self.ring_dim, boxes));
        }
        if (self.pbs_base_log as u32) * (self.pbs_levels as u32) > 64
            || (self.ks_base_log as u32) * (self.ks_levels as u32) > 64
            || self.pbs_base_log == 0
            || self.ks_base_log == 0
            || self.pbs_levels == 0
            || self.ks_levels == 0
        {
            return bad("invalid gadget decomposition".into());
        }
        if !(self.fresh_noise > 0.0) || self.fresh_noise >= self.decrypt_limit() {
            return bad(format!(
                "fresh noise {:e} must be positive and below Δ/2 = {:e}",
                self.fresh_noise,
                self.decrypt_limit()
            ));
        }
        if self.pbs_budget() <= 2.0 * self.fresh_noise {
            return bad(format!(
                "bootstrap budget {:e} cannot absorb two fresh ciphertexts",
                self.pbs_budget()
            ));
        }
        if self.pbs_output_noise() > 2.0 * self.fresh_noise {
            return bad(format!(
                "bootstrap output noise {:e} exceeds 2·E0",
                self.pbs_output_noise()
            ));
        }
        if self.public_key_size == 0
            || self.public_key_size as f64 * self.public_noise() >= self.fresh_noise
        {
            return bad("public encryption material too large for E0".into());
        }
        Ok(())
    }

    /// Noise bound of each public encryption of zero. A random subset sum of
    /// all of them uses at most half of `E0`.
    pub fn public_noise(&self) -> f64 {
        (self.fresh_noise / (2.0 * self.public_key_size as f64)).floor()
    }

    /// Canonical little-endian encoding, used for fingerprints.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        out.extend_from_slice(&(self.lwe_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ring_dim as u32).to_le_bytes());
        out.extend_from_slice(&[self.log2_q, self.plaintext_bits, self.carry_bits]);
        out.extend_from_slice(&self.fresh_noise.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.bsk_noise.to_le_bytes());
        out.extend_from_slice(&[self.pbs_base_log, self.pbs_levels]);
        out.extend_from_slice(&self.ksk_noise.to_le_bytes());
        out.extend_from_slice(&[self.ks_base_log, self.ks_levels]);
        out.extend_from_slice(&(self.public_key_size as u32).to_le_bytes());
        out.extend_from_slice(&self.ms_sigmas.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = crate::serialize::Reader::new(bytes);
        let params = Self {
            lwe_dim: r.u32()? as usize,
            ring_dim: r.u32()? as usize,
            log2_q: r.u8()?,
            plaintext_bits: r.u8()?,
            carry_bits: r.u8()?,
            fresh_noise: r.f64()?,
            rng_seed: r.u64()?,
            bsk_noise: r.f64()?,
            pbs_base_log: r.u8()?,
            pbs_levels: r.u8()?,
            ksk_noise: r.f64()?,
            ks_base_log: r.u8()?,
            ks_levels: r.u8()?,
            public_key_size: r.u32()? as usize,
            ms_sigmas: r.f64()?,
        };
        Ok((params, r.position()))
    }

    /// SHA-256 over the canonical encoding. Plans and keys carry this to
    /// detect a mismatch with the live parameter set.
    pub fn fingerprint(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_bytes());
        digest.into()
    }
}

impl Default for CryptoParams {
    fn default() -> Self {
        Self::toy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        CryptoParams::micro().validate().unwrap();
        CryptoParams::toy().validate().unwrap();
    }

    #[test]
    fn headroom_violation_is_rejected() {
        let mut p = CryptoParams::micro();
        p.log2_q = 8;
        p.plaintext_bits = 7;
        p.carry_bits = 2;
        assert!(matches!(p.validate(), Err(FheError::Parameter(_))));
    }

    #[test]
    fn delta_times_message_space_fits_modulus() {
        let p = CryptoParams::micro();
        assert_eq!(p.message_modulus(), 32);
        assert_eq!(p.delta() as u128 * p.message_modulus() as u128, 1u128 << 63);
        assert!(p.fresh_noise < p.decrypt_limit());
        assert!(p.pbs_output_noise() <= 2.0 * p.fresh_noise);
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let a = CryptoParams::micro();
        let b = a.clone().with_seed(a.rng_seed + 1);
        assert_ne!(a.fingerprint(), b.fingerprint());
        let (back, used) = CryptoParams::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(used, a.to_bytes().len());
    }
}
