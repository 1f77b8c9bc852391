//! Programmable bootstrapping: blind rotation, sample extraction and key
//! switching back to the LWE key.

use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::error::{FheError, Result};
use crate::fft::NegacyclicFft;
use crate::glwe::{cmux_rotate, rotate_into, ExternalProductScratch, FourierGgsw, GlweCiphertext};
use crate::keyswitch::KeySwitchKey;
use crate::params::CryptoParams;
use crate::serialize::Reader;
use crate::torus::{modulus_switch, Decomposer};

/// Which implementation evaluates a bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PbsBackend {
    #[default]
    BlindRotate,
    /// Decrypt, apply the table, re-encrypt. Needs an escrowed client key
    /// and the `escrow-pbs` feature; only meant as a test oracle.
    Reference,
}

/// GGSW encryptions of the LWE secret bits under the GLWE secret.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapKey {
    pub ggsw: Vec<FourierGgsw>,
}

impl BootstrapKey {
    pub(crate) fn generate<R: Rng + ?Sized>(
        rng: &mut R,
        params: &CryptoParams,
        fft: &NegacyclicFft,
        lwe_secret: &[u64],
        glwe_spec: &[Complex64],
    ) -> Self {
        let dec = Decomposer::new(params.pbs_base_log, params.pbs_levels);
        let ggsw = lwe_secret
            .iter()
            .map(|&bit| FourierGgsw::encrypt(rng, fft, glwe_spec, bit, &dec, params.bsk_noise))
            .collect();
        Self { ggsw }
    }

    pub fn size_bytes(&self) -> usize {
        self.ggsw.iter().map(|g| g.rows.iter().map(|(a, b)| (a.len() + b.len()) * 16).sum::<usize>()).sum()
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.ggsw.len() as u32).to_le_bytes());
        for g in &self.ggsw {
            out.extend_from_slice(&(g.rows.len() as u32).to_le_bytes());
            for (m, b) in &g.rows {
                for z in m.iter().chain(b.iter()) {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
    }

    pub(crate) fn read_from(r: &mut Reader<'_>, params: &CryptoParams) -> Result<Self> {
        let count = r.u32()? as usize;
        if count != params.lwe_dim {
            return Err(FheError::Decode(format!("bootstrapping key for {count} bits")));
        }
        let half = params.ring_dim / 2;
        let mut ggsw = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.u32()? as usize;
            if rows != 2 * params.pbs_levels as usize {
                return Err(FheError::Decode(format!("GGSW with {rows} rows")));
            }
            let mut out = Vec::with_capacity(rows);
            for _ in 0..rows {
                let mut read_poly = || -> Result<Vec<Complex64>> {
                    (0..half).map(|_| Ok(Complex64::new(r.f64()?, r.f64()?))).collect()
                };
                let m = read_poly()?;
                let b = read_poly()?;
                out.push((m, b));
            }
            ggsw.push(FourierGgsw { rows: out });
        }
        Ok(Self { ggsw })
    }
}

/// Blind-rotate `(mask, body)` against the test polynomial of `table`, then
/// extract and key-switch. Returns raw LWE residues under the LWE key.
pub(crate) fn blind_rotate(
    params: &CryptoParams,
    fft: &NegacyclicFft,
    bsk: &BootstrapKey,
    ksk: &KeySwitchKey,
    mask: &[u64],
    body: u64,
    test_poly: &[u64],
) -> (Vec<u64>, u64) {
    let n = params.ring_dim;
    let log_2n = (2 * n).trailing_zeros();
    let dec = Decomposer::new(params.pbs_base_log, params.pbs_levels);
    // Shift by half a box so rounding lands the phase in the middle of it.
    let b_tilde = modulus_switch(body.wrapping_add(params.delta() / 2), log_2n) as usize;

    let mut rotated = vec![0u64; n];
    rotate_into(test_poly, 2 * n - b_tilde, &mut rotated);
    let mut acc = GlweCiphertext::trivial(rotated);
    let mut diff = GlweCiphertext::zero(n);
    let mut scratch = ExternalProductScratch::new(n, params.pbs_levels as usize);
    for (a, ggsw) in mask.iter().zip(&bsk.ggsw) {
        let a_tilde = modulus_switch(*a, log_2n) as usize;
        if a_tilde == 0 {
            continue;
        }
        cmux_rotate(fft, &dec, ggsw, &mut acc, a_tilde, &mut diff, &mut scratch);
    }

    // Sample extraction of the constant coefficient under the flattened key.
    let mut ext = vec![0u64; n];
    ext[0] = acc.mask[0];
    for j in 1..n {
        ext[j] = acc.mask[n - j].wrapping_neg();
    }
    ksk.apply_raw(&ext, acc.body[0])
}
