//! LWE key switching.

use rand::Rng;

use crate::error::{FheError, Result};
use crate::lwe::LweCiphertext;
use crate::params::CryptoParams;
use crate::serialize::{get_u64s, put_u64s, Reader};
use crate::torus::{sample_noise, Decomposer};

/// Encryptions of `s_in[i]·g_j` under the output key, one row of
/// `out_dim + 1` residues (mask then body) per `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySwitchKey {
    pub from_id: u64,
    pub to_id: u64,
    pub in_dim: usize,
    pub out_dim: usize,
    pub base_log: u8,
    pub levels: u8,
    rows: Vec<u64>,
}

impl KeySwitchKey {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn generate<R: Rng + ?Sized>(
        rng: &mut R,
        params: &CryptoParams,
        from_id: u64,
        input_key: &[u64],
        to_id: u64,
        output_key: &[u64],
    ) -> Self {
        let dec = Decomposer::new(params.ks_base_log, params.ks_levels);
        let out_dim = output_key.len();
        let stride = out_dim + 1;
        let mut rows = vec![0u64; input_key.len() * params.ks_levels as usize * stride];
        for (i, &bit) in input_key.iter().enumerate() {
            for j in 0..params.ks_levels as usize {
                let row = &mut rows[(i * params.ks_levels as usize + j) * stride..][..stride];
                let mut body = sample_noise(rng, params.ksk_noise)
                    .wrapping_add(bit.wrapping_mul(dec.gadget(j as u32)));
                for (a, &s) in row[..out_dim].iter_mut().zip(output_key) {
                    *a = rng.gen();
                    body = body.wrapping_add(a.wrapping_mul(s));
                }
                row[out_dim] = body;
            }
        }
        Self {
            from_id,
            to_id,
            in_dim: input_key.len(),
            out_dim,
            base_log: params.ks_base_log,
            levels: params.ks_levels,
            rows,
        }
    }

    /// `(0, b) - Σ dec_j(a_i)·K_{i,j}` on raw residues.
    pub(crate) fn apply_raw(&self, mask: &[u64], body: u64) -> (Vec<u64>, u64) {
        let dec = Decomposer::new(self.base_log, self.levels);
        let stride = self.out_dim + 1;
        let levels = self.levels as usize;
        let mut acc = vec![0u64; stride];
        acc[self.out_dim] = body;
        let mut digits = vec![0i64; levels];
        for (i, &a) in mask.iter().enumerate() {
            dec.decompose(a, &mut digits);
            for (j, &d) in digits.iter().enumerate() {
                if d == 0 {
                    continue;
                }
                let du = d as u64;
                let row = &self.rows[(i * levels + j) * stride..][..stride];
                for (x, &r) in acc.iter_mut().zip(row) {
                    *x = x.wrapping_sub(du.wrapping_mul(r));
                }
            }
        }
        let body = acc.pop().unwrap();
        (acc, body)
    }

    /// Re-express `ct` under the output key.
    pub fn apply(&self, params: &CryptoParams, ct: &LweCiphertext) -> Result<LweCiphertext> {
        if ct.key_id != self.from_id {
            return Err(FheError::Key(format!(
                "ciphertext under key {:#x}, key switch expects {:#x}",
                ct.key_id, self.from_id
            )));
        }
        if ct.dim() != self.in_dim {
            return Err(FheError::Key(format!("dimension {} vs {}", ct.dim(), self.in_dim)));
        }
        let (mask, body) = self.apply_raw(&ct.mask, ct.body);
        Ok(LweCiphertext {
            mask,
            body,
            noise: ct.noise.plus(params.keyswitch_noise(self.in_dim)),
            plaintext_space: ct.plaintext_space,
            key_id: self.to_id,
        })
    }

    pub fn size_bytes(&self) -> usize {
        self.rows.len() * 8
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.from_id.to_le_bytes());
        out.extend_from_slice(&self.to_id.to_le_bytes());
        out.extend_from_slice(&(self.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&[self.base_log, self.levels]);
        put_u64s(out, &self.rows);
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let from_id = r.u64()?;
        let to_id = r.u64()?;
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let base_log = r.u8()?;
        let levels = r.u8()?;
        if base_log == 0 || levels == 0 || base_log as u32 * levels as u32 > 64 {
            return Err(FheError::Decode("key switching decomposition".into()));
        }
        let count = in_dim
            .checked_mul(levels as usize)
            .and_then(|x| x.checked_mul(out_dim + 1))
            .ok_or_else(|| FheError::Decode("key switching key size".into()))?;
        let rows = get_u64s(r, count)?;
        Ok(Self { from_id, to_id, in_dim, out_dim, base_log, levels, rows })
    }
}
