//! GLWE accumulators (`k = 1`) and GGSW ciphertexts in Fourier form.
//!
//! Phase convention: `B - A·S` for a GLWE ciphertext `(A, B)`.

use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::fft::NegacyclicFft;
use crate::torus::{sample_noise, Decomposer};

#[derive(Debug, Clone, PartialEq)]
pub struct GlweCiphertext {
    pub mask: Vec<u64>,
    pub body: Vec<u64>,
}

impl GlweCiphertext {
    pub fn zero(n: usize) -> Self {
        Self { mask: vec![0; n], body: vec![0; n] }
    }

    /// Noiseless accumulator holding `body` in the clear.
    pub fn trivial(body: Vec<u64>) -> Self {
        Self { mask: vec![0; body.len()], body }
    }
}

/// Multiply `poly` by `X^k` in `Z[X]/(X^N + 1)`, `k` taken mod `2N`.
pub fn rotate_into(src: &[u64], k: usize, dst: &mut [u64]) {
    let n = src.len();
    let k = k % (2 * n);
    for (j, &c) in src.iter().enumerate() {
        let t = j + k;
        let (idx, neg) = if t < n {
            (t, false)
        } else if t < 2 * n {
            (t - n, true)
        } else {
            (t - 2 * n, false)
        };
        dst[idx] = if neg { c.wrapping_neg() } else { c };
    }
}

/// Exact product of a torus polynomial with a binary secret polynomial.
///
/// The torus operand is split into 16-bit limbs so every floating point
/// product stays far below 2^53 and rounds back exactly.
pub fn mul_by_binary(fft: &NegacyclicFft, a: &[u64], secret_spec: &[Complex64]) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    let mut limb = vec![0i64; n];
    let mut spec = vec![Complex64::default(); n / 2];
    let mut part = vec![0u64; n];
    for k in 0..4 {
        for (l, &x) in limb.iter_mut().zip(a) {
            *l = ((x >> (16 * k)) & 0xffff) as i64;
        }
        fft.forward_i64(&limb, &mut spec);
        for (s, t) in spec.iter_mut().zip(secret_spec) {
            *s *= *t;
        }
        part.iter_mut().for_each(|p| *p = 0);
        fft.backward_add_torus(&mut spec, &mut part);
        for (o, p) in out.iter_mut().zip(&part) {
            *o = o.wrapping_add(p.wrapping_shl(16 * k));
        }
    }
    out
}

/// GLWE encryption of zero: `B = A·S + E`.
pub fn encrypt_zero<R: Rng + ?Sized>(
    rng: &mut R,
    fft: &NegacyclicFft,
    secret_spec: &[Complex64],
    noise: f64,
) -> GlweCiphertext {
    let n = fft.ring_dim();
    let mask: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let mut body = mul_by_binary(fft, &mask, secret_spec);
    for b in body.iter_mut() {
        *b = b.wrapping_add(sample_noise(rng, noise));
    }
    GlweCiphertext { mask, body }
}

/// GGSW encryption of a bit, stored as FFT spectra.
///
/// Row `2j` carries the message on the mask (`+ m·g_j`), row `2j + 1` on the
/// body, so the external product recombines `m·(B - A·S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierGgsw {
    /// `rows[r] = (mask spectrum, body spectrum)`.
    pub rows: Vec<(Vec<Complex64>, Vec<Complex64>)>,
}

impl FourierGgsw {
    pub fn encrypt<R: Rng + ?Sized>(
        rng: &mut R,
        fft: &NegacyclicFft,
        secret_spec: &[Complex64],
        bit: u64,
        decomposer: &Decomposer,
        noise: f64,
    ) -> Self {
        let half = fft.spectrum_len();
        let mut rows = Vec::with_capacity(2 * decomposer.levels as usize);
        for level in 0..decomposer.levels {
            let g = decomposer.gadget(level);
            for component in 0..2 {
                let mut ct = encrypt_zero(rng, fft, secret_spec, noise);
                let target = if component == 0 { &mut ct.mask } else { &mut ct.body };
                target[0] = target[0].wrapping_add(bit.wrapping_mul(g));
                let mut ms = vec![Complex64::default(); half];
                let mut bs = vec![Complex64::default(); half];
                fft.forward_torus(&ct.mask, &mut ms);
                fft.forward_torus(&ct.body, &mut bs);
                rows.push((ms, bs));
            }
        }
        Self { rows }
    }
}

/// Reusable buffers for external products.
pub struct ExternalProductScratch {
    digits: Vec<Vec<i64>>,
    tmp: Vec<i64>,
    spec: Vec<Complex64>,
    acc_mask: Vec<Complex64>,
    acc_body: Vec<Complex64>,
}

impl ExternalProductScratch {
    pub fn new(n: usize, levels: usize) -> Self {
        Self {
            digits: vec![vec![0; n]; levels],
            tmp: vec![0; levels],
            spec: vec![Complex64::default(); n / 2],
            acc_mask: vec![Complex64::default(); n / 2],
            acc_body: vec![Complex64::default(); n / 2],
        }
    }
}

/// `out += GGSW(m) ⊡ ct`, i.e. adds an encryption of `m·phase(ct)`.
pub fn external_product_add(
    fft: &NegacyclicFft,
    decomposer: &Decomposer,
    ggsw: &FourierGgsw,
    ct: &GlweCiphertext,
    out: &mut GlweCiphertext,
    scratch: &mut ExternalProductScratch,
) {
    let levels = decomposer.levels as usize;
    scratch.acc_mask.iter_mut().for_each(|z| *z = Complex64::default());
    scratch.acc_body.iter_mut().for_each(|z| *z = Complex64::default());
    for (component, poly) in [&ct.mask, &ct.body].into_iter().enumerate() {
        for (i, &c) in poly.iter().enumerate() {
            decomposer.decompose(c, &mut scratch.tmp);
            for j in 0..levels {
                scratch.digits[j][i] = scratch.tmp[j];
            }
        }
        for j in 0..levels {
            fft.forward_i64(&scratch.digits[j], &mut scratch.spec);
            let (rm, rb) = &ggsw.rows[2 * j + component];
            for k in 0..scratch.spec.len() {
                let d = scratch.spec[k];
                scratch.acc_mask[k] += d * rm[k];
                scratch.acc_body[k] += d * rb[k];
            }
        }
    }
    fft.backward_add_torus(&mut scratch.acc_mask, &mut out.mask);
    fft.backward_add_torus(&mut scratch.acc_body, &mut out.body);
}

/// `acc ← acc + GGSW(bit) ⊡ (X^k·acc − acc)`: multiplies the accumulator by
/// `X^k` when the encrypted bit is one.
pub fn cmux_rotate(
    fft: &NegacyclicFft,
    decomposer: &Decomposer,
    ggsw: &FourierGgsw,
    acc: &mut GlweCiphertext,
    k: usize,
    diff: &mut GlweCiphertext,
    scratch: &mut ExternalProductScratch,
) {
    rotate_into(&acc.mask, k, &mut diff.mask);
    rotate_into(&acc.body, k, &mut diff.body);
    for (d, a) in diff.mask.iter_mut().zip(&acc.mask) {
        *d = d.wrapping_sub(*a);
    }
    for (d, a) in diff.body.iter_mut().zip(&acc.body) {
        *d = d.wrapping_sub(*a);
    }
    external_product_add(fft, decomposer, ggsw, diff, acc, scratch);
}

/// Phase `B - A·S` of a GLWE ciphertext; used by tests.
pub fn phase(fft: &NegacyclicFft, ct: &GlweCiphertext, secret_spec: &[Complex64]) -> Vec<u64> {
    let as_ = mul_by_binary(fft, &ct.mask, secret_spec);
    ct.body.iter().zip(&as_).map(|(b, x)| b.wrapping_sub(*x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::negacyclic_mul_naive;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (NegacyclicFft, Vec<u64>, Vec<Complex64>, ChaCha8Rng) {
        let fft = NegacyclicFft::new(n);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<u64> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let si: Vec<i64> = s.iter().map(|&x| x as i64).collect();
        let mut spec = vec![Complex64::default(); n / 2];
        fft.forward_i64(&si, &mut spec);
        (fft, s, spec, rng)
    }

    #[test]
    fn binary_product_is_exact() {
        let (fft, s, spec, mut rng) = setup(256);
        let a: Vec<u64> = (0..256).map(|_| rng.gen()).collect();
        assert_eq!(mul_by_binary(&fft, &a, &spec), negacyclic_mul_naive(&a, &s));
    }

    #[test]
    fn rotation_by_n_negates() {
        let src = vec![1u64, 2, 3, 4];
        let mut dst = vec![0u64; 4];
        rotate_into(&src, 4, &mut dst);
        assert_eq!(dst, vec![1u64.wrapping_neg(), 2u64.wrapping_neg(), 3u64.wrapping_neg(), 4u64.wrapping_neg()]);
        rotate_into(&src, 1, &mut dst);
        assert_eq!(dst, vec![4u64.wrapping_neg(), 1, 2, 3]);
    }

    #[test]
    fn cmux_rotates_only_for_one() {
        let n = 256;
        let (fft, _s, spec, mut rng) = setup(n);
        let dec = Decomposer::new(8, 4);
        let noise = 2f64.powi(20);
        let msg: Vec<u64> = (0..n as u64).map(|j| (j % 7) << 58).collect();
        for bit in 0..2u64 {
            let ggsw = FourierGgsw::encrypt(&mut rng, &fft, &spec, bit, &dec, noise);
            let mut acc = encrypt_zero(&mut rng, &fft, &spec, noise);
            for (b, m) in acc.body.iter_mut().zip(&msg) {
                *b = b.wrapping_add(*m);
            }
            let mut diff = GlweCiphertext::zero(n);
            let mut scratch = ExternalProductScratch::new(n, 4);
            cmux_rotate(&fft, &dec, &ggsw, &mut acc, 5, &mut diff, &mut scratch);
            let mut want = msg.clone();
            if bit == 1 {
                rotate_into(&msg, 5, &mut want);
            }
            for (g, w) in phase(&fft, &acc, &spec).iter().zip(&want) {
                let err = g.wrapping_sub(*w) as i64;
                assert!(err.unsigned_abs() < 1 << 50, "error {err}");
            }
        }
    }
}
