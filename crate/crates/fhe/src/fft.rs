//! Negacyclic polynomial products in `Z_{2^64}[X]/(X^N + 1)` through a
//! folded complex FFT of size `N/2`.
//!
//! Coefficient `j` and `j + N/2` are packed into one complex number and
//! twisted by `ζ^j` with `ζ = exp(iπ/N)`. The length-`N/2` transform then
//! evaluates the polynomial at the primitive roots `ζ^(4k+1)` of `X^N + 1`.
//! Products are computed in `f64`; the rounding error lands in the low bits of
//! the torus and is accounted for as noise.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

#[derive(Clone)]
pub struct NegacyclicFft {
    n: usize,
    twist: Vec<Complex64>,
    untwist: Vec<Complex64>,
    to_eval: Arc<dyn Fft<f64>>,
    to_coef: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NegacyclicFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NegacyclicFft").field("n", &self.n).finish()
    }
}

const TWO_POW_64: f64 = 18446744073709551616.0;

impl NegacyclicFft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 4, "ring dimension must be a power of two");
        let half = n / 2;
        let mut planner = FftPlanner::new();
        let to_eval = planner.plan_fft(half, FftDirection::Inverse);
        let to_coef = planner.plan_fft(half, FftDirection::Forward);
        let twist = (0..half)
            .map(|j| Complex64::from_polar(1.0, std::f64::consts::PI * j as f64 / n as f64))
            .collect::<Vec<_>>();
        let untwist = twist.iter().map(|z| z.conj() / half as f64).collect();
        Self { n, twist, untwist, to_eval, to_coef }
    }

    pub fn ring_dim(&self) -> usize {
        self.n
    }

    pub fn spectrum_len(&self) -> usize {
        self.n / 2
    }

    fn fold<F: Fn(usize) -> f64>(&self, coeff: F, out: &mut [Complex64]) {
        let half = self.n / 2;
        for j in 0..half {
            out[j] = Complex64::new(coeff(j), coeff(j + half)) * self.twist[j];
        }
        self.to_eval.process(out);
    }

    /// Transform small signed integers (decomposition digits).
    pub fn forward_i64(&self, coeffs: &[i64], out: &mut [Complex64]) {
        self.fold(|j| coeffs[j] as f64, out);
    }

    /// Transform torus elements, read as centred signed integers.
    pub fn forward_torus(&self, coeffs: &[u64], out: &mut [Complex64]) {
        self.fold(|j| coeffs[j] as i64 as f64, out);
    }

    /// Inverse transform of `spec` (consumed as scratch), reduced modulo
    /// `2^64` and added onto `out`.
    pub fn backward_add_torus(&self, spec: &mut [Complex64], out: &mut [u64]) {
        let half = self.n / 2;
        self.to_coef.process(spec);
        for j in 0..half {
            let z = spec[j] * self.untwist[j];
            out[j] = out[j].wrapping_add(reduce_to_torus(z.re));
            out[j + half] = out[j + half].wrapping_add(reduce_to_torus(z.im));
        }
    }
}

#[inline]
fn reduce_to_torus(x: f64) -> u64 {
    let r = x - (x / TWO_POW_64).round() * TWO_POW_64;
    (r.round() as i64) as u64
}

/// Reference schoolbook negacyclic product, used as a test oracle.
pub fn negacyclic_mul_naive(a: &[u64], b: &[u64]) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let p = a[i].wrapping_mul(b[j]);
            let k = i + j;
            if k < n {
                out[k] = out[k].wrapping_add(p);
            } else {
                out[k - n] = out[k - n].wrapping_sub(p);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_schoolbook_on_small_times_torus() {
        let n = 256;
        let fft = NegacyclicFft::new(n);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let small: Vec<i64> = (0..n).map(|_| rng.gen_range(-128..=128)).collect();
        let big: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let mut sa = vec![Complex64::default(); n / 2];
        let mut sb = vec![Complex64::default(); n / 2];
        fft.forward_i64(&small, &mut sa);
        fft.forward_torus(&big, &mut sb);
        for (x, y) in sa.iter_mut().zip(&sb) {
            *x *= *y;
        }
        let mut got = vec![0u64; n];
        fft.backward_add_torus(&mut sa, &mut got);
        let small_u: Vec<u64> = small.iter().map(|&v| v as u64).collect();
        let want = negacyclic_mul_naive(&small_u, &big);
        for (g, w) in got.iter().zip(&want) {
            let err = g.wrapping_sub(*w) as i64;
            assert!(err.unsigned_abs() < 1 << 30, "fft error {err}");
        }
    }

    #[test]
    fn monomial_rotation_is_negacyclic() {
        let n = 8;
        // X^7 * X = X^8 = -1
        let mut a = vec![0u64; n];
        a[7] = 1;
        let mut b = vec![0u64; n];
        b[1] = 1;
        let c = negacyclic_mul_naive(&a, &b);
        assert_eq!(c[0], u64::MAX);
    }
}
