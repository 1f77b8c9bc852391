//! Plaintext building blocks of the decoder.

use crate::error::{Error, Result};

pub const RMS_EPS: f64 = 1e-5;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// Rows `start..start+len` as their own matrix.
    pub fn rows_slice(&self, start: usize, len: usize) -> Matrix {
        Matrix { rows: len, cols: self.cols, data: self.data[start * self.cols..(start + len) * self.cols].to_vec() }
    }

    /// Columns `start..start+len` as their own matrix.
    pub fn cols_slice(&self, start: usize, len: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Matrix { rows: self.rows, cols: len, data }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

/// Rotation angle of coordinate pair `i` at `position`.
pub fn rope_angle(position: usize, pair: usize, dim: usize, base: f64) -> f64 {
    position as f64 * base.powf(-2.0 * pair as f64 / dim as f64)
}

pub fn rope(x: &[f64], position: usize, base: f64) -> Result<Vec<f64>> {
    let d = x.len();
    if d % 2 != 0 {
        return Err(Error::Shape { expected: d + 1, got: d });
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let (s, c) = rope_angle(position, i, d, base).sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = a * c - b * s;
        out[2 * i + 1] = a * s + b * c;
    }
    Ok(out)
}

/// `d × d` matrix form of [`rope`], used to fold the rotation into weights.
pub fn rope_matrix(d: usize, position: usize, base: f64) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d / 2 {
        let (s, c) = rope_angle(position, i, d, base).sin_cos();
        m.data[(2 * i) * d + 2 * i] = c;
        m.data[(2 * i) * d + 2 * i + 1] = -s;
        m.data[(2 * i + 1) * d + 2 * i] = s;
        m.data[(2 * i + 1) * d + 2 * i + 1] = c;
    }
    m
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_derivative(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `down · (silu(gate · x) ⊙ up · x)`.
pub fn swiglu(x: &[f64], gate: &Matrix, up: &Matrix, down: &Matrix) -> Vec<f64> {
    let g = gate.matvec(x);
    let u = up.matvec(x);
    let h: Vec<f64> = g.iter().zip(&u).map(|(a, b)| silu(*a) * b).collect();
    down.matvec(&h)
}

/// Attention of one query against cached keys/values.
pub fn attend(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], divisor: f64) -> Vec<f64> {
    let scores: Vec<f64> = keys.iter().map(|k| dot(q, k) / divisor).collect();
    let p = softmax(&scores);
    let mut out = vec![0.0; values[0].len()];
    for (w, v) in p.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Full scaled dot-product attention `softmax(QKᵀ/divisor)V`, rows of `q`
/// being positions. With `causal`, row `i` only sees keys `0..=i`.
pub fn attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    divisor: f64,
    causal: bool,
) -> Result<Vec<Vec<f64>>> {
    if k.len() != v.len() || k.is_empty() {
        return Err(Error::Shape { expected: k.len().max(1), got: v.len() });
    }
    let dk = k[0].len();
    if q.iter().chain(k).any(|r| r.len() != dk) {
        return Err(Error::Shape { expected: dk, got: q.first().map_or(0, |r| r.len()) });
    }
    Ok(q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let n = if causal { (i + 1).min(k.len()) } else { k.len() };
            attend(qi, &k[..n], &v[..n], divisor)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rms_of_constant_vector() {
        let y = rms_norm(&[2.0; 4], &[1.0; 4]);
        for v in y {
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rms_is_scale_invariant() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let g = [1.0; 4];
        let a = rms_norm(&x, &g);
        let b = rms_norm(&x.map(|v| 7.0 * v), &g);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-3);
        }
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rope_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(rope(&q, 0, 10000.0).unwrap(), q);
        let r = rope(&q, 13, 10000.0).unwrap();
        assert!((dot(&r, &r).sqrt() - dot(&q, &q).sqrt()).abs() < 1e-9);
        let a = dot(&rope(&q, 3, 10000.0).unwrap(), &rope(&k, 7, 10000.0).unwrap());
        let b = dot(&rope(&q, 3 + 11, 10000.0).unwrap(), &rope(&k, 7 + 11, 10000.0).unwrap());
        assert!((a - b).abs() < 1e-6);
        assert!(rope(&q[..3], 1, 10000.0).is_err());
        let m = rope_matrix(8, 13, 10000.0);
        for (x, y) in m.matvec(&q).iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_cases() {
        let v = vec![vec![0.5, -2.0, 3.0]];
        let out = attention(&[vec![1.0, 2.0, 3.0]], &[vec![0.1, 0.2, 0.3]], &v, 2.0, true).unwrap();
        assert_eq!(out[0], v[0]);

        // 2×2 by hand: Q = K = I, V = I, divisor sqrt(2).
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = attention(&eye, &eye, &eye, 2f64.sqrt(), false).unwrap();
        let a = (1.0 / 2f64.sqrt()).exp();
        let want = [a / (a + 1.0), 1.0 / (a + 1.0)];
        assert!((out[0][0] - want[0]).abs() < 1e-12 && (out[0][1] - want[1]).abs() < 1e-12);
        assert!((out[1][1] - want[0]).abs() < 1e-12 && (out[1][0] - want[1]).abs() < 1e-12);

        let p = softmax(&[0.3, -1.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(attention(&eye, &eye, &eye[..1], 1.0, false).is_err());
    }

    #[test]
    fn silu_properties() {
        assert_eq!(silu(0.0), 0.0);
        assert!(silu(-20.0).abs() < 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x: f64 = rng.gen_range(-5.0..5.0);
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_derivative(x)).abs() < 1e-5);
        }
        let gate = Matrix::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.3, 0.3]).unwrap();
        let down = Matrix::from_vec(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(swiglu(&[0.0, 0.0], &gate, &gate, &down), vec![0.0, 0.0]);
    }
}
