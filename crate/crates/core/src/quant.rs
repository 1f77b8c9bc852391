//! Affine per-tensor integer quantization.
//!
//! `code = clamp(round(x / scale) + zero_point, 0, 2^n_bits - 1)` and
//! `x ≈ (code - zero_point) · scale`. Rounding is to nearest, ties to even.

use pqllama_fhe::LookupTable;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub n_bits: u8,
    pub scale: f64,
    pub zero_point: i64,
    pub observed_min: f64,
    pub observed_max: f64,
    /// All calibration samples were equal; scale and zero point are the
    /// fallback values 1 and 0.
    pub degenerate: bool,
}

pub const DEFAULT_N_BITS: u8 = 2;

fn check_bits(n_bits: u8) -> Result<()> {
    if !(1..=16).contains(&n_bits) {
        return Err(Error::Config(format!("n_bits must be in 1..=16, got {n_bits}")));
    }
    Ok(())
}

impl QuantParams {
    /// Parameters for an observed range. The range is widened to contain
    /// zero so that zero stays exactly representable.
    pub fn from_range(min: f64, max: f64, n_bits: u8) -> Result<Self> {
        check_bits(n_bits)?;
        if !min.is_finite() || !max.is_finite() || min > max {
            return Err(Error::Calibration(format!("invalid range [{min}, {max}]")));
        }
        if min == max {
            return Ok(Self {
                n_bits,
                scale: 1.0,
                zero_point: 0,
                observed_min: min,
                observed_max: max,
                degenerate: true,
            });
        }
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        let levels = ((1u64 << n_bits) - 1) as f64;
        let scale = (hi - lo) / levels;
        let zero_point = ((-lo / scale).round_ties_even() as i64).clamp(0, levels as i64);
        Ok(Self { n_bits, scale, zero_point, observed_min: min, observed_max: max, degenerate: false })
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << self.n_bits) - 1
    }

    pub fn quantize(&self, x: f64) -> i64 {
        let q = (x / self.scale).round_ties_even() + self.zero_point as f64;
        if q.is_nan() {
            return self.zero_point;
        }
        q.clamp(0.0, self.max_code() as f64) as i64
    }

    pub fn dequantize(&self, code: i64) -> Result<f64> {
        if code < 0 || code > self.max_code() {
            return Err(Error::Range { value: code, limit: self.max_code() + 1 });
        }
        Ok(self.dequantize_unchecked(code))
    }

    /// Affine map without the range check, for codes of widened spaces.
    pub fn dequantize_unchecked(&self, code: i64) -> f64 {
        (code - self.zero_point) as f64 * self.scale
    }

    /// Smallest and largest representable reals.
    pub fn representable(&self) -> (f64, f64) {
        (self.dequantize_unchecked(0), self.dequantize_unchecked(self.max_code()))
    }

    /// Merge two calibrations of the same tensor (min/max union).
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.n_bits != other.n_bits {
            return Err(Error::Calibration("merging different bit widths".into()));
        }
        Self::from_range(
            self.observed_min.min(other.observed_min),
            self.observed_max.max(other.observed_max),
            self.n_bits,
        )
    }
}

/// Streaming min/max reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeTracker {
    pub min: f64,
    pub max: f64,
    pub count: u64,
}

impl Default for RangeTracker {
    fn default() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY, count: 0 }
    }
}

impl RangeTracker {
    pub fn observe(&mut self, x: f64) {
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.count += 1;
    }

    pub fn observe_all(&mut self, xs: &[f64]) {
        for &x in xs {
            self.observe(x);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.count += other.count;
    }

    pub fn params(&self, n_bits: u8) -> Result<QuantParams> {
        if self.count == 0 {
            return Err(Error::Calibration("no samples observed".into()));
        }
        QuantParams::from_range(self.min, self.max, n_bits)
    }
}

/// Calibrate over a stream of sample tensors.
pub fn calibrate<'a, I>(samples: I, n_bits: u8) -> Result<QuantParams>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut t = RangeTracker::default();
    for s in samples {
        t.observe_all(s);
    }
    t.params(n_bits)
}

pub fn quantize(x: &[f64], q: &QuantParams) -> Vec<i64> {
    x.iter().map(|&v| q.quantize(v)).collect()
}

pub fn dequantize(v: &[i64], q: &QuantParams) -> Result<Vec<f64>> {
    v.iter().map(|&c| q.dequantize(c)).collect()
}

/// A tensor carried both as reals and as quantized codes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTensor {
    pub shape: Vec<usize>,
    pub float_values: Vec<f64>,
    pub int_values: Vec<i64>,
    pub qparams: QuantParams,
}

impl DualTensor {
    pub fn from_floats(shape: Vec<usize>, values: Vec<f64>, qparams: QuantParams) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape { expected: n, got: values.len() });
        }
        let int_values = quantize(&values, &qparams);
        Ok(Self { shape, float_values: values, int_values, qparams })
    }

    /// Build from codes; the float view is their dequantization.
    pub fn from_codes(shape: Vec<usize>, codes: Vec<i64>, qparams: QuantParams) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != codes.len() {
            return Err(Error::Shape { expected: n, got: codes.len() });
        }
        let float_values = dequantize(&codes, &qparams)?;
        Ok(Self { shape, float_values, int_values: codes, qparams })
    }

    pub fn len(&self) -> usize {
        self.int_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.int_values.is_empty()
    }

    pub fn dequantized(&self) -> Vec<f64> {
        self.int_values.iter().map(|&c| self.qparams.dequantize_unchecked(c)).collect()
    }
}

/// Quantized table of a real function: entry `v` is
/// `quantize_out(f(dequantize_in(v)))` for every `v < 2^space_bits`.
pub fn build_lut<F: Fn(f64) -> f64>(
    f: F,
    in_q: &QuantParams,
    out_q: &QuantParams,
    space_bits: u8,
) -> Result<LookupTable> {
    if space_bits < in_q.n_bits {
        return Err(Error::Table(format!(
            "{space_bits}-bit table cannot index {}-bit codes",
            in_q.n_bits
        )));
    }
    let mut entries = Vec::with_capacity(1 << space_bits);
    for v in 0..1i64 << space_bits {
        let y = f(in_q.dequantize_unchecked(v));
        if !y.is_finite() {
            return Err(Error::Table(format!("non-finite value {y} at code {v}")));
        }
        entries.push(out_q.quantize(y));
    }
    LookupTable::new(entries, out_q.n_bits).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let q = calibrate([&[-1.0, 0.5, 1.0][..]], 2).unwrap();
        assert!((q.scale - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(q.zero_point, 2);
        assert!(!q.degenerate);
    }

    #[test]
    fn degenerate_range() {
        for bits in 1..8 {
            let q = calibrate([&[0.0][..]], bits).unwrap();
            assert!(q.degenerate);
            assert_eq!((q.scale, q.zero_point), (1.0, 0));
        }
        assert!(matches!(calibrate(std::iter::empty(), 2), Err(Error::Calibration(_))));
    }

    #[test]
    fn zero_is_anchored() {
        for a in [0.3, 1.0, 7.5] {
            let q = calibrate([&[-a, a][..]], 2).unwrap();
            assert!(q.dequantize(q.zero_point).unwrap().abs() <= q.scale / 2.0);
            assert_eq!(q.quantize(0.0), q.zero_point);
            assert_eq!(q.dequantize(q.zero_point).unwrap(), 0.0);
        }
    }

    #[test]
    fn endpoints() {
        let q = QuantParams::from_range(-0.7, 2.3, 3).unwrap();
        assert_eq!(q.quantize(2.3), 7);
        assert!((q.dequantize(q.quantize(-0.7)).unwrap() + 0.7).abs() <= q.scale / 2.0);
        assert!(q.dequantize(8).is_err());
        assert_eq!(q.quantize(100.0), 7);
        assert_eq!(q.quantize(-100.0), 0);
    }

    #[test]
    fn shared_params_are_linear() {
        let q = QuantParams::from_range(-2.0, 5.0, 4).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let lhs = q.dequantize(a).unwrap() + q.dequantize(b).unwrap();
                let rhs = q.scale * (a + b - 2 * q.zero_point) as f64;
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_table() {
        let q = QuantParams::from_range(-1.0, 2.0, 2).unwrap();
        let t = build_lut(|x| x, &q, &q, 2).unwrap();
        assert_eq!(t.entries(), &[0, 1, 2, 3]);
    }

    #[test]
    fn exp_table_is_monotone() {
        let qi = QuantParams::from_range(-3.0, 0.0, 3).unwrap();
        let qo = QuantParams::from_range(0.0, 1.0, 3).unwrap();
        let t = build_lut(f64::exp, &qi, &qo, 3).unwrap();
        assert!(t.entries().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn silu_keeps_zero() {
        let silu = |x: f64| x / (1.0 + (-x).exp());
        let qi = QuantParams::from_range(-4.0, 4.0, 4).unwrap();
        let qo = QuantParams::from_range(-0.3, 4.0, 4).unwrap();
        let t = build_lut(silu, &qi, &qo, 4).unwrap();
        assert_eq!(t.apply(qi.zero_point as u64), qo.zero_point);
    }

    #[test]
    fn non_finite_outputs_are_rejected() {
        let q = QuantParams::from_range(-1.0, 1.0, 2).unwrap();
        assert!(matches!(build_lut(|x| 1.0 / x, &q, &q, 2), Err(Error::Table(_))));
    }

    #[test]
    fn roundtrip_ten_thousand_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let q = QuantParams::from_range(-1.3, 0.9, 2).unwrap();
        for _ in 0..10_000 {
            let x = rng.gen_range(-1.3..=0.9);
            let back = q.dequantize(q.quantize(x)).unwrap();
            assert!((x - back).abs() <= q.scale / 2.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn quantize_is_monotone(lo in -10.0f64..0.0, width in 0.1f64..20.0, bits in 1u8..8, a in -30.0f64..30.0, b in -30.0f64..30.0) {
            let q = QuantParams::from_range(lo, lo + width, bits).unwrap();
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(x) <= q.quantize(y));
        }

        #[test]
        fn calibration_ignores_order(mut xs in proptest::collection::vec(-5.0f64..5.0, 2..40)) {
            let a = calibrate([&xs[..]], 3).unwrap();
            xs.reverse();
            let (l, r) = xs.split_at(xs.len() / 2);
            let b = calibrate([r, l], 3).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
