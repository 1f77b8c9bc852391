//! Arithmetic helpers on the discretised torus `Z/2^64`.

use rand::Rng;

/// Sample an error uniformly in `[-bound, bound]` and map it onto the torus.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> u64 {
    let b = bound.floor() as i64;
    if b <= 0 {
        return 0;
    }
    rng.gen_range(-b..=b) as u64
}

/// Interpret a torus element as a signed integer in `[-2^63, 2^63)`.
#[inline]
pub fn centered(x: u64) -> i64 {
    x as i64
}

/// Round `x / 2^shift` to the nearest integer, ties to even.
#[inline]
pub fn round_shift(x: u64, shift: u32) -> u64 {
    if shift == 0 {
        return x;
    }
    if shift >= 64 {
        let half = 1u64 << 63;
        return if x > half { 1 } else { 0 };
    }
    let q = x >> shift;
    let rem = x & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q.wrapping_add(1)
    } else {
        q
    }
}

/// Switch a torus element to `Z/2^log_modulus` (rounded).
#[inline]
pub fn modulus_switch(x: u64, log_modulus: u32) -> u64 {
    round_shift(x, 64 - log_modulus) & ((1u64 << log_modulus) - 1)
}

/// Signed gadget decomposition of torus elements in base `2^base_log`.
#[derive(Debug, Clone, Copy)]
pub struct Decomposer {
    pub base_log: u32,
    pub levels: u32,
}

impl Decomposer {
    pub fn new(base_log: u8, levels: u8) -> Self {
        Self { base_log: base_log as u32, levels: levels as u32 }
    }

    /// Gadget value `q / B^(level+1)` for `level` in `0..levels`.
    #[inline]
    pub fn gadget(&self, level: u32) -> u64 {
        1u64 << (64 - self.base_log * (level + 1))
    }

    /// Digits `d_0..d_{l-1}` (most significant first) with
    /// `sum d_j * q/B^(j+1) ≈ x` and `|d_j| <= B/2`.
    #[inline]
    pub fn decompose(&self, x: u64, digits: &mut [i64]) {
        let total = self.base_log * self.levels;
        let mut v = round_shift(x, 64 - total);
        if total < 64 {
            v &= (1u64 << total) - 1;
        }
        let base = 1u64 << self.base_log;
        let half = base >> 1;
        let mut carry = 0u64;
        for j in (0..self.levels as usize).rev() {
            let mut d = (v & (base - 1)) + carry;
            v >>= self.base_log;
            carry = 0;
            if d >= half {
                carry = 1;
                d = d.wrapping_sub(base);
            }
            digits[j] = d as i64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_ties_to_even() {
        assert_eq!(round_shift(0b1010, 2), 2); // 2.5 -> 2
        assert_eq!(round_shift(0b1110, 2), 4); // 3.5 -> 4
        assert_eq!(round_shift(0b1011, 2), 3);
    }

    proptest! {
        #[test]
        fn decomposition_error_is_bounded(x in any::<u64>(), base_log in 2u8..12, levels in 1u8..6) {
            prop_assume!((base_log as u32) * (levels as u32) <= 60);
            let d = Decomposer::new(base_log, levels);
            let mut digits = vec![0i64; levels as usize];
            d.decompose(x, &mut digits);
            let mut acc = 0u64;
            for (j, &dj) in digits.iter().enumerate() {
                prop_assert!(dj.unsigned_abs() <= 1u64 << (base_log - 1));
                acc = acc.wrapping_add((dj as u64).wrapping_mul(d.gadget(j as u32)));
            }
            let err = x.wrapping_sub(acc) as i64;
            let bound = 1i64 << (64 - (base_log as u32 * levels as u32) - 1);
            prop_assert!(err.abs() <= bound);
        }
    }
}
