//! Worst-case noise ledger.
//!
//! Every ciphertext carries an upper bound on the magnitude of its error
//! term. The rules are linear: sums add, clear multiplications scale, a
//! bootstrap resets the bound to the fixed `E_pbs` of the parameter set.

use crate::params::CryptoParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    /// Upper bound on `|e|`, in torus units.
    pub magnitude: f64,
    pub ops_since_refresh: u32,
}

impl NoiseEstimate {
    pub fn fresh(params: &CryptoParams) -> Self {
        Self { magnitude: params.fresh_noise, ops_since_refresh: 0 }
    }

    pub fn bootstrapped(params: &CryptoParams) -> Self {
        Self { magnitude: params.pbs_output_noise(), ops_since_refresh: 0 }
    }

    /// Noise of a trivial (noiseless) encryption.
    pub fn zero() -> Self {
        Self { magnitude: 0.0, ops_since_refresh: 0 }
    }

    /// `e_add ≈ e1 + e2`.
    pub fn add(&self, other: &Self) -> Self {
        Self {
            magnitude: self.magnitude + other.magnitude,
            ops_since_refresh: self.ops_since_refresh.max(other.ops_since_refresh) + 1,
        }
    }

    /// Multiplication by a clear integer. A zero factor keeps the input bound
    /// so that the ledger stays monotone.
    pub fn scale(&self, k: i64) -> Self {
        let f = k.unsigned_abs().max(1) as f64;
        Self { magnitude: self.magnitude * f, ops_since_refresh: self.ops_since_refresh + 1 }
    }

    /// Product rule `e_mult ≈ e1·e2` for a multiplication evaluated without
    /// any bootstrap. Only used for analysis; ciphertext products in this
    /// crate always go through two bootstraps.
    pub fn product_rule(&self, other: &Self) -> Self {
        Self {
            magnitude: self.magnitude * other.magnitude,
            ops_since_refresh: self.ops_since_refresh.max(other.ops_since_refresh) + 1,
        }
    }

    /// Additive growth, e.g. the key-switching term.
    pub fn plus(&self, extra: f64) -> Self {
        Self { magnitude: self.magnitude + extra, ops_since_refresh: self.ops_since_refresh + 1 }
    }

    pub fn within_decrypt_limit(&self, params: &CryptoParams) -> bool {
        self.magnitude < params.decrypt_limit()
    }

    pub fn within_pbs_budget(&self, params: &CryptoParams) -> bool {
        self.magnitude < params.pbs_budget()
    }

    /// Error expressed in message units (multiples of `Δ`).
    pub fn in_message_units(&self, params: &CryptoParams) -> f64 {
        self.magnitude / params.delta() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_fresh_is_twice_fresh() {
        let p = CryptoParams::micro();
        let e = NoiseEstimate::fresh(&p);
        assert_eq!(e.add(&e).magnitude, 2.0 * p.fresh_noise);
    }

    #[test]
    fn scaling_is_monotone() {
        let p = CryptoParams::micro();
        let e = NoiseEstimate::fresh(&p);
        assert_eq!(e.scale(1).magnitude, e.magnitude);
        assert_eq!(e.scale(0).magnitude, e.magnitude);
        assert_eq!(e.scale(-3).magnitude, 3.0 * e.magnitude);
    }
}
