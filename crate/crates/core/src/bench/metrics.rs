//! Generation and encrypted-inference metrics.

use crate::error::{Error, Result};

/// Percentage of steps whose reference token lies in the candidate set of
/// the same step.
pub fn accuracy(ref_tokens: &[usize], topk_sets: &[Vec<usize>]) -> Result<f64> {
    if ref_tokens.len() != topk_sets.len() {
        return Err(Error::Shape { expected: ref_tokens.len(), got: topk_sets.len() });
    }
    if ref_tokens.is_empty() {
        return Err(Error::Division("accuracy"));
    }
    let hits = ref_tokens.iter().zip(topk_sets).filter(|(r, s)| s.contains(r)).count();
    Ok(percent(hits, ref_tokens.len()))
}

pub(crate) fn percent(hits: usize, steps: usize) -> f64 {
    100.0 * hits as f64 / steps as f64
}

/// Average tokens per second divided by the average execution time.
///
/// The unit is tokens per second squared. The ratio rewards being fast
/// twice; `tokens_per_s` is reported next to it for the usual reading.
pub fn throughput(avg_tokens_per_s: f64, avg_exec_time_s: f64) -> Result<f64> {
    if avg_exec_time_s == 0.0 {
        return Err(Error::Division("throughput"));
    }
    Ok(avg_tokens_per_s / avg_exec_time_s)
}

pub fn pbs_per_token(pbs_count: u64, generated_tokens: usize) -> Result<f64> {
    if generated_tokens == 0 {
        return Err(Error::Division("pbs_per_token"));
    }
    Ok(pbs_count as f64 / generated_tokens as f64)
}

/// Accounted bytes (ciphertexts, plans and bootstrapping keys) per token.
pub fn mem_per_token(total_bytes: u64, generated_tokens: usize) -> Result<f64> {
    if generated_tokens == 0 {
        return Err(Error::Division("mem_per_token"));
    }
    Ok(total_bytes as f64 / generated_tokens as f64)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Signal over noise of one step. Zero noise, as in disable mode, gives
/// `+inf`.
pub fn epr_short(signal_norm: f64, noise_norm: f64) -> f64 {
    if noise_norm == 0.0 {
        f64::INFINITY
    } else {
        signal_norm / noise_norm
    }
}

/// Signal norm over a whole generation divided by the RMS of the per-step
/// noise norms.
pub fn epr_long(signal_norms: &[f64], noise_norms: &[f64]) -> Result<f64> {
    if signal_norms.len() != noise_norms.len() {
        return Err(Error::Shape { expected: signal_norms.len(), got: noise_norms.len() });
    }
    if signal_norms.is_empty() {
        return Err(Error::Division("epr_long"));
    }
    let total = signal_norms.iter().map(|s| s * s).sum::<f64>().sqrt();
    let rms = (noise_norms.iter().map(|e| e * e).sum::<f64>() / noise_norms.len() as f64).sqrt();
    Ok(epr_short(total, rms))
}

/// Least-squares slope of `ys` against their index.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}
