//! Per-token decoding time with and without the key/value cache.

use std::time::Instant;

use super::metrics::slope;
use crate::error::Result;
use crate::model::{KvCache, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct KvTiming {
    /// Median seconds for token `i` with the cache.
    pub cached_s: Vec<f64>,
    /// Median seconds for token `i` recomputing the whole prefix.
    pub nocache_s: Vec<f64>,
    pub cached_slope: f64,
    pub nocache_slope: f64,
    /// Largest logit difference between the two paths.
    pub max_logit_diff: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Time decoding `tokens` both ways, `reps` times, and fit a line to the
/// per-token medians.
pub fn kv_timing(model: &Model, tokens: &[usize], reps: usize) -> Result<KvTiming> {
    let reps = reps.max(1);
    let n = tokens.len();
    let mut cached = vec![Vec::with_capacity(reps); n];
    let mut nocache = vec![Vec::with_capacity(reps); n];
    let mut max_logit_diff = 0.0f64;
    for _ in 0..reps {
        let mut cache = KvCache::new(&model.cfg);
        for i in 0..n {
            let t = Instant::now();
            let a = model.forward_step(tokens[i], &mut cache)?;
            cached[i].push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let b = model.forward_nocache(&tokens[..=i])?;
            nocache[i].push(t.elapsed().as_secs_f64());
            for (x, y) in a.iter().zip(&b) {
                max_logit_diff = max_logit_diff.max((x - y).abs());
            }
        }
    }
    let cached_s: Vec<f64> = cached.iter_mut().map(|v| median(v)).collect();
    let nocache_s: Vec<f64> = nocache.iter_mut().map(|v| median(v)).collect();
    Ok(KvTiming {
        cached_slope: slope(&cached_s),
        nocache_slope: slope(&nocache_s),
        cached_s,
        nocache_s,
        max_logit_diff,
    })
}
