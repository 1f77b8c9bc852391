//! Clear calibration pass over a prompt batch.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::layers::{dot, softmax};
use crate::model::{AttentionHook, AttentionOverride, KvCache, Model};
use crate::quant::{QuantParams, RangeTracker};

use super::config::EncAttnConfig;

/// Quantization parameters of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCalibration {
    pub query: QuantParams,
    pub key: QuantParams,
    pub value: QuantParams,
    /// Raw scaled scores `q·k / divisor`.
    pub score: QuantParams,
    /// `exp(score - shift)`.
    pub exp: QuantParams,
    /// `1 / Σ exp`.
    pub recip: QuantParams,
    pub prob: QuantParams,
    pub context: QuantParams,
    /// Largest observed score, subtracted before the exponential.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCalibration {
    pub layer: usize,
    /// Normalised attention input.
    pub input: QuantParams,
    pub heads: Vec<HeadCalibration>,
    /// Per-head output projections, shared by all heads.
    pub output: QuantParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub n_bits: u8,
    pub layers: BTreeMap<usize, LayerCalibration>,
}

impl CalibrationRecord {
    pub fn layer(&self, layer: usize) -> Result<&LayerCalibration> {
        self.layers
            .get(&layer)
            .ok_or_else(|| Error::Calibration(format!("layer {layer} was not calibrated")))
    }
}

#[derive(Default, Clone)]
struct HeadTrackers {
    query: RangeTracker,
    key: RangeTracker,
    value: RangeTracker,
    score: RangeTracker,
    context: RangeTracker,
    /// Score rows, kept until the shift is known.
    rows: Vec<Vec<f64>>,
}

#[derive(Default, Clone)]
struct LayerTrackers {
    input: RangeTracker,
    output: RangeTracker,
    heads: Vec<HeadTrackers>,
}

struct Recorder<'m> {
    model: &'m Model,
    layers: BTreeMap<usize, LayerTrackers>,
    cache: KvCache,
}

impl AttentionHook for Recorder<'_> {
    fn attend(&mut self, layer: usize, pos: usize, x: &[f64]) -> Result<Option<AttentionOverride>> {
        let Some(t) = self.layers.get_mut(&layer) else { return Ok(None) };
        let m = self.model;
        let cfg = &m.cfg;
        t.input.observe_all(x);
        for g in 0..cfg.n_kv_groups {
            let (k, v) = m.key_value(layer, g, x, pos);
            self.cache.keys[layer][g].push(k);
            self.cache.values[layer][g].push(v);
        }
        for (h, ht) in t.heads.iter_mut().enumerate() {
            let g = cfg.group_of(h);
            let q = m.query(layer, h, x, pos);
            let keys = &self.cache.keys[layer][g];
            let values = &self.cache.values[layer][g];
            ht.query.observe_all(&q);
            ht.key.observe_all(&keys[pos]);
            ht.value.observe_all(&values[pos]);
            let row: Vec<f64> = keys.iter().map(|k| dot(&q, k) / cfg.score_divisor()).collect();
            ht.score.observe_all(&row);
            let p = softmax(&row);
            let mut c = vec![0.0; cfg.d_head()];
            for (pj, vj) in p.iter().zip(values) {
                for (ci, vi) in c.iter_mut().zip(vj) {
                    *ci += pj * vi;
                }
            }
            ht.context.observe_all(&c);
            t.output.observe_all(&m.head_output(layer, h, &c));
            ht.rows.push(row);
        }
        Ok(None)
    }
}

/// Record activation ranges of the target layers over `batch`. Each
/// sequence is fed token by token through the plain model.
pub fn calibrate_block(model: &Model, batch: &[Vec<usize>], cfg: &EncAttnConfig) -> Result<CalibrationRecord> {
    cfg.validate(&model.cfg)?;
    if batch.is_empty() || batch.iter().all(|s| s.is_empty()) {
        return Err(Error::Calibration("empty calibration batch".into()));
    }
    let proto = LayerTrackers { heads: vec![HeadTrackers::default(); model.cfg.n_heads], ..Default::default() };
    let mut rec = Recorder {
        model,
        layers: cfg.target_layers.iter().map(|&l| (l, proto.clone())).collect(),
        cache: KvCache::new(&model.cfg),
    };
    for seq in batch {
        let mut cache = KvCache::new(&model.cfg);
        rec.cache = KvCache::new(&model.cfg);
        for &tok in seq {
            model.forward_step_hooked(tok, &mut cache, Some(&mut rec))?;
        }
    }
    let b = cfg.n_bits;
    let mut layers = BTreeMap::new();
    for (layer, t) in rec.layers {
        let mut heads = Vec::new();
        for ht in &t.heads {
            let shift = ht.score.max;
            let (mut e, mut r, mut p) = (RangeTracker::default(), RangeTracker::default(), RangeTracker::default());
            for row in &ht.rows {
                let ex: Vec<f64> = row.iter().map(|s| (s - shift).exp()).collect();
                let inv = 1.0 / ex.iter().sum::<f64>();
                e.observe_all(&ex);
                r.observe(inv);
                for x in &ex {
                    p.observe(x * inv);
                }
            }
            heads.push(HeadCalibration {
                query: ht.query.params(b)?,
                key: ht.key.params(b)?,
                value: ht.value.params(b)?,
                score: ht.score.params(b)?,
                exp: e.params(b)?,
                recip: r.params(b)?,
                prob: p.params(b)?,
                context: ht.context.params(b)?,
                shift,
            });
        }
        layers.insert(layer, LayerCalibration { layer, input: t.input.params(b)?, heads, output: t.output.params(b)? });
    }
    Ok(CalibrationRecord { n_bits: b, layers })
}

/// Prompts followed by the plain model's greedy continuation, so that
/// calibration covers the positions visited during generation.
pub fn extend_greedy(model: &Model, prompts: &[Vec<usize>], new_tokens: usize) -> Result<Vec<Vec<usize>>> {
    let gen = crate::model::GenerationConfig::greedy(new_tokens, 1);
    prompts
        .iter()
        .map(|p| {
            let mut s = p.clone();
            if new_tokens > 0 {
                let g = model.generate(p, &gen)?;
                // The last generated token is never fed back.
                s.extend_from_slice(&g.tokens[..g.tokens.len() - 1]);
            }
            Ok(s)
        })
        .collect()
}
