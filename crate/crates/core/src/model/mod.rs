//! Plaintext LLaMA-style decoder: byte tokens, RMSNorm, rotary embeddings,
//! grouped-query attention, SwiGLU, KV cache and top-k selection.

pub mod config;
pub mod layers;
pub mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{GenerationConfig, ModelConfig, SelectionRule};
pub use layers::Matrix;
pub use weights::{LayerWeights, Weights};

use crate::error::{Error, Result};
use layers::{attend, attention, rms_norm, rope, swiglu};

fn reborrow<'a>(hook: &'a mut Option<&mut dyn AttentionHook>) -> Option<&'a mut dyn AttentionHook> {
    match hook {
        Some(h) => Some(&mut **h),
        None => None,
    }
}

/// Byte-level tokenizer.
pub fn tokenize(text: &str) -> Vec<usize> {
    text.bytes().map(|b| b as usize).collect()
}

pub fn detokenize(tokens: &[usize]) -> String {
    let bytes: Vec<u8> = tokens.iter().map(|&t| t.min(255) as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Cached keys and values, `[layer][group][position] -> vector`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvCache {
    pub keys: Vec<Vec<Vec<Vec<f64>>>>,
    pub values: Vec<Vec<Vec<Vec<f64>>>>,
}

impl KvCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            keys: vec![vec![Vec::new(); cfg.n_kv_groups]; cfg.n_layers],
            values: vec![vec![Vec::new(); cfg.n_kv_groups]; cfg.n_layers],
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.keys.first().and_then(|l| l.first()).map_or(0, |g| g.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Replacement attention output for a layer, produced outside the model
/// (for instance by encrypted evaluation).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOverride {
    /// Summed output-projected contribution of the heads handled externally.
    pub out: Vec<f64>,
    /// Heads the model must still compute in the clear and add.
    pub clear_heads: Vec<usize>,
}

pub trait AttentionHook {
    /// Called with the normalised attention input `x` of `layer` at
    /// `position`. Returning `None` keeps the plaintext path.
    fn attend(&mut self, layer: usize, position: usize, x: &[f64]) -> Result<Option<AttentionOverride>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub weights: Weights,
}

/// Chosen token and the top-k candidate set (highest logits first, ties
/// broken by lower index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub token: usize,
    pub candidates: Vec<usize>,
}

/// Indices of the `k` largest logits, ties broken by the lower index.
pub fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Zero-based rank of `token` in the ordering used by [`top_k`].
pub fn rank_of(logits: &[f64], token: usize) -> usize {
    let t = logits[token];
    logits
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > t || (v == t && i < token))
        .count()
}

pub fn select_token<R: Rng + ?Sized>(logits: &[f64], gen: &GenerationConfig, rng: &mut R) -> Result<Selection> {
    gen.validate(logits.len())?;
    let candidates = top_k(logits, gen.top_k);
    let token = match gen.selection {
        SelectionRule::Argmax => candidates[0],
        SelectionRule::Sample => {
            let m = logits[candidates[0]];
            let w: Vec<f64> = candidates.iter().map(|&i| (logits[i] - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = candidates[candidates.len() - 1];
            for (&c, &wi) in candidates.iter().zip(&w) {
                if u < wi {
                    pick = c;
                    break;
                }
                u -= wi;
            }
            pick
        }
    };
    Ok(Selection { token, candidates })
}

/// Per-step trace of a generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Logits that produced each generated token.
    pub logits: Vec<Vec<f64>>,
    pub selections: Vec<Selection>,
}

impl Model {
    pub fn new(cfg: ModelConfig, weights: Weights) -> Result<Self> {
        cfg.validate()?;
        if weights.layers.len() != cfg.n_layers || weights.token_embedding.rows != cfg.vocab_size {
            return Err(Error::Config("weights do not match the configuration".into()));
        }
        Ok(Self { cfg, weights })
    }

    pub fn random(cfg: ModelConfig) -> Result<Self> {
        let w = Weights::random(&cfg)?;
        Self::new(cfg, w)
    }

    pub fn embed(&self, token: usize) -> Result<Vec<f64>> {
        if token >= self.cfg.vocab_size {
            return Err(Error::Range { value: token as i64, limit: self.cfg.vocab_size as i64 });
        }
        Ok(self.weights.token_embedding.row(token).to_vec())
    }

    /// Normalised input of the attention block.
    pub fn attention_input(&self, layer: usize, h: &[f64]) -> Vec<f64> {
        rms_norm(h, &self.weights.layers[layer].rms_gain_attn)
    }

    /// Rotated query of `head` at `position`.
    pub fn query(&self, layer: usize, head: usize, x: &[f64], position: usize) -> Vec<f64> {
        let dh = self.cfg.d_head();
        let q = self.weights.layers[layer].q_proj.rows_slice(head * dh, dh).matvec(x);
        rope(&q, position, self.cfg.rope_base).expect("even head dimension")
    }

    /// Rotated key and value of `group` at `position`.
    pub fn key_value(&self, layer: usize, group: usize, x: &[f64], position: usize) -> (Vec<f64>, Vec<f64>) {
        let dh = self.cfg.d_head();
        let lw = &self.weights.layers[layer];
        let k = lw.k_proj.rows_slice(group * dh, dh).matvec(x);
        let v = lw.v_proj.rows_slice(group * dh, dh).matvec(x);
        (rope(&k, position, self.cfg.rope_base).expect("even head dimension"), v)
    }

    /// Context vector of `head` against the cached keys and values.
    pub fn head_context(&self, layer: usize, head: usize, q: &[f64], cache: &KvCache) -> Vec<f64> {
        let g = self.cfg.group_of(head);
        attend(q, &cache.keys[layer][g], &cache.values[layer][g], self.cfg.score_divisor())
    }

    /// `W_o[:, head] · context`.
    pub fn head_output(&self, layer: usize, head: usize, context: &[f64]) -> Vec<f64> {
        let dh = self.cfg.d_head();
        self.weights.layers[layer].o_proj.cols_slice(head * dh, dh).matvec(context)
    }

    fn ffn(&self, layer: usize, h: &[f64]) -> Vec<f64> {
        let lw = &self.weights.layers[layer];
        let x = rms_norm(h, &lw.rms_gain_ffn);
        swiglu(&x, &lw.gate_proj, &lw.up_proj, &lw.down_proj)
    }

    fn head_out(&self, layer: usize, pos: usize, head: usize, x: &[f64], cache: &KvCache) -> Vec<f64> {
        let q = self.query(layer, head, x, pos);
        let c = self.head_context(layer, head, &q, cache);
        self.head_output(layer, head, &c)
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let x = rms_norm(h, &self.weights.final_rms_gain);
        self.weights.lm_head.matvec(&x)
    }

    /// One decoding step with the KV cache: feeds `token` at position
    /// `cache.len()` and returns next-token logits.
    pub fn forward_step(&self, token: usize, cache: &mut KvCache) -> Result<Vec<f64>> {
        self.forward_step_hooked(token, cache, None)
    }

    pub fn forward_step_hooked(
        &self,
        token: usize,
        cache: &mut KvCache,
        mut hook: Option<&mut dyn AttentionHook>,
    ) -> Result<Vec<f64>> {
        let pos = cache.len();
        if pos >= self.cfg.max_seq_len {
            return Err(Error::Capacity { capacity: self.cfg.max_seq_len });
        }
        let mut h = self.embed(token)?;
        for layer in 0..self.cfg.n_layers {
            let x = self.attention_input(layer, &h);
            for g in 0..self.cfg.n_kv_groups {
                let (k, v) = self.key_value(layer, g, &x, pos);
                cache.keys[layer][g].push(k);
                cache.values[layer][g].push(v);
            }
            let external = match hook.as_deref_mut() {
                Some(hk) => hk.attend(layer, pos, &x)?,
                None => None,
            };
            let attn = match external {
                None => {
                    let mut acc = vec![0.0; self.cfg.d_emb];
                    for head in 0..self.cfg.n_heads {
                        for (a, o) in acc.iter_mut().zip(self.head_out(layer, pos, head, &x, cache)) {
                            *a += o;
                        }
                    }
                    acc
                }
                Some(ov) => {
                    let mut acc = ov.out;
                    for &head in &ov.clear_heads {
                        for (a, o) in acc.iter_mut().zip(self.head_out(layer, pos, head, &x, cache)) {
                            *a += o;
                        }
                    }
                    acc
                }
            };
            for (hv, a) in h.iter_mut().zip(&attn) {
                *hv += a;
            }
            let f = self.ffn(layer, &h);
            for (hv, a) in h.iter_mut().zip(&f) {
                *hv += a;
            }
        }
        Ok(self.logits(&h))
    }

    /// Logits at every position computed from scratch with full causal
    /// attention matrices, no cache.
    pub fn forward_full(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        if tokens.is_empty() {
            return Err(Error::Config("at least one token is required".into()));
        }
        if tokens.len() > self.cfg.max_seq_len {
            return Err(Error::Capacity { capacity: self.cfg.max_seq_len });
        }
        let cfg = &self.cfg;
        let dh = cfg.d_head();
        let mut hs: Vec<Vec<f64>> = tokens.iter().map(|&t| self.embed(t)).collect::<Result<_>>()?;
        for layer in 0..cfg.n_layers {
            let lw = &self.weights.layers[layer];
            let xs: Vec<Vec<f64>> = hs.iter().map(|h| self.attention_input(layer, h)).collect();
            let mut attn = vec![vec![0.0; cfg.d_emb]; hs.len()];
            for head in 0..cfg.n_heads {
                let g = cfg.group_of(head);
                let wq = lw.q_proj.rows_slice(head * dh, dh);
                let wk = lw.k_proj.rows_slice(g * dh, dh);
                let wv = lw.v_proj.rows_slice(g * dh, dh);
                let q: Vec<Vec<f64>> =
                    xs.iter().enumerate().map(|(p, x)| rope(&wq.matvec(x), p, cfg.rope_base)).collect::<Result<_>>()?;
                let k: Vec<Vec<f64>> =
                    xs.iter().enumerate().map(|(p, x)| rope(&wk.matvec(x), p, cfg.rope_base)).collect::<Result<_>>()?;
                let v: Vec<Vec<f64>> = xs.iter().map(|x| wv.matvec(x)).collect();
                let ctx = attention(&q, &k, &v, cfg.score_divisor(), true)?;
                for (a, c) in attn.iter_mut().zip(&ctx) {
                    for (x, y) in a.iter_mut().zip(self.head_output(layer, head, c)) {
                        *x += y;
                    }
                }
            }
            for (h, a) in hs.iter_mut().zip(&attn) {
                for (x, y) in h.iter_mut().zip(a) {
                    *x += y;
                }
                let f = self.ffn(layer, h);
                for (x, y) in h.iter_mut().zip(&f) {
                    *x += y;
                }
            }
        }
        Ok(hs.iter().map(|h| self.logits(h)).collect())
    }

    /// Recompute-everything variant of a decoding step; used as the
    /// no-cache baseline.
    pub fn forward_nocache(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward_full(tokens)?.pop().unwrap())
    }

    /// Feed the prompt, then generate `gen.max_new_tokens` tokens.
    pub fn generate(&self, prompt: &[usize], gen: &GenerationConfig) -> Result<Generation> {
        self.generate_hooked(prompt, gen, None)
    }

    pub fn generate_hooked(
        &self,
        prompt: &[usize],
        gen: &GenerationConfig,
        mut hook: Option<&mut dyn AttentionHook>,
    ) -> Result<Generation> {
        if prompt.is_empty() {
            return Err(Error::Config("at least one prompt token is required".into()));
        }
        gen.validate(self.cfg.vocab_size)?;
        let mut cache = KvCache::new(&self.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(gen.sample_seed);
        let mut logits = Vec::new();
        for &t in prompt {
            logits = self.forward_step_hooked(t, &mut cache, reborrow(&mut hook))?;
        }
        let mut out = Generation { tokens: Vec::new(), logits: Vec::new(), selections: Vec::new() };
        for step in 0..gen.max_new_tokens {
            let sel = select_token(&logits, gen, &mut rng)?;
            out.tokens.push(sel.token);
            out.logits.push(std::mem::take(&mut logits));
            out.selections.push(sel);
            if step + 1 < gen.max_new_tokens {
                logits = self.forward_step_hooked(*out.tokens.last().unwrap(), &mut cache, reborrow(&mut hook))?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::random(ModelConfig { max_seq_len: 24, ..ModelConfig::toy() }).unwrap()
    }

    #[test]
    fn cached_and_full_logits_agree() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let tokens: Vec<usize> = (0..16).map(|_| rng.gen_range(0..256)).collect();
            let full = m.forward_full(&tokens).unwrap();
            let mut cache = KvCache::new(&m.cfg);
            for (p, &t) in tokens.iter().enumerate() {
                let l = m.forward_step(t, &mut cache).unwrap();
                for (a, b) in l.iter().zip(&full[p]) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn capacity_and_empty_prompt() {
        let m = Model::random(ModelConfig { max_seq_len: 2, ..ModelConfig::toy() }).unwrap();
        let mut cache = KvCache::new(&m.cfg);
        m.forward_step(1, &mut cache).unwrap();
        m.forward_step(2, &mut cache).unwrap();
        assert!(matches!(m.forward_step(3, &mut cache), Err(Error::Capacity { .. })));
        assert!(m.generate(&[], &GenerationConfig::greedy(1, 1)).is_err());
    }

    #[test]
    fn deterministic_and_causal() {
        let m = small();
        let a = m.forward_full(&[3, 1, 4, 1, 5]).unwrap();
        let b = small().forward_full(&[3, 1, 4, 1, 5]).unwrap();
        assert_eq!(a, b);
        let c = m.forward_full(&[3, 1, 4, 9, 5]).unwrap();
        assert_eq!(a[..3], c[..3]);
        assert_ne!(a[3], c[3]);
    }

    #[test]
    fn appending_keeps_earlier_cache_entries() {
        let m = small();
        let mut cache = KvCache::new(&m.cfg);
        m.forward_step(10, &mut cache).unwrap();
        let snapshot = cache.clone();
        m.forward_step(11, &mut cache).unwrap();
        for l in 0..m.cfg.n_layers {
            for g in 0..m.cfg.n_kv_groups {
                assert_eq!(cache.keys[l][g][0], snapshot.keys[l][g][0]);
                assert_eq!(cache.values[l][g][0], snapshot.values[l][g][0]);
            }
        }
    }

    #[test]
    fn selection_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut one_hot = vec![0.0; 10];
        one_hot[7] = 5.0;
        for k in 1..=10 {
            let s = select_token(&one_hot, &GenerationConfig::greedy(1, k), &mut rng).unwrap();
            assert_eq!(s.token, 7);
            assert!(s.candidates.contains(&7));
        }
        let all = select_token(&one_hot, &GenerationConfig::greedy(1, 10), &mut rng).unwrap();
        let mut c = all.candidates.clone();
        c.sort();
        assert_eq!(c, (0..10).collect::<Vec<_>>());
        let tie = select_token(&[1.0, 1.0, 0.0], &GenerationConfig::greedy(1, 1), &mut rng).unwrap();
        assert_eq!(tie.token, 0);
        let shifted: Vec<f64> = one_hot.iter().map(|v| v + 3.5).collect();
        assert_eq!(select_token(&shifted, &GenerationConfig::greedy(1, 3), &mut rng).unwrap().token, 7);
        assert!(select_token(&one_hot, &GenerationConfig::greedy(1, 11), &mut rng).is_err());
        assert_eq!(rank_of(&[1.0, 1.0, 0.0], 1), 1);
        assert_eq!(rank_of(&[0.0, 2.0, 1.0], 2), 1);
    }

    #[test]
    fn sampling_is_seeded_and_stays_in_candidates() {
        let m = small();
        let gen = GenerationConfig { max_new_tokens: 5, top_k: 4, selection: SelectionRule::Sample, sample_seed: 9 };
        let a = m.generate(&[72, 105], &gen).unwrap();
        let b = m.generate(&[72, 105], &gen).unwrap();
        assert_eq!(a, b);
        for s in &a.selections {
            assert!(s.candidates.contains(&s.token));
        }
    }

    #[test]
    fn weight_file_roundtrip() {
        let m = small();
        let bytes = m.weights.to_bytes(&m.cfg);
        let (cfg, w) = Weights::from_bytes(&bytes).unwrap();
        assert_eq!(cfg, m.cfg);
        assert_eq!(w, m.weights);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Weights::from_bytes(&bad).is_err());
        assert!(Weights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn group_mapping() {
        let cfg = ModelConfig::toy();
        assert_eq!((0..4).map(|h| cfg.group_of(h)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
        let mha = ModelConfig { n_kv_groups: 4, ..ModelConfig::toy() };
        assert_eq!((0..4).map(|h| mha.group_of(h)).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let mqa = ModelConfig { n_kv_groups: 1, ..ModelConfig::toy() };
        assert_eq!((0..4).map(|h| mqa.group_of(h)).collect::<Vec<_>>(), vec![0, 0, 0, 0]);
    }
}
