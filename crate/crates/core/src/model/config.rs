use crate::error::{Error, Result};

/// Shape of the decoder. All toy defaults are tiny on purpose.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_groups: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub weight_seed: u64,
    /// Scale scores by `sqrt(d_head)` instead of `sqrt(d_emb)`.
    pub scale_by_head_dim: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            vocab_size: 256,
            d_emb: 16,
            n_layers: 2,
            n_heads: 4,
            n_kv_groups: 2,
            d_ffn: 32,
            max_seq_len: 64,
            rope_base: 10000.0,
            weight_seed: 42,
            scale_by_head_dim: false,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_emb / self.n_heads
    }

    pub fn heads_per_group(&self) -> usize {
        self.n_heads / self.n_kv_groups
    }

    /// KV group serving query head `head`.
    pub fn group_of(&self, head: usize) -> usize {
        head / self.heads_per_group()
    }

    /// Divisor applied to raw query–key dot products.
    pub fn score_divisor(&self) -> f64 {
        if self.scale_by_head_dim {
            (self.d_head() as f64).sqrt()
        } else {
            (self.d_emb as f64).sqrt()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.d_emb == 0 || self.n_heads == 0 || self.n_kv_groups == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.d_emb % self.n_heads != 0 {
            return bad(format!("d_emb {} not divisible by {} heads", self.d_emb, self.n_heads));
        }
        if self.n_heads % self.n_kv_groups != 0 {
            return bad(format!("{} heads not divisible by {} kv groups", self.n_heads, self.n_kv_groups));
        }
        if self.d_head() % 2 != 0 {
            return bad(format!("rotary embedding needs an even head dimension, got {}", self.d_head()));
        }
        if self.max_seq_len == 0 || self.d_ffn == 0 {
            return bad("max_seq_len and d_ffn must be positive".into());
        }
        if !(self.rope_base > 1.0) {
            return bad(format!("rope_base {} must exceed 1", self.rope_base));
        }
        Ok(())
    }
}

/// Decoding settings for one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub top_k: usize,
    pub selection: SelectionRule,
    pub sample_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionRule {
    #[default]
    Argmax,
    Sample,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize, top_k: usize) -> Self {
        Self { max_new_tokens, top_k, selection: SelectionRule::Argmax, sample_seed: 0 }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.top_k == 0 || self.top_k > vocab_size {
            return Err(Error::Config(format!("top_k {} outside 1..={vocab_size}", self.top_k)));
        }
        Ok(())
    }
}
