use std::collections::BTreeSet;

use pqllama_fhe::CryptoParams;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FheMode {
    /// Plain floating-point attention, no quantization.
    Disable,
    /// Integer circuit evaluated on clear residues with the noise ledger.
    Simulate,
    /// Integer circuit evaluated on ciphertexts.
    Execute,
}

impl FheMode {
    pub fn name(&self) -> &'static str {
        match self {
            FheMode::Disable => "disable",
            FheMode::Simulate => "simulate",
            FheMode::Execute => "execute",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disable" => Ok(FheMode::Disable),
            "simulate" => Ok(FheMode::Simulate),
            "execute" => Ok(FheMode::Execute),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadScope {
    /// Only head 0 of each target layer is encrypted.
    Single,
    AllHeads,
}

impl HeadScope {
    pub fn name(&self) -> &'static str {
        match self {
            HeadScope::Single => "single",
            HeadScope::AllHeads => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(HeadScope::Single),
            "all" | "all-heads" => Ok(HeadScope::AllHeads),
            _ => Err(Error::Config(format!("unknown head scope {s:?}"))),
        }
    }

    pub fn heads(&self, cfg: &ModelConfig) -> Vec<usize> {
        match self {
            HeadScope::Single => vec![0],
            HeadScope::AllHeads => (0..cfg.n_heads).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncAttnConfig {
    pub target_layers: BTreeSet<usize>,
    pub head_scope: HeadScope,
    pub mode: FheMode,
    /// Activation bit width.
    pub n_bits: u8,
    /// Bit width (sign included) of the integer coefficients that replace
    /// clear projection weights.
    pub weight_bits: u8,
    pub crypto: CryptoParams,
}

impl Default for EncAttnConfig {
    fn default() -> Self {
        Self {
            target_layers: BTreeSet::from([0]),
            head_scope: HeadScope::Single,
            mode: FheMode::Simulate,
            n_bits: crate::quant::DEFAULT_N_BITS,
            weight_bits: 3,
            crypto: CryptoParams::micro(),
        }
    }
}

impl EncAttnConfig {
    pub fn with_mode(mut self, mode: FheMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scope(mut self, scope: HeadScope) -> Self {
        self.head_scope = scope;
        self
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if let Some(&l) = self.target_layers.iter().find(|&&l| l >= model.n_layers) {
            return Err(Error::Config(format!("target layer {l} outside 0..{}", model.n_layers)));
        }
        if !(1..=4).contains(&self.n_bits) {
            return Err(Error::Config(format!("n_bits must be in 1..=4, got {}", self.n_bits)));
        }
        if !(2..=5).contains(&self.weight_bits) {
            return Err(Error::Config(format!("weight_bits must be in 2..=5, got {}", self.weight_bits)));
        }
        self.crypto.validate()?;
        Ok(())
    }
}

/// KV group serving query head `head`.
pub fn grouped_kv_map(head: usize, cfg: &ModelConfig) -> Result<usize> {
    if head >= cfg.n_heads {
        return Err(Error::Range { value: head as i64, limit: cfg.n_heads as i64 });
    }
    Ok(cfg.group_of(head))
}
