//! Quantized, encryptable attention spliced into chosen decoder layers.

pub mod calibrate;
pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use pqllama_fhe::{ClearCiphertext, ClearEvaluator, ClientKey, CryptoParams, Evaluator, LweCiphertext, ServerKey};

use crate::circuit::{run_step, ExecutionPlan, KvStore};
use crate::error::{Error, Result};
use crate::model::{AttentionHook, AttentionOverride, KvCache, Model};

pub use calibrate::{calibrate_block, extend_greedy, CalibrationRecord, HeadCalibration, LayerCalibration};
pub use config::{grouped_kv_map, EncAttnConfig, FheMode, HeadScope};

/// Decrypted result of one encrypted attention step.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendStep {
    /// Output integers, decoded with the plan's static ranges.
    pub ints: Vec<i64>,
    /// Bootstraps performed.
    pub pbs: u64,
    /// Ledger noise of each output, on the torus.
    pub noise: Vec<f64>,
}

/// Where the integer circuit of a step is evaluated.
pub trait AttentionBackend: Send {
    fn run(&mut self, plan: &ExecutionPlan, position: usize, codes: &[i64]) -> Result<BackendStep>;
    /// Forget cached keys and values before a new sequence.
    fn reset(&mut self);
    /// Ciphertexts currently held in the server-side cache.
    fn cached_ciphertexts(&self) -> usize;
}

fn check_codes(plan: &ExecutionPlan, codes: &[i64]) -> Result<()> {
    if codes.len() != plan.d_emb as usize {
        return Err(Error::Shape { expected: plan.d_emb as usize, got: codes.len() });
    }
    let max = plan.input.max_code();
    if let Some(&c) = codes.iter().find(|&&c| c < 0 || c > max) {
        return Err(Error::Range { value: c, limit: max + 1 });
    }
    Ok(())
}

/// Integer circuit on clear residues with the same ledger as ciphertexts.
pub struct SimulateBackend {
    ev: ClearEvaluator,
    kv: HashMap<u32, KvStore<ClearCiphertext>>,
}

impl SimulateBackend {
    pub fn new(params: CryptoParams) -> Self {
        Self { ev: ClearEvaluator::new(params), kv: HashMap::new() }
    }
}

impl AttentionBackend for SimulateBackend {
    fn run(&mut self, plan: &ExecutionPlan, position: usize, codes: &[i64]) -> Result<BackendStep> {
        check_codes(plan, codes)?;
        plan.check_params(self.ev.params())?;
        let step = plan.step(position)?;
        let bits = plan.input.n_bits;
        let inputs: Vec<ClearCiphertext> = codes.iter().map(|&c| self.ev.encrypt_value(c, bits)).collect();
        let kv = self.kv.entry(plan.layer).or_default();
        let run = run_step(&self.ev, step, &inputs, kv, false)?;
        let m = self.ev.params().torus_modulus();
        Ok(BackendStep {
            ints: run.outputs.iter().zip(step.output_nodes()).map(|(c, n)| n.decode(c.residue, m)).collect(),
            pbs: run.pbs,
            noise: run.outputs.iter().map(|c| c.noise.magnitude).collect(),
        })
    }

    fn reset(&mut self) {
        self.kv.clear();
    }

    fn cached_ciphertexts(&self) -> usize {
        self.kv.values().map(KvStore::len).sum()
    }
}

/// Client and server in one process: encrypt, evaluate on ciphertexts,
/// decrypt.
pub struct ExecuteBackend {
    client: ClientKey,
    server: Arc<ServerKey>,
    kv: HashMap<u32, KvStore<LweCiphertext>>,
}

impl ExecuteBackend {
    pub fn new(client: ClientKey, server: Arc<ServerKey>) -> Self {
        Self { client, server, kv: HashMap::new() }
    }
}

impl AttentionBackend for ExecuteBackend {
    fn run(&mut self, plan: &ExecutionPlan, position: usize, codes: &[i64]) -> Result<BackendStep> {
        check_codes(plan, codes)?;
        plan.check_params(self.server.params())?;
        let step = plan.step(position)?;
        let bits = plan.input.n_bits;
        let inputs = codes.iter().map(|&c| self.client.encrypt_value(c, bits)).collect::<pqllama_fhe::Result<Vec<_>>>()?;
        let kv = self.kv.entry(plan.layer).or_default();
        let run = run_step(self.server.as_ref(), step, &inputs, kv, false)?;
        let m = self.server.params().torus_modulus();
        let ints = run
            .outputs
            .iter()
            .zip(step.output_nodes())
            .map(|(c, n)| Ok(n.decode(self.client.decrypt_residue(c)?, m)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackendStep { ints, pbs: run.pbs, noise: run.outputs.iter().map(|c| c.noise.magnitude).collect() })
    }

    fn reset(&mut self) {
        self.kv.clear();
    }

    fn cached_ciphertexts(&self) -> usize {
        self.kv.values().map(KvStore::len).sum()
    }
}

/// One encrypted attention evaluation, as seen by the client.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub layer: usize,
    pub position: usize,
    pub ints: Vec<i64>,
    /// Dequantized attention contribution of the encrypted heads.
    pub output: Vec<f64>,
    pub pbs: u64,
    pub static_pbs: u64,
    /// Ledger noise of each output in real units.
    pub noise: Vec<f64>,
}

/// Attention hook that routes target layers through a backend.
pub struct EncryptedAttention {
    plans: BTreeMap<usize, Arc<ExecutionPlan>>,
    clear_heads: Vec<usize>,
    backend: Box<dyn AttentionBackend>,
    params: CryptoParams,
    pub log: Vec<StepRecord>,
}

impl AttentionHook for EncryptedAttention {
    fn attend(&mut self, layer: usize, position: usize, x: &[f64]) -> Result<Option<AttentionOverride>> {
        let Some(plan) = self.plans.get(&layer) else { return Ok(None) };
        let codes: Vec<i64> = x.iter().map(|&v| plan.input.quantize(v)).collect();
        let r = self.backend.run(plan, position, &codes)?;
        let step = plan.step(position)?;
        let delta = self.params.delta() as f64;
        let output: Vec<f64> = r.ints.iter().zip(step.output_nodes()).map(|(&v, n)| n.dequantize(v)).collect();
        let noise = r.noise.iter().zip(step.output_nodes()).map(|(&e, n)| e / delta * n.scale).collect();
        self.log.push(StepRecord {
            layer,
            position,
            ints: r.ints,
            output: output.clone(),
            pbs: r.pbs,
            static_pbs: step.pbs_count(),
            noise,
        });
        Ok(Some(AttentionOverride { out: output, clear_heads: self.clear_heads.clone() }))
    }
}

/// A model whose target layers evaluate (some of) their heads through the
/// integer circuit.
pub struct HybridModel<'m> {
    pub model: &'m Model,
    pub cfg: EncAttnConfig,
    attention: Option<EncryptedAttention>,
}

/// Attach encrypted attention to `model`. `plans` must hold one plan per
/// target layer; `backend` is ignored in disable mode.
pub fn splice<'m>(
    model: &'m Model,
    cfg: &EncAttnConfig,
    plans: BTreeMap<usize, Arc<ExecutionPlan>>,
    backend: Option<Box<dyn AttentionBackend>>,
) -> Result<HybridModel<'m>> {
    cfg.validate(&model.cfg)?;
    if cfg.mode == FheMode::Disable || cfg.target_layers.is_empty() {
        return Ok(HybridModel { model, cfg: cfg.clone(), attention: None });
    }
    let heads = cfg.head_scope.heads(&model.cfg);
    for &l in &cfg.target_layers {
        let p = plans.get(&l).ok_or_else(|| Error::Plan(format!("no plan for layer {l}")))?;
        p.check_params(&cfg.crypto)?;
        if p.layer as usize != l || p.heads.iter().map(|&h| h as usize).ne(heads.iter().copied()) {
            return Err(Error::Plan(format!("plan for layer {l} does not match the head scope")));
        }
    }
    let backend = backend.ok_or_else(|| Error::Config("simulate and execute modes need a backend".into()))?;
    let clear_heads = (0..model.cfg.n_heads).filter(|h| !heads.contains(h)).collect();
    let plans = plans.into_iter().filter(|(l, _)| cfg.target_layers.contains(l)).collect();
    Ok(HybridModel {
        model,
        cfg: cfg.clone(),
        attention: Some(EncryptedAttention { plans, clear_heads, backend, params: cfg.crypto.clone(), log: Vec::new() }),
    })
}

impl<'m> HybridModel<'m> {
    /// Simulate-mode model over a clear evaluator.
    pub fn simulate(model: &'m Model, cfg: &EncAttnConfig, plans: BTreeMap<usize, Arc<ExecutionPlan>>) -> Result<Self> {
        let cfg = cfg.clone().with_mode(FheMode::Simulate);
        splice(model, &cfg, plans, Some(Box::new(SimulateBackend::new(cfg.crypto.clone()))))
    }

    /// Execute-mode model with both keys in this process.
    pub fn execute(
        model: &'m Model,
        cfg: &EncAttnConfig,
        plans: BTreeMap<usize, Arc<ExecutionPlan>>,
        client: ClientKey,
        server: Arc<ServerKey>,
    ) -> Result<Self> {
        let cfg = cfg.clone().with_mode(FheMode::Execute);
        splice(model, &cfg, plans, Some(Box::new(ExecuteBackend::new(client, server))))
    }

    /// Start a new sequence.
    pub fn reset(&mut self) {
        if let Some(a) = &mut self.attention {
            a.backend.reset();
            a.log.clear();
        }
    }

    pub fn forward_step(&mut self, token: usize, cache: &mut KvCache) -> Result<Vec<f64>> {
        match &mut self.attention {
            None => self.model.forward_step(token, cache),
            Some(a) => self.model.forward_step_hooked(token, cache, Some(a)),
        }
    }

    pub fn log(&self) -> &[StepRecord] {
        self.attention.as_ref().map_or(&[], |a| &a.log)
    }

    pub fn take_log(&mut self) -> Vec<StepRecord> {
        self.attention.as_mut().map_or_else(Vec::new, |a| std::mem::take(&mut a.log))
    }

    pub fn cached_ciphertexts(&self) -> usize {
        self.attention.as_ref().map_or(0, |a| a.backend.cached_ciphertexts())
    }

    pub fn plans(&self) -> Vec<Arc<ExecutionPlan>> {
        self.attention.as_ref().map_or_else(Vec::new, |a| a.plans.values().cloned().collect())
    }
}
