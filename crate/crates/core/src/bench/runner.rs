//! Experiment grid: compile once per configuration, then run every
//! prompt of every cell against a plain reference.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use pqllama_fhe::{keygen, ClientKey, LweCiphertext, ServerKey};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::metrics::norm;
use super::report::{Aggregates, CellReport, GenerationReport, RunRecord, TokenStep, SCHEMA_VERSION};
use crate::circuit::{compile_layer, ExecutionPlan};
use crate::enc_attn::{calibrate_block, extend_greedy, splice, EncAttnConfig, FheMode, HybridModel};
use crate::error::{Error, Result};
use crate::model::{select_token, tokenize, top_k, GenerationConfig, KvCache, Model, ModelConfig, SelectionRule, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub prompts: Vec<Vec<usize>>,
    /// Layers, scope and bit widths. The mode is taken from `modes`.
    pub enc: EncAttnConfig,
    pub modes: Vec<FheMode>,
    /// Requested candidate set sizes; values above the vocabulary select
    /// every token.
    pub top_k: Vec<usize>,
    pub max_new_tokens: Vec<usize>,
    pub selection: SelectionRule,
    pub sample_seed: u64,
    pub repetitions: usize,
    pub format: OutputFormat,
    /// Record wall times. Off, every timing column is zero.
    pub timings: bool,
    /// Run cells one after another so timings do not overlap.
    pub strict_timing: bool,
}

impl ExperimentSpec {
    pub fn new(prompts: Vec<Vec<usize>>, enc: EncAttnConfig) -> Self {
        Self {
            prompts,
            modes: vec![enc.mode],
            enc,
            top_k: vec![1],
            max_new_tokens: vec![4],
            selection: SelectionRule::Argmax,
            sample_seed: 0,
            repetitions: 5,
            format: OutputFormat::Csv,
            timings: true,
            strict_timing: false,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.prompts.is_empty() || self.prompts.iter().any(Vec::is_empty) {
            return Err(Error::Config("every prompt needs at least one token".into()));
        }
        if self.modes.is_empty() || self.top_k.is_empty() || self.max_new_tokens.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        if self.top_k.contains(&0) || self.max_new_tokens.contains(&0) {
            return Err(Error::Config("top_k and max_new_tokens must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if let Some(&t) = self.prompts.iter().flatten().find(|&&t| t >= model.vocab_size) {
            return Err(Error::Range { value: t as i64, limit: model.vocab_size as i64 });
        }
        self.enc.validate(model)?;
        let len = self.max_seq_len();
        if len > model.max_seq_len {
            return Err(Error::Capacity { capacity: model.max_seq_len });
        }
        Ok(())
    }

    /// Longest sequence fed to the model: the longest prompt plus all but
    /// the last generated token.
    pub fn max_seq_len(&self) -> usize {
        let p = self.prompts.iter().map(Vec::len).max().unwrap_or(0);
        p + self.max_new_tokens.iter().max().copied().unwrap_or(1) - 1
    }
}

/// One prompt per non-empty line.
pub fn load_prompts(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let prompts: Vec<Vec<usize>> = text.lines().filter(|l| !l.trim().is_empty()).map(tokenize).collect();
    if prompts.is_empty() {
        return Err(Error::Config(format!("{}: no prompts", path.display())));
    }
    Ok(prompts)
}

/// Weights from `path`, or the seeded random toy model.
pub fn load_model(path: Option<&Path>) -> Result<Model> {
    match path {
        Some(p) => {
            let (cfg, w) = Weights::load(p)?;
            Model::new(cfg, w)
        }
        None => Model::random(ModelConfig::toy()),
    }
}

/// Client and server keys of one experiment.
pub struct Keys {
    pub client: ClientKey,
    pub server: Arc<ServerKey>,
}

impl Keys {
    pub fn generate(enc: &EncAttnConfig) -> Result<Self> {
        let km = keygen(&enc.crypto)?;
        Ok(Self { client: km.client, server: Arc::new(km.server) })
    }
}

/// Compiled plans of every target layer.
#[derive(Debug, Clone)]
pub struct CompiledPlans {
    pub plans: BTreeMap<usize, Arc<ExecutionPlan>>,
    pub compile_s: f64,
    pub plan_bytes: u64,
}

/// Plans keyed by model, calibration data, configuration and sequence
/// length. Mode and decoding settings do not enter the key.
#[derive(Debug, Default)]
pub struct PlanCache {
    entries: HashMap<[u8; 32], CompiledPlans>,
    /// Compilations performed so far.
    pub compiles: usize,
}

fn plan_key(model: &Model, calibration: &[Vec<usize>], cfg: &EncAttnConfig, max_seq_len: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(model.weights.to_bytes(&model.cfg));
    for seq in calibration {
        h.update((seq.len() as u64).to_le_bytes());
        for &t in seq {
            h.update((t as u32).to_le_bytes());
        }
    }
    for &l in &cfg.target_layers {
        h.update((l as u64).to_le_bytes());
    }
    h.update([cfg.head_scope.name().len() as u8]);
    h.update(cfg.head_scope.name());
    h.update([cfg.n_bits, cfg.weight_bits]);
    h.update(cfg.crypto.fingerprint());
    h.update((max_seq_len as u64).to_le_bytes());
    h.finalize().into()
}

impl PlanCache {
    pub fn get_or_compile(
        &mut self,
        model: &Model,
        calibration: &[Vec<usize>],
        cfg: &EncAttnConfig,
        max_seq_len: usize,
    ) -> Result<&CompiledPlans> {
        let key = plan_key(model, calibration, cfg, max_seq_len);
        if !self.entries.contains_key(&key) {
            let record = calibrate_block(model, calibration, cfg)?;
            let plans = cfg
                .target_layers
                .iter()
                .map(|&l| Ok((l, Arc::new(compile_layer(model, &record, cfg, l, max_seq_len)?))))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let compiled = CompiledPlans {
                compile_s: plans.values().map(|p| p.compile_time_s).sum(),
                plan_bytes: plans.values().map(|p| p.to_bytes().len() as u64).sum(),
                plans,
            };
            self.compiles += 1;
            self.entries.insert(key, compiled);
        }
        Ok(&self.entries[&key])
    }
}

struct Cell {
    mode: FheMode,
    top_k: usize,
    new_tokens: usize,
}

/// Run the whole grid. Execute cells use `keys`, generated on demand when
/// absent.
pub fn run_experiment(
    model: &Model,
    spec: &ExperimentSpec,
    cache: &mut PlanCache,
    keys: Option<&Keys>,
) -> Result<GenerationReport> {
    spec.validate(&model.cfg)?;
    let compiles_before = cache.compiles;
    let encrypted = spec.modes.iter().any(|&m| m != FheMode::Disable) && !spec.enc.target_layers.is_empty();
    let compiled = if encrypted {
        let longest = spec.max_new_tokens.iter().max().copied().unwrap_or(1);
        let calibration = extend_greedy(model, &spec.prompts, longest)?;
        Some(cache.get_or_compile(model, &calibration, &spec.enc, spec.max_seq_len())?.clone())
    } else {
        None
    };
    let generated;
    let keys = match keys {
        Some(k) => Some(k),
        None if spec.modes.contains(&FheMode::Execute) && encrypted => {
            generated = Keys::generate(&spec.enc)?;
            Some(&generated)
        }
        None => None,
    };
    let mut cells = Vec::new();
    for &mode in &spec.modes {
        for &new_tokens in &spec.max_new_tokens {
            for &top_k in &spec.top_k {
                cells.push(Cell { mode, top_k, new_tokens });
            }
        }
    }
    let run = |c: &Cell| run_cell(model, spec, c, compiled.as_ref(), keys);
    let cells = if spec.strict_timing {
        cells.iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        cells.par_iter().map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(GenerationReport {
        schema_version: SCHEMA_VERSION,
        timings: spec.timings,
        compiles: cache.compiles - compiles_before,
        cells,
    })
}

fn hybrid<'m>(
    model: &'m Model,
    cfg: &EncAttnConfig,
    compiled: Option<&CompiledPlans>,
    keys: Option<&Keys>,
) -> Result<HybridModel<'m>> {
    let plans = || compiled.map(|c| c.plans.clone()).unwrap_or_default();
    match cfg.mode {
        FheMode::Disable => splice(model, cfg, BTreeMap::new(), None),
        _ if cfg.target_layers.is_empty() => splice(model, cfg, BTreeMap::new(), None),
        FheMode::Simulate => HybridModel::simulate(model, cfg, plans()),
        FheMode::Execute => {
            let k = keys.ok_or_else(|| Error::Config("execute mode needs keys".into()))?;
            HybridModel::execute(model, cfg, plans(), k.client.clone(), k.server.clone())
        }
    }
}

fn run_cell(
    model: &Model,
    spec: &ExperimentSpec,
    cell: &Cell,
    compiled: Option<&CompiledPlans>,
    keys: Option<&Keys>,
) -> Result<CellReport> {
    let cfg = spec.enc.clone().with_mode(cell.mode);
    let mut hy = hybrid(model, &cfg, compiled, keys)?;
    let encrypted = hy.plans().len() as u64 > 0;
    let ct_len = LweCiphertext::encoded_len(cfg.crypto.lwe_dim) as u64;
    let mut runs = Vec::with_capacity(spec.repetitions * spec.prompts.len());
    for repetition in 0..spec.repetitions {
        for (prompt, tokens) in spec.prompts.iter().enumerate() {
            let gen = GenerationConfig {
                max_new_tokens: cell.new_tokens,
                top_k: cell.top_k.min(model.cfg.vocab_size),
                selection: spec.selection,
                sample_seed: spec.sample_seed.wrapping_add(repetition as u64),
            };
            let mut r = run_prompt(model, &mut hy, tokens, &gen, spec.timings)?;
            r.prompt = prompt;
            r.repetition = repetition;
            r.ciphertext_bytes = r.ciphertexts * ct_len;
            runs.push(r);
        }
    }
    let (compile_s, plan_bytes, eval_key_bytes) = match compiled {
        Some(c) if encrypted => {
            (if spec.timings { c.compile_s } else { 0.0 }, c.plan_bytes, cfg.crypto.eval_key_bytes() as u64)
        }
        _ => (0.0, 0, 0),
    };
    let mut report = CellReport {
        top_k: cell.top_k,
        new_tokens: cell.new_tokens,
        mode: cell.mode.name().into(),
        scope: cfg.head_scope.name().into(),
        compile_s,
        plan_bytes,
        eval_key_bytes,
        runs,
        aggregates: empty_aggregates(),
    };
    report.aggregates = report.aggregate()?;
    Ok(report)
}

fn empty_aggregates() -> Aggregates {
    Aggregates {
        accuracy_pct: 0.0,
        avg_infer_s: 0.0,
        compile_s: 0.0,
        tokens_per_s: 0.0,
        throughput: 0.0,
        pbs_count: 0,
        total_ciphertext_bytes: 0,
        pbs_per_token: 0.0,
        mem_per_token_bytes: 0.0,
        epr_short: 0.0,
        epr_long: 0.0,
    }
}

/// Generate from `prompt` with the hybrid model while a plain model
/// follows the same tokens and supplies the reference.
fn run_prompt(model: &Model, hy: &mut HybridModel<'_>, prompt: &[usize], gen: &GenerationConfig, timings: bool) -> Result<RunRecord> {
    hy.reset();
    let mut cache = KvCache::new(&model.cfg);
    let mut ref_cache = KvCache::new(&model.cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(gen.sample_seed);
    let mut wall = 0.0;
    let feed = |hy: &mut HybridModel<'_>, token: usize, cache: &mut KvCache, wall: &mut f64| -> Result<(Vec<f64>, f64)> {
        let start = Instant::now();
        let logits = hy.forward_step(token, cache)?;
        let dt = if timings { start.elapsed().as_secs_f64() } else { 0.0 };
        *wall += dt;
        Ok((logits, dt))
    };
    let (mut logits, mut dt) = (Vec::new(), 0.0);
    let mut ref_logits = Vec::new();
    for &t in prompt {
        (logits, dt) = feed(hy, t, &mut cache, &mut wall)?;
        ref_logits = model.forward_step(t, &mut ref_cache)?;
    }
    let mut steps = Vec::with_capacity(gen.max_new_tokens);
    for i in 0..gen.max_new_tokens {
        let sel = select_token(&logits, gen, &mut rng)?;
        steps.push(TokenStep {
            position: cache.len() - 1,
            reference: top_k(&ref_logits, 1)[0],
            candidates: sel.candidates,
            chosen: sel.token,
            wall_s: dt,
            signal_norm: 0.0,
            noise_norm: 0.0,
        });
        if i + 1 < gen.max_new_tokens {
            (logits, dt) = feed(hy, sel.token, &mut cache, &mut wall)?;
            ref_logits = model.forward_step(sel.token, &mut ref_cache)?;
        }
    }
    let cached = hy.cached_ciphertexts() as u64;
    let log = hy.take_log();
    let mut by_position: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut pbs, mut static_pbs, mut moved) = (0, 0, 0u64);
    for r in &log {
        pbs += r.pbs;
        static_pbs += r.static_pbs;
        moved += (model.cfg.d_emb + r.ints.len()) as u64;
        let e = by_position.entry(r.position).or_default();
        e.0.extend_from_slice(&r.output);
        e.1.extend_from_slice(&r.noise);
    }
    for s in &mut steps {
        if let Some((out, noise)) = by_position.get(&s.position) {
            s.signal_norm = norm(out);
            s.noise_norm = norm(noise);
        }
    }
    Ok(RunRecord {
        prompt: 0,
        repetition: 0,
        prompt_tokens: prompt.len(),
        steps,
        wall_s: wall,
        pbs,
        static_pbs,
        ciphertexts: if log.is_empty() { 0 } else { moved + cached },
        ciphertext_bytes: 0,
    })
}
