//! Static compilation of encrypted attention into execution plans.
//!
//! A plan covers one decoder layer and every decoding position up to the
//! length it was compiled for. Each position has its own step graph; the
//! graph of position `t` reads the keys and values produced at positions
//! `< t` from the server's cache.

pub mod attention;
pub mod exec;
pub mod graph;
pub mod place;
mod serialize;

use std::time::Instant;

use pqllama_fhe::CryptoParams;
use sha2::{Digest, Sha256};

use crate::enc_attn::calibrate::CalibrationRecord;
use crate::enc_attn::config::EncAttnConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::quant::QuantParams;

pub use exec::{interpret, run_step, CountingEvaluator, KvStore, StepRun};
pub use graph::{Coeffs, GraphBuilder, KvTensor, Node, NodeId, NodeKind, NonLinear, Tag, Term};
pub use place::{place_pbs, Placement};
pub use serialize::PLAN_VERSION;

/// A key or value output that the server keeps for later positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvWrite {
    pub head: u16,
    pub tensor: KvTensor,
    pub coord: u16,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepGraph {
    pub position: u32,
    pub nodes: Vec<Node>,
    pub outputs: Vec<NodeId>,
    pub kv_writes: Vec<KvWrite>,
    /// Identity bootstraps inserted by the placement pass.
    pub refreshes: u32,
}

impl StepGraph {
    /// Bootstraps one execution of this step performs.
    pub fn pbs_count(&self) -> u64 {
        self.nodes.iter().map(Node::pbs_sites).sum()
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.nodes.iter().filter(|n| n.tag == tag).count()
    }

    pub fn output_nodes(&self) -> impl Iterator<Item = &Node> {
        self.outputs.iter().map(|&o| &self.nodes[o as usize])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPlan {
    pub layer: u32,
    pub heads: Vec<u16>,
    pub d_emb: u32,
    pub max_seq_len: u32,
    /// Fingerprint of the crypto parameters the plan was compiled for.
    pub fingerprint: [u8; 32],
    /// Quantization of the client-side input activations.
    pub input: QuantParams,
    pub steps: Vec<StepGraph>,
    pub compile_time_s: f64,
}

impl ExecutionPlan {
    pub fn step(&self, position: usize) -> Result<&StepGraph> {
        self.steps.get(position).ok_or(Error::Capacity { capacity: self.steps.len() })
    }

    /// Bootstraps of the step at `position`.
    pub fn static_pbs_count(&self, position: usize) -> Result<u64> {
        Ok(self.step(position)?.pbs_count())
    }

    /// Bootstraps of positions `0..len`.
    pub fn static_pbs_total(&self, len: usize) -> Result<u64> {
        (0..len).map(|p| self.static_pbs_count(p)).sum()
    }

    pub fn check_params(&self, params: &CryptoParams) -> Result<()> {
        if self.fingerprint != params.fingerprint() {
            return Err(Error::Plan("plan was compiled for different crypto parameters".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serialize::write_plan(self)
    }

    pub fn from_bytes(bytes: &[u8], params: &CryptoParams) -> Result<Self> {
        let plan = serialize::read_plan(bytes)?;
        plan.check_params(params)?;
        Ok(plan)
    }

    /// SHA-256 of the serialized plan.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn node_count(&self) -> usize {
        self.steps.iter().map(|s| s.nodes.len()).sum()
    }
}

/// Whether exact node values `exact` (from [`interpret`]) keep every input
/// and table output inside its quantizer's window, the condition under
/// which the `cal_*` bounds hold. Earlier positions of the sequence must
/// satisfy it too.
pub fn in_calibrated_regime(step: &StepGraph, exact: &[f64]) -> bool {
    step.nodes.iter().zip(exact).all(|(n, &v)| match &n.kind {
        NodeKind::Input { .. } => {
            let (lo, hi) = n.computed_range();
            (lo..=hi).contains(&v)
        }
        NodeKind::Lut { out, .. } => {
            let (lo, hi) = out.representable();
            (lo..=hi).contains(&v)
        }
        _ => true,
    })
}

/// Compile the encrypted attention of `layer` for positions
/// `0..max_seq_len`.
pub fn compile_layer(
    model: &Model,
    calibration: &CalibrationRecord,
    cfg: &EncAttnConfig,
    layer: usize,
    max_seq_len: usize,
) -> Result<ExecutionPlan> {
    let start = Instant::now();
    cfg.validate(&model.cfg)?;
    if !cfg.target_layers.contains(&layer) {
        return Err(Error::Config(format!("layer {layer} is not a target layer")));
    }
    if max_seq_len == 0 || max_seq_len > model.cfg.max_seq_len {
        return Err(Error::Capacity { capacity: model.cfg.max_seq_len });
    }
    let lc = calibration.layer(layer)?;
    if calibration.n_bits != cfg.n_bits {
        return Err(Error::Calibration(format!(
            "record has {} bits, configuration asks for {}",
            calibration.n_bits, cfg.n_bits
        )));
    }
    let heads = cfg.head_scope.heads(&model.cfg);
    let spec = attention::LayerSpec {
        model,
        calibration: lc,
        heads: &heads,
        weight_bits: cfg.weight_bits,
        params: &cfg.crypto,
    };
    let mut steps: Vec<StepGraph> = Vec::with_capacity(max_seq_len);
    for t in 0..max_seq_len {
        let s = attention::build_step(&spec, t, &steps)?;
        steps.push(s);
    }
    Ok(ExecutionPlan {
        layer: layer as u32,
        heads: heads.iter().map(|&h| h as u16).collect(),
        d_emb: model.cfg.d_emb as u32,
        max_seq_len: max_seq_len as u32,
        fingerprint: cfg.crypto.fingerprint(),
        input: lc.input,
        steps,
        compile_time_s: start.elapsed().as_secs_f64(),
    })
}
