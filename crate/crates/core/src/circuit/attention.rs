//! Construction of the encrypted attention circuit of one decoder layer.
//!
//! Per encrypted head and decoding position `t`:
//! projections with rotary embeddings folded into the clear weights,
//! requantized to the calibrated query/key/value parameters; one signed
//! product per score coordinate; an exponential table on the shifted score;
//! a homomorphic sum and a reciprocal table; one product per probability;
//! the probability-weighted sum of values; and the per-head output
//! projection. With several heads the projected outputs are summed by a
//! final linear merge that needs no bootstrap.

use pqllama_fhe::CryptoParams;

use super::graph::{Coeffs, GraphBuilder, KvTensor, Node, NodeId, NonLinear, Tag, MERGE_REGION};
use super::place::place_pbs;
use super::{KvWrite, StepGraph};
use crate::enc_attn::calibrate::LayerCalibration;
use crate::error::{Error, Result};
use crate::model::layers::{rope_matrix, Matrix};
use crate::model::Model;

/// Inputs of the circuit builder for one layer.
pub struct LayerSpec<'a> {
    pub model: &'a Model,
    pub calibration: &'a LayerCalibration,
    pub heads: &'a [usize],
    pub weight_bits: u8,
    pub params: &'a CryptoParams,
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let x = a.get(i, k);
            for j in 0..b.cols {
                out.data[i * b.cols + j] += x * b.get(k, j);
            }
        }
    }
    out
}

fn project(
    g: &mut GraphBuilder,
    x: &[NodeId],
    w: &Matrix,
    bits: u8,
    out: &crate::quant::QuantParams,
    tag: Tag,
) -> Result<Vec<NodeId>> {
    (0..w.rows)
        .map(|i| {
            let terms: Vec<(NodeId, f64)> = x.iter().zip(w.row(i)).map(|(&n, &wt)| (n, wt)).collect();
            let y = g.linear(&terms, 0.0, Coeffs::Quantized(bits), Tag::Linear)?;
            g.lut(y, NonLinear::Identity, *out, tag)
        })
        .collect()
}

/// Sum of ciphertext products `Σ a_i·b_i` scaled by `weight`.
fn dot(g: &mut GraphBuilder, a: &[NodeId], b: &[NodeId], weight: f64) -> Result<NodeId> {
    let mut terms = Vec::with_capacity(a.len());
    let mut scale = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let p = g.mul(x, y)?;
        scale = g.node(p).scale * weight;
        terms.push((p, weight));
    }
    g.linear(&terms, 0.0, Coeffs::Exact(scale), Tag::Linear)
}

/// Build the graph of decoding position `position`. `history[j]` is the
/// graph of position `j < position`, whose key/value outputs become cache
/// reads.
pub fn build_step(spec: &LayerSpec<'_>, position: usize, history: &[StepGraph]) -> Result<StepGraph> {
    let model = spec.model;
    let cfg = &model.cfg;
    let cal = spec.calibration;
    let layer = cal.layer;
    let lw = &model.weights.layers[layer];
    let dh = cfg.d_head();
    let mut g = GraphBuilder::new(spec.params.clone());

    let input_range = (cal.input.observed_min, cal.input.observed_max);
    let x: Vec<NodeId> = (0..cfg.d_emb).map(|i| g.input(i as u32, &cal.input, input_range)).collect();
    let rot = rope_matrix(dh, position, cfg.rope_base);
    let mut kv_writes = Vec::new();
    let mut head_outputs = Vec::new();
    for &h in spec.heads {
        let hc = cal.heads.get(h).ok_or_else(|| Error::Calibration(format!("head {h} was not calibrated")))?;
        g.region = 1 + h as u16;
        let grp = cfg.group_of(h);
        let wq = matmul(&rot, &lw.q_proj.rows_slice(h * dh, dh));
        let wk = matmul(&rot, &lw.k_proj.rows_slice(grp * dh, dh));
        let wv = lw.v_proj.rows_slice(grp * dh, dh);
        let q = project(&mut g, &x, &wq, spec.weight_bits, &hc.query, Tag::Query)?;
        let k = project(&mut g, &x, &wk, spec.weight_bits, &hc.key, Tag::Key)?;
        let v = project(&mut g, &x, &wv, spec.weight_bits, &hc.value, Tag::Value)?;
        for i in 0..dh {
            kv_writes.push(KvWrite { head: h as u16, tensor: KvTensor::Key, coord: i as u16, node: k[i] });
            kv_writes.push(KvWrite { head: h as u16, tensor: KvTensor::Value, coord: i as u16, node: v[i] });
        }
        let mut keys = Vec::with_capacity(position + 1);
        let mut values = Vec::with_capacity(position + 1);
        for (j, past) in history.iter().enumerate().take(position) {
            let mut kj = Vec::with_capacity(dh);
            let mut vj = Vec::with_capacity(dh);
            for i in 0..dh {
                let src = |t: KvTensor| -> Result<Node> {
                    past.kv_writes
                        .iter()
                        .find(|w| w.head == h as u16 && w.tensor == t && w.coord == i as u16)
                        .map(|w| past.nodes[w.node as usize].clone())
                        .ok_or_else(|| Error::Plan(format!("position {j} has no cached entry for head {h}")))
                };
                kj.push(g.cache(h as u16, KvTensor::Key, j as u32, i as u16, &src(KvTensor::Key)?));
                vj.push(g.cache(h as u16, KvTensor::Value, j as u32, i as u16, &src(KvTensor::Value)?));
            }
            keys.push(kj);
            values.push(vj);
        }
        if keys.len() != position {
            return Err(Error::Plan(format!("missing history before position {position}")));
        }
        keys.push(k);
        values.push(v);

        let mut e = Vec::with_capacity(position + 1);
        for kj in &keys {
            let s = dot(&mut g, &q, kj, 1.0 / cfg.score_divisor())?;
            e.push(g.lut(s, NonLinear::Exp { shift: hc.shift }, hc.exp, Tag::Exp)?);
        }
        let se = g.node(e[0]).scale;
        let terms: Vec<(NodeId, f64)> = e.iter().map(|&n| (n, 1.0)).collect();
        let sum = g.linear(&terms, 0.0, Coeffs::Exact(se), Tag::Linear)?;
        let r = g.lut(sum, NonLinear::Reciprocal { eps: se }, hc.recip, Tag::Recip)?;
        let mut p = Vec::with_capacity(e.len());
        for &ej in &e {
            let m = g.mul(ej, r)?;
            p.push(g.lut(m, NonLinear::Identity, hc.prob, Tag::Prob)?);
        }
        let mut c = Vec::with_capacity(dh);
        for i in 0..dh {
            let col: Vec<NodeId> = values.iter().map(|vj| vj[i]).collect();
            let y = dot(&mut g, &p, &col, 1.0)?;
            c.push(g.lut(y, NonLinear::Identity, hc.context, Tag::Context)?);
        }
        let wo = lw.o_proj.cols_slice(h * dh, dh);
        head_outputs.push(project(&mut g, &c, &wo, spec.weight_bits, &cal.output, Tag::HeadOut)?);
    }

    let outputs = if head_outputs.len() == 1 {
        head_outputs.pop().unwrap()
    } else {
        g.region = MERGE_REGION;
        let so = cal.output.scale;
        (0..cfg.d_emb)
            .map(|m| {
                let terms: Vec<(NodeId, f64)> = head_outputs.iter().map(|o| (o[m], 1.0)).collect();
                g.linear(&terms, 0.0, Coeffs::Exact(so), Tag::Merge)
            })
            .collect::<Result<_>>()?
    };

    let placed = place_pbs(spec.params, g.nodes)?;
    let remap = |n: NodeId| placed.map[n as usize];
    Ok(StepGraph {
        position: position as u32,
        outputs: outputs.into_iter().map(remap).collect(),
        kv_writes: kv_writes.into_iter().map(|w| KvWrite { node: remap(w.node), ..w }).collect(),
        refreshes: placed.refreshes as u32,
        nodes: placed.nodes,
    })
}
