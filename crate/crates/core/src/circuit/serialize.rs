//! Plan file layout, little-endian:
//!
//! ```text
//! "PQPL" | u32 version | [u8; 32] crypto fingerprint | u32 layer
//! | u32 max_seq_len | u32 d_emb | u16 head count | u16 heads...
//! | f64 compile seconds | u32 qparams count | qparams...
//! | u32 input qparams index | u32 step count | steps...
//! ```
//!
//! A qparams entry is `u8 bits | f64 scale | i64 zero point | f64 min |
//! f64 max | u8 degenerate`. A step is `u32 position | u32 node count |
//! nodes... | u32 output count | u32 outputs... | u32 kv count |
//! (u16 head, u8 tensor, u16 coord, u32 node)... | u32 refreshes`.
//! A node is `u8 kind | u8 tag | u16 region | f64 scale | f64 offset |
//! i64 int_lo | i64 int_hi | f64 true_lo | f64 true_hi | f64 bound |
//! f64 cal_lo | f64 cal_hi | f64 cal_bound | f64 noise` followed by its
//! kind-specific fields.

use pqllama_fhe::serialize::Reader;

use super::graph::{KvTensor, Node, NodeKind, NonLinear, Tag, Term};
use super::{ExecutionPlan, KvWrite, StepGraph};
use crate::error::{Error, Result};
use crate::quant::QuantParams;

pub const PLAN_MAGIC: &[u8; 4] = b"PQPL";
pub const PLAN_VERSION: u32 = 1;

struct Writer {
    out: Vec<u8>,
    qparams: Vec<QuantParams>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.out.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }

    fn intern(&mut self, q: &QuantParams) -> u32 {
        if let Some(i) = self.qparams.iter().position(|p| p == q) {
            return i as u32;
        }
        self.qparams.push(*q);
        (self.qparams.len() - 1) as u32
    }

    fn qparams(&mut self, q: &QuantParams) {
        self.u8(q.n_bits);
        self.f64(q.scale);
        self.i64(q.zero_point);
        self.f64(q.observed_min);
        self.f64(q.observed_max);
        self.u8(q.degenerate as u8);
    }

    fn node(&mut self, n: &Node) {
        let kind = match n.kind {
            NodeKind::Input { .. } => 0,
            NodeKind::Cache { .. } => 1,
            NodeKind::Linear { .. } => 2,
            NodeKind::MulCt { .. } => 3,
            NodeKind::Lut { .. } => 4,
            NodeKind::Refresh { .. } => 5,
        };
        self.u8(kind);
        self.u8(n.tag as u8);
        self.u16(n.region);
        for v in [n.scale, n.offset] {
            self.f64(v);
        }
        self.i64(n.int_lo);
        self.i64(n.int_hi);
        for v in [n.true_lo, n.true_hi, n.bound, n.cal_lo, n.cal_hi, n.cal_bound, n.noise] {
            self.f64(v);
        }
        match &n.kind {
            NodeKind::Input { slot } => self.u32(*slot),
            NodeKind::Cache { head, tensor, position, coord } => {
                self.u16(*head);
                self.u8(*tensor as u8);
                self.u32(*position);
                self.u16(*coord);
            }
            NodeKind::Linear { terms, bias } => {
                self.f64(*bias);
                self.u32(terms.len() as u32);
                for t in terms {
                    self.u32(t.node);
                    self.i64(t.coeff);
                    self.f64(t.weight);
                }
            }
            NodeKind::MulCt { a, b } => {
                self.u32(*a);
                self.u32(*b);
            }
            NodeKind::Lut { input, func, out, table } => {
                self.u32(*input);
                let (f, p) = match *func {
                    NonLinear::Identity => (0, 0.0),
                    NonLinear::Exp { shift } => (1, shift),
                    NonLinear::Reciprocal { eps } => (2, eps),
                };
                self.u8(f);
                self.f64(p);
                let qi = self.intern(out);
                self.u32(qi);
                self.u16(table.len() as u16);
                self.out.extend(table.iter().map(|&v| v as u8));
            }
            NodeKind::Refresh { input } => self.u32(*input),
        }
    }
}

pub(crate) fn write_plan(plan: &ExecutionPlan) -> Vec<u8> {
    // Steps are encoded first so that the qparams table is complete.
    let mut w = Writer { out: Vec::new(), qparams: Vec::new() };
    let input_index = w.intern(&plan.input);
    w.u32(plan.steps.len() as u32);
    for s in &plan.steps {
        w.u32(s.position);
        w.u32(s.nodes.len() as u32);
        for n in &s.nodes {
            w.node(n);
        }
        w.u32(s.outputs.len() as u32);
        for &o in &s.outputs {
            w.u32(o);
        }
        w.u32(s.kv_writes.len() as u32);
        for kv in &s.kv_writes {
            w.u16(kv.head);
            w.u8(kv.tensor as u8);
            w.u16(kv.coord);
            w.u32(kv.node);
        }
        w.u32(s.refreshes);
    }
    let body = std::mem::take(&mut w.out);
    w.out.extend_from_slice(PLAN_MAGIC);
    w.u32(PLAN_VERSION);
    w.out.extend_from_slice(&plan.fingerprint);
    w.u32(plan.layer);
    w.u32(plan.max_seq_len);
    w.u32(plan.d_emb);
    w.u16(plan.heads.len() as u16);
    for &h in &plan.heads {
        w.u16(h);
    }
    w.f64(plan.compile_time_s);
    let table = std::mem::take(&mut w.qparams);
    w.u32(table.len() as u32);
    for q in &table {
        w.qparams(q);
    }
    w.u32(input_index);
    w.out.extend_from_slice(&body);
    w.out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Plan(msg.into())
}

fn read_qparams(r: &mut Reader<'_>) -> Result<QuantParams> {
    let q = QuantParams {
        n_bits: r.u8()?,
        scale: r.f64()?,
        zero_point: r.i64()?,
        observed_min: r.f64()?,
        observed_max: r.f64()?,
        degenerate: r.u8()? != 0,
    };
    if !(q.scale > 0.0) || !(1..=16).contains(&q.n_bits) {
        return Err(bad("invalid quantization parameters"));
    }
    Ok(q)
}

fn read_node(r: &mut Reader<'_>, index: usize, table: &[QuantParams]) -> Result<Node> {
    let kind = r.u8()?;
    let tag = Tag::from_u8(r.u8()?).ok_or_else(|| bad("unknown node tag"))?;
    let region = r.u16()?;
    let scale = r.f64()?;
    let offset = r.f64()?;
    let int_lo = r.i64()?;
    let int_hi = r.i64()?;
    let true_lo = r.f64()?;
    let true_hi = r.f64()?;
    let bound = r.f64()?;
    let cal_lo = r.f64()?;
    let cal_hi = r.f64()?;
    let cal_bound = r.f64()?;
    let noise = r.f64()?;
    let operand = |id: u32| -> Result<u32> {
        if (id as usize) < index {
            Ok(id)
        } else {
            Err(bad(format!("node {index} reads node {id}, which is not earlier")))
        }
    };
    let kind = match kind {
        0 => NodeKind::Input { slot: r.u32()? },
        1 => NodeKind::Cache {
            head: r.u16()?,
            tensor: match r.u8()? {
                0 => KvTensor::Key,
                1 => KvTensor::Value,
                _ => return Err(bad("unknown cache tensor")),
            },
            position: r.u32()?,
            coord: r.u16()?,
        },
        2 => {
            let bias = r.f64()?;
            let n = r.u32()? as usize;
            if n > r.remaining() / 20 {
                return Err(bad("truncated linear node"));
            }
            let mut terms = Vec::with_capacity(n);
            for _ in 0..n {
                terms.push(Term { node: operand(r.u32()?)?, coeff: r.i64()?, weight: r.f64()? });
            }
            NodeKind::Linear { terms, bias }
        }
        3 => NodeKind::MulCt { a: operand(r.u32()?)?, b: operand(r.u32()?)? },
        4 => {
            let input = operand(r.u32()?)?;
            let f = r.u8()?;
            let p = r.f64()?;
            let func = match f {
                0 => NonLinear::Identity,
                1 => NonLinear::Exp { shift: p },
                2 => NonLinear::Reciprocal { eps: p },
                _ => return Err(bad("unknown table function")),
            };
            let qi = r.u32()? as usize;
            let out = *table.get(qi).ok_or_else(|| bad("qparams index out of range"))?;
            let len = r.u16()? as usize;
            if len == 0 || len > 64 {
                return Err(bad("invalid table length"));
            }
            let table = r.take(len)?.iter().map(|&b| b as i8).collect();
            NodeKind::Lut { input, func, out, table }
        }
        5 => NodeKind::Refresh { input: operand(r.u32()?)? },
        k => return Err(bad(format!("unknown node kind {k}"))),
    };
    if int_lo > int_hi {
        return Err(bad("empty integer range"));
    }
    Ok(Node { kind, tag, region, scale, offset, int_lo, int_hi, true_lo, true_hi, bound, cal_lo, cal_hi, cal_bound, noise })
}

pub(crate) fn read_plan(bytes: &[u8]) -> Result<ExecutionPlan> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != PLAN_MAGIC {
        return Err(bad("not a plan file"));
    }
    let version = r.u32()?;
    if version != PLAN_VERSION {
        return Err(bad(format!("plan version {version}, expected {PLAN_VERSION}")));
    }
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(r.take(32)?);
    let layer = r.u32()?;
    let max_seq_len = r.u32()?;
    let d_emb = r.u32()?;
    let nh = r.u16()? as usize;
    let heads = (0..nh).map(|_| r.u16()).collect::<pqllama_fhe::Result<Vec<_>>>()?;
    let compile_time_s = r.f64()?;
    let nq = r.u32()? as usize;
    if nq > r.remaining() / 34 {
        return Err(bad("truncated qparams table"));
    }
    let table = (0..nq).map(|_| read_qparams(&mut r)).collect::<Result<Vec<_>>>()?;
    let input = *table.get(r.u32()? as usize).ok_or_else(|| bad("qparams index out of range"))?;
    let ns = r.u32()? as usize;
    if ns != max_seq_len as usize {
        return Err(bad("step count does not match the sequence length"));
    }
    let mut steps = Vec::with_capacity(ns);
    for _ in 0..ns {
        let position = r.u32()?;
        let nn = r.u32()? as usize;
        if nn > r.remaining() / 84 {
            return Err(bad("truncated node table"));
        }
        let mut nodes = Vec::with_capacity(nn);
        for i in 0..nn {
            nodes.push(read_node(&mut r, i, &table)?);
        }
        let node_ref = |id: u32| -> Result<u32> {
            if (id as usize) < nn {
                Ok(id)
            } else {
                Err(bad("reference past the node table"))
            }
        };
        let no = r.u32()? as usize;
        if no > r.remaining() / 4 {
            return Err(bad("truncated output list"));
        }
        let outputs = (0..no).map(|_| node_ref(r.u32()?)).collect::<Result<Vec<_>>>()?;
        let nk = r.u32()? as usize;
        if nk > r.remaining() / 9 {
            return Err(bad("truncated cache list"));
        }
        let mut kv_writes = Vec::with_capacity(nk);
        for _ in 0..nk {
            let head = r.u16()?;
            let tensor = match r.u8()? {
                0 => KvTensor::Key,
                1 => KvTensor::Value,
                _ => return Err(bad("unknown cache tensor")),
            };
            kv_writes.push(KvWrite { head, tensor, coord: r.u16()?, node: node_ref(r.u32()?)? });
        }
        let refreshes = r.u32()?;
        steps.push(StepGraph { position, nodes, outputs, kv_writes, refreshes });
    }
    r.finish()?;
    Ok(ExecutionPlan { layer, heads, d_emb, max_seq_len, fingerprint, input, steps, compile_time_s })
}
