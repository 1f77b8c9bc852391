//! Plan execution over any [`Evaluator`], plus the exact real-valued
//! interpretation of the same graph.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use pqllama_fhe::{CryptoParams, Evaluator, LookupTable, NoiseEstimate};
use rayon::prelude::*;

use super::graph::{KvTensor, Node, NodeId, NodeKind, MERGE_REGION};
use super::StepGraph;
use crate::error::{Error, Result};

/// Cached per-position keys and values of the encrypted heads.
#[derive(Debug, Clone)]
pub struct KvStore<C> {
    map: HashMap<(u16, KvTensor, u32, u16), C>,
}

impl<C> Default for KvStore<C> {
    fn default() -> Self {
        Self { map: HashMap::new() }
    }
}

impl<C: Clone> KvStore<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, head: u16, tensor: KvTensor, position: u32, coord: u16) -> Option<&C> {
        self.map.get(&(head, tensor, position, coord))
    }

    pub fn insert(&mut self, head: u16, tensor: KvTensor, position: u32, coord: u16, value: C) {
        self.map.insert((head, tensor, position, coord), value);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn values(&self) -> impl Iterator<Item = &C> {
        self.map.values()
    }

    /// Store the keys and values produced by `step`.
    pub fn commit(&mut self, step: &StepGraph, values: &[C]) {
        for w in &step.kv_writes {
            self.insert(w.head, w.tensor, step.position, w.coord, values[w.node as usize].clone());
        }
    }
}

/// Wraps an evaluator and counts the bootstraps issued through it, so that
/// tallies stay exact when several executions share one key.
pub struct CountingEvaluator<'a, E> {
    inner: &'a E,
    count: AtomicU64,
}

impl<'a, E: Evaluator> CountingEvaluator<'a, E> {
    pub fn new(inner: &'a E) -> Self {
        Self { inner, count: AtomicU64::new(0) }
    }
}

impl<E: Evaluator> Evaluator for CountingEvaluator<'_, E> {
    type Ct = E::Ct;

    fn params(&self) -> &CryptoParams {
        self.inner.params()
    }
    fn trivial(&self, value: i64, plaintext_space: u8) -> Self::Ct {
        self.inner.trivial(value, plaintext_space)
    }
    fn add(&self, a: &Self::Ct, b: &Self::Ct) -> pqllama_fhe::Result<Self::Ct> {
        self.inner.add(a, b)
    }
    fn sub(&self, a: &Self::Ct, b: &Self::Ct) -> pqllama_fhe::Result<Self::Ct> {
        self.inner.sub(a, b)
    }
    fn add_scalar(&self, a: &Self::Ct, k: i64) -> Self::Ct {
        self.inner.add_scalar(a, k)
    }
    fn mul_scalar(&self, a: &Self::Ct, k: i64) -> pqllama_fhe::Result<Self::Ct> {
        self.inner.mul_scalar(a, k)
    }
    fn scale_wrapping(&self, a: &Self::Ct, k: i64) -> Self::Ct {
        self.inner.scale_wrapping(a, k)
    }
    fn widen(&self, a: &Self::Ct) -> Self::Ct {
        self.inner.widen(a)
    }
    fn pbs(&self, a: &Self::Ct, table: &LookupTable) -> pqllama_fhe::Result<Self::Ct> {
        let out = self.inner.pbs(a, table)?;
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }
    fn noise(&self, a: &Self::Ct) -> NoiseEstimate {
        self.inner.noise(a)
    }
    fn plaintext_space(&self, a: &Self::Ct) -> u8 {
        self.inner.plaintext_space(a)
    }
    fn pbs_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Outcome of one step execution.
#[derive(Debug, Clone)]
pub struct StepRun<C> {
    pub outputs: Vec<C>,
    /// Bootstraps actually performed.
    pub pbs: u64,
    /// Every node value, when tracing was requested.
    pub trace: Option<Vec<C>>,
}

fn eval_node<'v, E: Evaluator>(
    ev: &E,
    nodes: &[Node],
    node: &Node,
    get: &dyn Fn(NodeId) -> &'v E::Ct,
    inputs: &[E::Ct],
    kv: &KvStore<E::Ct>,
) -> Result<E::Ct>
where
    E::Ct: 'v,
{
    let w = ev.params().widened_bits();
    Ok(match &node.kind {
        NodeKind::Input { slot } => inputs
            .get(*slot as usize)
            .cloned()
            .ok_or(Error::Shape { expected: *slot as usize + 1, got: inputs.len() })?,
        NodeKind::Cache { head, tensor, position, coord } => kv
            .get(*head, *tensor, *position, *coord)
            .cloned()
            .ok_or_else(|| Error::Plan(format!("no cached {tensor:?} for head {head} at position {position}")))?,
        NodeKind::Linear { terms, .. } => {
            let mut acc: Option<E::Ct> = None;
            for t in terms.iter().filter(|t| t.coeff != 0) {
                let x = get(t.node);
                let scaled = if t.coeff == 1 { x.clone() } else { ev.scale_wrapping(x, t.coeff) };
                acc = Some(match acc {
                    None => scaled,
                    Some(a) => ev.add(&a, &scaled)?,
                });
            }
            match acc {
                Some(a) => ev.widen(&a),
                None => ev.trivial(0, w),
            }
        }
        NodeKind::MulCt { a, b } => ev.mul_ct_signed(get(*a), get(*b))?,
        NodeKind::Lut { input, .. } | NodeKind::Refresh { input } => {
            let lo = nodes[*input as usize].int_lo;
            let shifted = ev.add_scalar(get(*input), -lo);
            let table = node.lookup_table(ev.params()).expect("bootstrap node");
            ev.pbs(&shifted, &table)?
        }
    })
}

/// Contiguous node ranges: inputs, one per encrypted head, then the merge.
pub(crate) fn regions(step: &StepGraph) -> Result<(usize, Vec<(usize, usize)>, usize)> {
    let nodes = &step.nodes;
    let inputs_end = nodes.iter().position(|n| n.region != 0).unwrap_or(nodes.len());
    let merge_start = nodes.iter().position(|n| n.region == MERGE_REGION).unwrap_or(nodes.len());
    let mut heads: Vec<(usize, usize)> = Vec::new();
    let mut i = inputs_end;
    while i < merge_start {
        let r = nodes[i].region;
        let start = i;
        while i < merge_start && nodes[i].region == r {
            i += 1;
        }
        heads.push((start, i));
    }
    let mut seen = std::collections::HashSet::new();
    for &(s, _) in &heads {
        if !seen.insert(nodes[s].region) {
            return Err(Error::Plan("head region is not contiguous".into()));
        }
    }
    if nodes[merge_start..].iter().any(|n| n.region != MERGE_REGION)
        || nodes[..inputs_end].iter().any(|n| n.region != 0)
    {
        return Err(Error::Plan("misplaced node region".into()));
    }
    // Head nodes may only read inputs and their own region.
    for &(s, e) in &heads {
        for n in &nodes[s..e] {
            if n.inputs().iter().any(|&j| (j as usize) >= inputs_end && ((j as usize) < s || (j as usize) >= e)) {
                return Err(Error::Plan("head reads another head's nodes".into()));
            }
        }
    }
    Ok((inputs_end, heads, merge_start))
}

/// Execute `step` over `inputs`, reading earlier keys and values from `kv`
/// and appending this step's. Heads run in parallel.
pub fn run_step<E: Evaluator>(
    ev: &E,
    step: &StepGraph,
    inputs: &[E::Ct],
    kv: &mut KvStore<E::Ct>,
    trace: bool,
) -> Result<StepRun<E::Ct>> {
    let counting = CountingEvaluator::new(ev);
    let ev = &counting;
    let nodes = &step.nodes;
    let (inputs_end, heads, merge_start) = regions(step)?;
    let mut values: Vec<Option<E::Ct>> = vec![None; nodes.len()];
    for id in 0..inputs_end {
        let v = {
            let get = |_j: NodeId| -> &E::Ct { unreachable!("input nodes have no operands") };
            eval_node(ev, nodes, &nodes[id], &get, inputs, kv)?
        };
        values[id] = Some(v);
    }
    {
        let kv_ref: &KvStore<E::Ct> = kv;
        let (pre, rest) = values.split_at_mut(inputs_end);
        let pre: &[Option<E::Ct>] = pre;
        let (mut remaining, _) = rest.split_at_mut(merge_start - inputs_end);
        let mut chunks = Vec::new();
        for &(s, e) in &heads {
            let (c, tail) = remaining.split_at_mut(e - s);
            chunks.push((s, c));
            remaining = tail;
        }
        chunks.into_par_iter().try_for_each(|(start, chunk)| -> Result<()> {
            for i in 0..chunk.len() {
                let v = {
                    let (done, _) = chunk.split_at(i);
                    let get = |j: NodeId| -> &E::Ct {
                        let j = j as usize;
                        if j < inputs_end { pre[j].as_ref() } else { done[j - start].as_ref() }.expect("operand computed")
                    };
                    eval_node(ev, nodes, &nodes[start + i], &get, inputs, kv_ref)?
                };
                chunk[i] = Some(v);
            }
            Ok(())
        })?;
    }
    for id in merge_start..nodes.len() {
        let v = {
            let vals = &values;
            let get = |j: NodeId| -> &E::Ct { vals[j as usize].as_ref().expect("operand computed") };
            eval_node(ev, nodes, &nodes[id], &get, inputs, kv)?
        };
        values[id] = Some(v);
    }
    let values: Vec<E::Ct> = values.into_iter().map(|v| v.expect("all nodes evaluated")).collect();
    kv.commit(step, &values);
    let outputs = step.outputs.iter().map(|&o| values[o as usize].clone()).collect();
    Ok(StepRun { outputs, pbs: ev.pbs_count(), trace: trace.then_some(values) })
}

/// Exact real value of every node for real inputs `x`, with cached keys and
/// values taken from `kv`. Appends this step's keys and values to `kv`.
pub fn interpret(step: &StepGraph, x: &[f64], kv: &mut KvStore<f64>) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = Vec::with_capacity(step.nodes.len());
    for n in &step.nodes {
        let y = match &n.kind {
            NodeKind::Input { slot } => {
                *x.get(*slot as usize).ok_or(Error::Shape { expected: *slot as usize + 1, got: x.len() })?
            }
            NodeKind::Cache { head, tensor, position, coord } => *kv
                .get(*head, *tensor, *position, *coord)
                .ok_or_else(|| Error::Plan(format!("no cached {tensor:?} for head {head} at position {position}")))?,
            NodeKind::Linear { terms, bias } => terms.iter().map(|t| t.weight * v[t.node as usize]).sum::<f64>() + bias,
            NodeKind::MulCt { a, b } => v[*a as usize] * v[*b as usize],
            NodeKind::Lut { input, func, .. } => func.eval(v[*input as usize]),
            NodeKind::Refresh { input } => v[*input as usize],
        };
        v.push(y);
    }
    kv.commit(step, &v);
    Ok(v)
}
