//! Bootstrap placement by worst-case noise propagation.

use pqllama_fhe::CryptoParams;

use super::graph::{Node, NodeId, NodeKind, Tag};
use crate::error::{Error, Result};

/// Noise a node would carry given its (possibly refreshed) inputs.
fn propagate(params: &CryptoParams, node: &Node, nodes: &[Node]) -> f64 {
    match &node.kind {
        NodeKind::Input { .. } | NodeKind::Cache { .. } => node.noise,
        NodeKind::Linear { terms, .. } => terms
            .iter()
            .filter(|t| t.coeff != 0)
            .map(|t| t.coeff.unsigned_abs() as f64 * nodes[t.node as usize].noise)
            .sum(),
        NodeKind::MulCt { .. } | NodeKind::Lut { .. } | NodeKind::Refresh { .. } => match &node.kind {
            NodeKind::MulCt { .. } => 2.0 * params.pbs_output_noise(),
            _ => params.pbs_output_noise(),
        },
    }
}

/// Noise entering the bootstraps of `node`, or the node's own noise for
/// linear nodes and leaves.
fn demand(node: &Node, nodes: &[Node]) -> f64 {
    match &node.kind {
        NodeKind::MulCt { a, b } => nodes[*a as usize].noise + nodes[*b as usize].noise,
        NodeKind::Lut { input, .. } | NodeKind::Refresh { input } => nodes[*input as usize].noise,
        _ => node.noise,
    }
}

/// Rewrite every input reference of `kind` through `f`.
pub(crate) fn remap_inputs(kind: &mut NodeKind, f: impl Fn(NodeId) -> NodeId) {
    match kind {
        NodeKind::Linear { terms, .. } => {
            for t in terms.iter_mut() {
                t.node = f(t.node);
            }
        }
        NodeKind::MulCt { a, b } => {
            *a = f(*a);
            *b = f(*b);
        }
        NodeKind::Lut { input, .. } | NodeKind::Refresh { input } => *input = f(*input),
        NodeKind::Input { .. } | NodeKind::Cache { .. } => {}
    }
}

fn replace_input(kind: &mut NodeKind, from: NodeId, to: NodeId) {
    match kind {
        NodeKind::Linear { terms, .. } => {
            for t in terms.iter_mut().filter(|t| t.node == from) {
                t.node = to;
            }
        }
        NodeKind::MulCt { a, b } => {
            if *a == from {
                *a = to;
            }
            if *b == from {
                *b = to;
            }
        }
        NodeKind::Lut { input, .. } | NodeKind::Refresh { input } => {
            if *input == from {
                *input = to;
            }
        }
        NodeKind::Input { .. } | NodeKind::Cache { .. } => {}
    }
}

fn contribution(node: &Node, input: NodeId, nodes: &[Node]) -> f64 {
    let n = nodes[input as usize].noise;
    match &node.kind {
        NodeKind::Linear { terms, .. } => {
            terms.iter().filter(|t| t.node == input).map(|t| t.coeff.unsigned_abs() as f64 * n).sum()
        }
        _ => n,
    }
}

/// Result of [`place_pbs`].
#[derive(Debug, Clone)]
pub struct Placement {
    pub nodes: Vec<Node>,
    /// `map[old] = new` node id.
    pub map: Vec<NodeId>,
    pub refreshes: usize,
}

/// Walk the DAG in order and insert identity bootstraps in front of any
/// node whose worst-case noise would reach the bootstrap budget. Every node
/// of the result satisfies `noise < pbs_budget`, so every bootstrap input
/// and every decrypted output is within bounds.
pub fn place_pbs(params: &CryptoParams, graph: Vec<Node>) -> Result<Placement> {
    let budget = params.pbs_budget();
    let e_pbs = params.pbs_output_noise();
    let mut out: Vec<Node> = Vec::with_capacity(graph.len());
    let mut map = Vec::with_capacity(graph.len());
    let mut refreshes = 0;
    for mut node in graph {
        remap_inputs(&mut node.kind, |i| map[i as usize]);
        loop {
            node.noise = propagate(params, &node, &out);
            if demand(&node, &out) < budget && node.noise < budget {
                break;
            }
            let candidate = node
                .inputs()
                .into_iter()
                .filter(|&i| out[i as usize].noise > e_pbs && out[i as usize].width() < params.message_modulus() as i64)
                .max_by(|&x, &y| contribution(&node, x, &out).total_cmp(&contribution(&node, y, &out)));
            let Some(victim) = candidate else {
                return Err(Error::Uncompilable(format!(
                    "node needs noise {:e} below the bootstrap budget {:e} and no input can be refreshed",
                    demand(&node, &out).max(node.noise),
                    budget
                )));
            };
            let src = out[victim as usize].clone();
            let refreshed = Node {
                kind: NodeKind::Refresh { input: victim },
                tag: Tag::Refresh,
                region: node.region,
                noise: e_pbs,
                ..src
            };
            out.push(refreshed);
            refreshes += 1;
            replace_input(&mut node.kind, victim, (out.len() - 1) as NodeId);
        }
        out.push(node);
        map.push((out.len() - 1) as NodeId);
    }
    Ok(Placement { nodes: out, map, refreshes })
}
