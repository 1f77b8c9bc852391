//! Circuit nodes and the graph builder.
//!
//! Every node carries an integer `u` (a residue on the torus, known to lie
//! in `[int_lo, int_hi]`) that represents the real `scale·u + offset`.
//! Constant offsets never enter a ciphertext: they are folded into the clear
//! bookkeeping of the consumers. Alongside, each node records the interval
//! of its exact real value, an upper bound on `|exact - dequantized|`, and
//! its worst-case noise.
//!
//! Intervals and bounds come in two flavours. The plain ones hold for every
//! input drawn from the calibrated input box. The `cal_*` ones hold in the
//! calibrated regime, where every input and every table output has its
//! exact value inside the window its quantizer can represent, so nothing
//! saturates. Outside that regime a static softmax shift lets the exact
//! exponentials grow without limit and the plain bounds become very loose.

use pqllama_fhe::{CryptoParams, LookupTable, NoiseEstimate};

use crate::error::{Error, Result};
use crate::quant::QuantParams;

pub type NodeId = u32;

/// Bit width of the intermediate codes produced inside reduction trees.
pub const TREE_BITS: u8 = 3;

/// Relative slack added to every analytic bound to absorb floating-point
/// rounding in its own evaluation.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonLinear {
    Identity,
    /// `exp(x - shift)`.
    Exp { shift: f64 },
    /// `1 / max(x, eps)`.
    Reciprocal { eps: f64 },
}

impl NonLinear {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            NonLinear::Identity => x,
            NonLinear::Exp { shift } => (x - shift).exp(),
            NonLinear::Reciprocal { eps } => 1.0 / x.max(eps),
        }
    }

    /// Image of `[lo, hi]`. All supported functions are monotone.
    pub fn image(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (a, b) = (self.eval(lo), self.eval(hi));
        (a.min(b), a.max(b))
    }

    /// Inputs in `[lo, hi]` whose image lies in `[y_lo, y_hi]`, as an
    /// interval (possibly empty, with `lo > hi`).
    pub fn preimage(&self, lo: f64, hi: f64, y_lo: f64, y_hi: f64) -> (f64, f64) {
        match *self {
            NonLinear::Identity => (lo.max(y_lo), hi.min(y_hi)),
            NonLinear::Exp { shift } => {
                let a = if y_lo > 0.0 { shift + y_lo.ln() } else { f64::NEG_INFINITY };
                let b = if y_hi > 0.0 { shift + y_hi.ln() } else { f64::NEG_INFINITY };
                (lo.max(a), hi.min(b))
            }
            NonLinear::Reciprocal { eps } => {
                // Decreasing, with value 1/eps below eps.
                if y_hi <= 0.0 || y_lo > 1.0 / eps {
                    return (f64::INFINITY, f64::NEG_INFINITY);
                }
                let a = if 1.0 / y_hi > eps { 1.0 / y_hi } else { f64::NEG_INFINITY };
                let b = if y_lo > 0.0 { 1.0 / y_lo } else { f64::INFINITY };
                (lo.max(a), hi.min(b))
            }
        }
    }

    /// Lipschitz constant on `[lo, hi]`.
    pub fn lipschitz(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            NonLinear::Identity => 1.0,
            NonLinear::Exp { shift } => (hi - shift).exp(),
            NonLinear::Reciprocal { eps } => 1.0 / lo.max(eps).powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KvTensor {
    Key = 0,
    Value = 1,
}

/// Role of a node inside the attention circuit, for inspection and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Input = 0,
    Cache = 1,
    Linear = 2,
    Product = 3,
    Partial = 4,
    Query = 5,
    Key = 6,
    Value = 7,
    Exp = 8,
    Recip = 9,
    Prob = 10,
    Context = 11,
    HeadOut = 12,
    Merge = 13,
    Refresh = 14,
    Lut = 15,
}

impl Tag {
    pub fn from_u8(v: u8) -> Option<Self> {
        use Tag::*;
        [Input, Cache, Linear, Product, Partial, Query, Key, Value, Exp, Recip, Prob, Context, HeadOut, Merge, Refresh, Lut]
            .get(v as usize)
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub node: NodeId,
    /// Integer coefficient applied homomorphically. Zero terms are skipped
    /// by the executor but still counted in the error bound.
    pub coeff: i64,
    /// Clear real weight the coefficient approximates.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Client ciphertext number `slot` of the step.
    Input { slot: u32 },
    /// Ciphertext kept in the server's cache from an earlier step.
    Cache { head: u16, tensor: KvTensor, position: u32, coord: u16 },
    Linear { terms: Vec<Term>, bias: f64 },
    /// Signed product through two bootstraps.
    MulCt { a: NodeId, b: NodeId },
    /// One bootstrap. `table[i]` is the output for input integer `in_lo + i`.
    Lut { input: NodeId, func: NonLinear, out: QuantParams, table: Vec<i8> },
    /// Identity bootstrap that only resets noise.
    Refresh { input: NodeId },
}

/// Region `0` holds the step inputs, `1 + h` the nodes of head `h`, and
/// [`MERGE_REGION`] the cross-head reduction.
pub const MERGE_REGION: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub tag: Tag,
    pub region: u16,
    pub scale: f64,
    pub offset: f64,
    pub int_lo: i64,
    pub int_hi: i64,
    pub true_lo: f64,
    pub true_hi: f64,
    pub bound: f64,
    /// Exact interval in the calibrated regime.
    pub cal_lo: f64,
    pub cal_hi: f64,
    /// Error bound in the calibrated regime.
    pub cal_bound: f64,
    /// Worst-case noise on the torus.
    pub noise: f64,
}

impl Node {
    pub fn inputs(&self) -> Vec<NodeId> {
        match &self.kind {
            NodeKind::Input { .. } | NodeKind::Cache { .. } => vec![],
            NodeKind::Linear { terms, .. } => terms.iter().map(|t| t.node).collect(),
            NodeKind::MulCt { a, b } => vec![*a, *b],
            NodeKind::Lut { input, .. } | NodeKind::Refresh { input } => vec![*input],
        }
    }

    pub fn pbs_sites(&self) -> u64 {
        match self.kind {
            NodeKind::Lut { .. } | NodeKind::Refresh { .. } => 1,
            NodeKind::MulCt { .. } => 2,
            _ => 0,
        }
    }

    pub fn dequantize(&self, u: i64) -> f64 {
        self.scale * u as f64 + self.offset
    }

    /// Interval of dequantized values the node can take.
    pub fn computed_range(&self) -> (f64, f64) {
        (self.dequantize(self.int_lo), self.dequantize(self.int_hi))
    }

    /// Integer encoded by a residue in `Z_m`, using the static interval.
    pub fn decode(&self, residue: u64, modulus: u64) -> i64 {
        self.int_lo + (residue as i64 - self.int_lo).rem_euclid(modulus as i64)
    }

    pub fn width(&self) -> i64 {
        self.int_hi - self.int_lo
    }

    pub fn lookup_table(&self, params: &CryptoParams) -> Option<LookupTable> {
        let w = params.widened_bits();
        let p = params.message_modulus() as usize;
        match &self.kind {
            NodeKind::Lut { table, .. } => {
                let mut e: Vec<i64> = table.iter().map(|&v| v as i64).collect();
                e.resize(p, *e.last().unwrap_or(&0));
                Some(LookupTable::from_fn(w, w, |i| e[i as usize]))
            }
            NodeKind::Refresh { .. } => {
                let lo = self.int_lo;
                let hi = self.int_hi;
                Some(LookupTable::from_fn(w, w, |i| (lo + i as i64).min(hi)))
            }
            _ => None,
        }
    }
}

fn slack(b: f64) -> f64 {
    b * (1.0 + BOUND_SLACK) + 1e-12
}

/// `a` unless it is empty.
fn nonempty(a: (f64, f64), fallback: (f64, f64)) -> (f64, f64) {
    if a.0 <= a.1 {
        a
    } else {
        fallback
    }
}

/// Computed values within `bound` of an exact value in `exact`.
fn reachable(computed: (f64, f64), exact: (f64, f64), bound: f64) -> (f64, f64) {
    nonempty((computed.0.max(exact.0 - bound), computed.1.min(exact.1 + bound)), computed)
}

fn mul_interval(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn mul_int_interval(a: (i64, i64), b: (i64, i64)) -> (i64, i64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (*c.iter().min().unwrap(), *c.iter().max().unwrap())
}

fn scale_int(c: i64, lo: i64, hi: i64) -> (i64, i64) {
    if c >= 0 {
        (c * lo, c * hi)
    } else {
        (c * hi, c * lo)
    }
}

fn scale_real(w: f64, lo: f64, hi: f64) -> (f64, f64) {
    if w >= 0.0 {
        (w * lo, w * hi)
    } else {
        (w * hi, w * lo)
    }
}

/// How a linear node turns real weights into integer coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coeffs {
    /// Output scale fixed by the caller; coefficients are expected to be
    /// (close to) integers.
    Exact(f64),
    /// Largest `|weight·input_scale|` maps to `2^(bits-1) - 1`.
    Quantized(u8),
}

/// Append-only DAG builder. Ranges, bounds and noise are computed as nodes
/// are added, so every node id refers to an already complete node.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    pub params: CryptoParams,
    pub nodes: Vec<Node>,
    pub region: u16,
}

impl GraphBuilder {
    pub fn new(params: CryptoParams) -> Self {
        Self { params, nodes: Vec::new(), region: 0 }
    }

    fn modulus(&self) -> i64 {
        self.params.message_modulus() as i64
    }

    fn budget(&self) -> f64 {
        self.params.pbs_budget()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        (self.nodes.len() - 1) as NodeId
    }

    /// A client ciphertext holding the unsigned code of a value quantized
    /// with `q`. `range` is the interval the exact values are drawn from.
    pub fn input(&mut self, slot: u32, q: &QuantParams, range: (f64, f64)) -> NodeId {
        let (r_lo, r_hi) = q.representable();
        let bound = (q.scale / 2.0).max(range.1 - r_hi).max(r_lo - range.0);
        let (cal_lo, cal_hi) = nonempty((range.0.max(r_lo), range.1.min(r_hi)), range);
        let node = Node {
            kind: NodeKind::Input { slot },
            tag: Tag::Input,
            region: self.region,
            scale: q.scale,
            offset: -q.scale * q.zero_point as f64,
            int_lo: 0,
            int_hi: q.max_code(),
            true_lo: range.0,
            true_hi: range.1,
            bound: slack(bound),
            cal_lo,
            cal_hi,
            cal_bound: slack(q.scale / 2.0),
            noise: self.params.fresh_noise,
        };
        self.push(node)
    }

    /// A cached ciphertext whose bookkeeping is copied from the node that
    /// produced it.
    pub fn cache(&mut self, head: u16, tensor: KvTensor, position: u32, coord: u16, source: &Node) -> NodeId {
        let node = Node {
            kind: NodeKind::Cache { head, tensor, position, coord },
            tag: Tag::Cache,
            region: self.region,
            ..source.clone()
        };
        self.push(node)
    }

    /// `Σ w_i x_i + bias`, split into a reduction tree when the integer
    /// range or the accumulated noise does not fit a single bootstrap input.
    pub fn linear(&mut self, terms: &[(NodeId, f64)], bias: f64, coeffs: Coeffs, tag: Tag) -> Result<NodeId> {
        let terms: Vec<(NodeId, f64)> = terms.iter().copied().filter(|&(_, w)| w != 0.0).collect();
        let scale = match coeffs {
            Coeffs::Exact(s) => s,
            Coeffs::Quantized(bits) => {
                let cmax = ((1i64 << (bits - 1)) - 1) as f64;
                let m = terms.iter().map(|&(n, w)| (w * self.node(n).scale).abs()).fold(0.0, f64::max);
                m / cmax
            }
        };
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        let full: Vec<Term> = terms
            .iter()
            .map(|&(n, w)| Term { node: n, coeff: (w * self.node(n).scale / scale).round() as i64, weight: w })
            .collect();
        self.reduce(full, bias, scale, tag)
    }

    fn term_range(&self, t: &Term) -> (i64, i64) {
        let n = self.node(t.node);
        scale_int(t.coeff, n.int_lo, n.int_hi)
    }

    fn term_noise(&self, t: &Term) -> f64 {
        if t.coeff == 0 {
            0.0
        } else {
            t.coeff.unsigned_abs() as f64 * self.node(t.node).noise
        }
    }

    fn reduce(&mut self, terms: Vec<Term>, bias: f64, scale: f64, tag: Tag) -> Result<NodeId> {
        let limit = self.modulus() - 1;
        let budget = self.budget();
        let (mut lo, mut hi, mut noise) = (0i64, 0i64, 0.0);
        for t in &terms {
            let (a, b) = self.term_range(t);
            lo += a;
            hi += b;
            noise += self.term_noise(t);
        }
        if hi - lo <= limit && noise < budget {
            return Ok(self.linear_node(terms, bias, scale, tag));
        }
        // Greedy grouping of the non-zero terms.
        let mut groups: Vec<Vec<Term>> = Vec::new();
        let mut zeros = Vec::new();
        let (mut glo, mut ghi, mut gnoise) = (0i64, 0i64, 0.0);
        for t in terms {
            if t.coeff == 0 {
                zeros.push(t);
                continue;
            }
            let (a, b) = self.term_range(&t);
            if b - a > limit {
                return Err(Error::Uncompilable(format!(
                    "term with coefficient {} spans {} integers, more than the {} available",
                    t.coeff,
                    b - a + 1,
                    limit + 1
                )));
            }
            let e = self.term_noise(&t);
            let fits = (ghi + b) - (glo + a) <= limit && gnoise + e < budget;
            if groups.is_empty() || !fits {
                groups.push(Vec::new());
                (glo, ghi, gnoise) = (0, 0, 0.0);
            }
            glo += a;
            ghi += b;
            gnoise += e;
            groups.last_mut().unwrap().push(t);
        }
        if groups.is_empty() {
            return Ok(self.linear_node(zeros, bias, scale, tag));
        }
        if groups.len() == 1 {
            // Only the noise can be the obstacle here; refreshes are left to
            // the placement pass.
            let mut g = groups.pop().unwrap();
            g.extend(zeros);
            return Ok(self.linear_node(g, bias, scale, tag));
        }
        groups[0].extend(zeros);
        let partials: Vec<NodeId> = groups.into_iter().map(|g| self.linear_node(g, 0.0, scale, Tag::Linear)).collect();
        // Shared scale so that the next level adds codes with coefficient 1.
        // Windows cover both the computed values and the exact values of the
        // calibrated regime, so tree requantization never leaves it.
        let levels = ((1i64 << TREE_BITS) - 1) as f64;
        let window = |n: &Node| {
            let (a, b) = n.computed_range();
            (a.min(n.cal_lo).min(0.0), b.max(n.cal_hi).max(0.0))
        };
        let span = partials.iter().map(|&p| {
            let (a, b) = window(self.node(p));
            b - a
        });
        let span = span.fold(0.0, f64::max);
        // Zero points are integers, so a window that fills all levels may
        // not fit; one spare level always does.
        let zero_point = |s2: f64, (a, b): (f64, f64)| {
            let zp = (-a / s2 - 1e-9).ceil().max(0.0);
            (zp + b / s2 <= levels + 1e-9).then_some(zp as i64)
        };
        let mut s2 = if span > 0.0 { span / levels } else { 1.0 };
        if partials.iter().any(|&p| zero_point(s2, window(self.node(p))).is_none()) {
            s2 = span / (levels - 1.0);
        }
        let mut next = Vec::new();
        for p in partials {
            let (a, b) = window(self.node(p));
            let zp = zero_point(s2, (a, b)).expect("window fits with a spare level");
            let q = QuantParams {
                n_bits: TREE_BITS,
                scale: s2,
                zero_point: zp,
                observed_min: a,
                observed_max: b,
                degenerate: false,
            };
            let r = self.lut(p, NonLinear::Identity, q, Tag::Partial)?;
            next.push(Term { node: r, coeff: 1, weight: 1.0 });
        }
        self.reduce(next, bias, s2, tag)
    }

    /// A single linear node with the given coefficients, without range or
    /// noise splitting.
    pub fn linear_unreduced(&mut self, terms: Vec<Term>, bias: f64, scale: f64, tag: Tag) -> NodeId {
        self.linear_node(terms, bias, scale, tag)
    }

    fn linear_node(&mut self, terms: Vec<Term>, bias: f64, scale: f64, tag: Tag) -> NodeId {
        let (mut lo, mut hi, mut noise) = (0i64, 0i64, 0.0);
        let mut offset = bias;
        let (mut tlo, mut thi) = (bias, bias);
        let (mut clo, mut chi) = (bias, bias);
        let (mut bound, mut cal_bound) = (0.0, 0.0);
        for t in &terms {
            let n = self.node(t.node);
            let (a, b) = self.term_range(t);
            lo += a;
            hi += b;
            noise += self.term_noise(t);
            offset += t.weight * n.offset;
            let (x, y) = scale_real(t.weight, n.true_lo, n.true_hi);
            tlo += x;
            thi += y;
            let (x, y) = scale_real(t.weight, n.cal_lo, n.cal_hi);
            clo += x;
            chi += y;
            let umax = n.int_lo.unsigned_abs().max(n.int_hi.unsigned_abs()) as f64;
            let coeff_err = (scale * t.coeff as f64 - t.weight * n.scale).abs() * umax;
            bound += coeff_err + t.weight.abs() * n.bound;
            cal_bound += coeff_err + t.weight.abs() * n.cal_bound;
        }
        let node = Node {
            kind: NodeKind::Linear { terms, bias },
            tag,
            region: self.region,
            scale,
            offset,
            int_lo: lo,
            int_hi: hi,
            true_lo: tlo,
            true_hi: thi,
            bound: slack(bound),
            cal_lo: clo,
            cal_hi: chi,
            cal_bound: slack(cal_bound),
            noise,
        };
        self.push(node)
    }

    /// Product of two centred nodes via the quarter-square identity.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.offset != 0.0 || nb.offset != 0.0 {
            return Err(Error::Plan("ciphertext products need centred operands".into()));
        }
        let half = self.modulus() / 2;
        let sums = [na.int_lo + nb.int_lo, na.int_hi + nb.int_hi, na.int_lo - nb.int_hi, na.int_hi - nb.int_lo];
        if sums.iter().any(|&s| s < -half || s >= half) {
            return Err(Error::Uncompilable(format!(
                "operands [{}, {}] and [{}, {}] overflow the signed product window",
                na.int_lo, na.int_hi, nb.int_lo, nb.int_hi
            )));
        }
        let (lo, hi) = mul_int_interval((na.int_lo, na.int_hi), (nb.int_lo, nb.int_hi));
        if hi - lo >= self.modulus() {
            return Err(Error::Uncompilable(format!("product range [{lo}, {hi}] is too wide")));
        }
        let (tlo, thi) = mul_interval((na.true_lo, na.true_hi), (nb.true_lo, nb.true_hi));
        let (clo, chi) = mul_interval((na.cal_lo, na.cal_hi), (nb.cal_lo, nb.cal_hi));
        // x·y - x̂·ŷ = x·(y - ŷ) + ŷ·(x - x̂)
        let a_true = na.true_lo.abs().max(na.true_hi.abs());
        let a_cal = na.cal_lo.abs().max(na.cal_hi.abs());
        let (cb_lo, cb_hi) = nb.computed_range();
        let b_comp = cb_lo.abs().max(cb_hi.abs());
        let node = Node {
            kind: NodeKind::MulCt { a, b },
            tag: Tag::Product,
            region: self.region,
            scale: na.scale * nb.scale,
            offset: 0.0,
            int_lo: lo,
            int_hi: hi,
            true_lo: tlo,
            true_hi: thi,
            bound: slack(a_true * nb.bound + b_comp * na.bound),
            cal_lo: clo,
            cal_hi: chi,
            cal_bound: slack(a_cal * nb.cal_bound + b_comp * na.cal_bound),
            noise: 2.0 * self.params.pbs_output_noise(),
        };
        Ok(self.push(node))
    }

    /// `f` followed by quantization to `out`; the result is the centred code
    /// `code - zero_point`.
    pub fn lut(&mut self, input: NodeId, func: NonLinear, out: QuantParams, tag: Tag) -> Result<NodeId> {
        let n = self.node(input).clone();
        if n.width() >= self.modulus() {
            return Err(Error::Uncompilable(format!("bootstrap input range [{}, {}] is too wide", n.int_lo, n.int_hi)));
        }
        let mut table = Vec::with_capacity(n.width() as usize + 1);
        for u in n.int_lo..=n.int_hi {
            let y = func.eval(n.dequantize(u));
            if !y.is_finite() {
                return Err(Error::Table(format!("non-finite table value at {u}")));
            }
            table.push((out.quantize(y) - out.zero_point) as i8);
        }
        let lo = *table.iter().min().unwrap() as i64;
        let hi = *table.iter().max().unwrap() as i64;
        let (r_lo, r_hi) = out.representable();
        let c = n.computed_range();

        // The output is always a point of [r_lo, r_hi], which caps the error
        // against any exact value in a known interval.
        let (tlo, thi) = func.image(n.true_lo, n.true_hi);
        let (d_lo, d_hi) = reachable(c, (n.true_lo, n.true_hi), n.bound);
        let lip = func.lipschitz(d_lo.min(n.true_lo), d_hi.max(n.true_hi));
        let (f_lo, f_hi) = func.image(d_lo, d_hi);
        let requant = (out.scale / 2.0).max(f_hi - r_hi).max(r_lo - f_lo);
        let cap = (thi - r_lo).max(r_hi - tlo).max(0.0);
        let bound = (lip * n.bound + requant).min(cap);

        // In the calibrated regime f(x) lies in [r_lo, r_hi], hence
        // |Q(f(x̂)) - f(x)| <= s/2 + |f(x̂) - f(x)| and <= r_hi - r_lo.
        let (x_lo, x_hi) = nonempty(func.preimage(n.cal_lo, n.cal_hi, r_lo, r_hi), (n.cal_lo, n.cal_hi));
        let (ylo, yhi) = func.image(x_lo, x_hi);
        let (clo, chi) = nonempty((ylo.max(r_lo), yhi.min(r_hi)), (ylo, yhi));
        let (e_lo, e_hi) = reachable(c, (x_lo, x_hi), n.cal_bound);
        let lip = func.lipschitz(e_lo.min(x_lo), e_hi.max(x_hi));
        let cal_bound = (out.scale / 2.0 + lip * n.cal_bound).min(r_hi - r_lo);
        let node = Node {
            kind: NodeKind::Lut { input, func, out, table },
            tag,
            region: self.region,
            scale: out.scale,
            offset: 0.0,
            int_lo: lo,
            int_hi: hi,
            true_lo: tlo,
            true_hi: thi,
            bound: slack(bound),
            cal_lo: clo,
            cal_hi: chi,
            cal_bound: slack(cal_bound),
            noise: self.params.pbs_output_noise(),
        };
        Ok(self.push(node))
    }

    /// Identity bootstrap that resets the noise of `input`.
    pub fn refresh(&mut self, input: NodeId) -> Result<NodeId> {
        let n = self.node(input).clone();
        if n.width() >= self.modulus() {
            return Err(Error::Uncompilable("refresh input range is too wide".into()));
        }
        let node = Node {
            kind: NodeKind::Refresh { input },
            tag: Tag::Refresh,
            region: self.region,
            noise: NoiseEstimate::bootstrapped(&self.params).magnitude,
            ..n
        };
        Ok(self.push(node))
    }
}
