//! Reverse-mode differentiation over a static graph of vector-valued nodes.
//!
//! A [`Graph`] is built once and evaluated many times. All mutable state
//! (values, adjoints, parameter gradients, max bookkeeping) lives in a
//! [`Workspace`], so one graph can serve several callers as long as each
//! owns its workspace.
//!
//! The op set is deliberately narrow: the elementwise fuzzy-logic primitives,
//! segmented reductions, and two fused ops ([`Op::Conjunction`] and
//! [`Op::Disjunction`]) that evaluate membership-gated rule layers directly
//! against a valuation vector without materialising the gathered inputs.

use std::sync::Arc;

use thiserror::Error;

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("node #{node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node #{0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("expected {expected} parameter values, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("node #{0} is not an input node")]
    NotAnInput(usize),
    #[error("output node #{node} has length {len}; a scalar output is required")]
    NonScalarOutput { node: usize, len: usize },
}

/// A block of literals sharing one row indexing scheme.
///
/// Row `r` reads `index[r * width + i]` from the source vector for literal
/// `i`; `columns[i]` is the membership column gating that literal and
/// `negated[i]` flips it to `1 - x`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiteralBlock {
    pub columns: Vec<u32>,
    pub negated: Vec<bool>,
    pub index: Vec<u32>,
}

impl LiteralBlock {
    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

/// Gather layout for a membership-gated conjunction with existential
/// aggregation.
///
/// For head grounding `e`, substitution `s` and rule `j` the rule value is
/// the product of the gated factors of three blocks: `head` (rows indexed by
/// `e`), `sub` (rows indexed by `s`) and `joint` (rows indexed by
/// `e * substitutions + s`). The op output is `max_s` of that product.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConjunctionPlan {
    pub heads: usize,
    pub substitutions: usize,
    pub atoms: usize,
    pub head: LiteralBlock,
    pub sub: LiteralBlock,
    pub joint: LiteralBlock,
}

impl ConjunctionPlan {
    fn check(&self, source_len: usize) -> Result<(), String> {
        if self.substitutions == 0 {
            return Err("plan has zero substitutions".into());
        }
        let blocks = [
            ("head", &self.head, self.heads),
            ("sub", &self.sub, self.substitutions),
            ("joint", &self.joint, self.heads * self.substitutions),
        ];
        for (name, block, rows) in blocks {
            if block.negated.len() != block.width() {
                return Err(format!("{name} block polarity length mismatch"));
            }
            if block.index.len() != rows * block.width() {
                return Err(format!(
                    "{name} block has {} indices, expected {}",
                    block.index.len(),
                    rows * block.width()
                ));
            }
            if let Some(&c) = block.columns.iter().find(|&&c| c as usize >= self.atoms) {
                return Err(format!("{name} block column {c} out of range"));
            }
            if let Some(&i) = block.index.iter().find(|&&i| i as usize >= source_len) {
                return Err(format!("{name} block index {i} outside source of length {source_len}"));
            }
        }
        Ok(())
    }

    /// Total literal count per (head, substitution) row.
    pub fn row_width(&self) -> usize {
        self.head.width() + self.sub.width() + self.joint.width()
    }
}

/// One weighted binary cross-entropy term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BceTerm {
    pub index: usize,
    pub label: f64,
    pub weight: f64,
}

/// Offset added inside logarithms of the cross-entropy terms.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
pub enum Op {
    Constant(Vec<f64>),
    /// Values supplied per evaluation through [`Workspace::set_input`].
    Input,
    /// A contiguous slice of the flat parameter vector.
    Parameter { offset: usize },
    Sigmoid(NodeId),
    OneMinus(NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    ProductReduce { input: NodeId, group: usize },
    MaxReduce { input: NodeId, group: usize },
    SumReduce { input: NodeId, group: usize },
    Concat(Vec<NodeId>),
    Slice { input: NodeId, offset: usize },
    /// Copy of `store` whose slice at `offset` is `max(old, update)`.
    Amalgamate {
        store: NodeId,
        offset: usize,
        update: NodeId,
    },
    /// `[heads x rules]` output of `max_s prod_i (1 - m_ji (1 - x_i))`.
    /// Without memberships every literal is fully included and `rules == 1`.
    Conjunction {
        source: NodeId,
        memberships: Option<NodeId>,
        plan: Arc<ConjunctionPlan>,
        rules: usize,
    },
    /// `[rows]` output of `1 - prod_j (1 - r_j m_j)` over groups of `width`.
    Disjunction {
        input: NodeId,
        memberships: Option<NodeId>,
        width: usize,
    },
    /// Scalar `-sum_k y_k log softmax(z)_k`.
    SoftmaxCrossEntropy { logits: NodeId, labels: NodeId },
    /// Scalar sum of weighted binary cross-entropies of selected entries.
    BinaryCrossEntropy { input: NodeId, terms: Arc<[BceTerm]> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant(_) => "constant",
            Op::Input => "input",
            Op::Parameter { .. } => "parameter",
            Op::Sigmoid(_) => "sigmoid",
            Op::OneMinus(_) => "one-minus",
            Op::Mul(..) => "elementwise-product",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::ProductReduce { .. } => "product-reduce",
            Op::MaxReduce { .. } => "max-reduce",
            Op::SumReduce { .. } => "sum-reduce",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Amalgamate { .. } => "amalgamate",
            Op::Conjunction { .. } => "conjunction",
            Op::Disjunction { .. } => "disjunction",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Op::BinaryCrossEntropy { .. } => "binary-cross-entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Constant(_) | Op::Input | Op::Parameter { .. } => vec![],
            Op::Sigmoid(a) | Op::OneMinus(a) | Op::Scale(a, _) => vec![*a],
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::ProductReduce { input, .. }
            | Op::MaxReduce { input, .. }
            | Op::SumReduce { input, .. }
            | Op::Slice { input, .. }
            | Op::BinaryCrossEntropy { input, .. } => vec![*input],
            Op::Concat(parts) => parts.clone(),
            Op::Amalgamate { store, update, .. } => vec![*store, *update],
            Op::Conjunction {
                source,
                memberships,
                ..
            } => std::iter::once(*source).chain(*memberships).collect(),
            Op::Disjunction {
                input, memberships, ..
            } => std::iter::once(*input).chain(*memberships).collect(),
            Op::SoftmaxCrossEntropy { logits, labels } => vec![*logits, *labels],
        }
    }

    fn is_kink(&self) -> bool {
        matches!(
            self,
            Op::MaxReduce { .. } | Op::Amalgamate { .. } | Op::Conjunction { .. }
        )
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    len: usize,
    requires_grad: bool,
}

/// Static computation graph. Nodes only reference earlier nodes.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_count: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of scalar parameters the graph reads.
    pub fn parameter_count(&self) -> usize {
        self.param_count
    }

    pub fn node_len(&self, id: NodeId) -> usize {
        self.nodes[id.0].len
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn len_of(&self, id: NodeId) -> Result<usize, TapeError> {
        self.nodes
            .get(id.0)
            .map(|n| n.len)
            .ok_or(TapeError::UnknownNode(id.0))
    }

    fn shape_err(&self, op: &Op, detail: impl Into<String>) -> TapeError {
        TapeError::Shape {
            node: self.nodes.len(),
            op: op.name(),
            detail: detail.into(),
        }
    }

    /// Appends `op`, checking shapes against its inputs.
    pub fn push(&mut self, op: Op) -> Result<NodeId, TapeError> {
        let inputs = op.inputs();
        for id in &inputs {
            self.len_of(*id)?;
        }
        let len = self.infer_len(&op)?;
        let requires_grad = match op {
            Op::Parameter { .. } => true,
            _ => inputs.iter().any(|id| self.nodes[id.0].requires_grad),
        };
        if let Op::Parameter { offset } = op {
            self.param_count = self.param_count.max(offset + len);
        }
        self.nodes.push(Node {
            op,
            len,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn infer_len(&self, op: &Op) -> Result<usize, TapeError> {
        let len = |id: &NodeId| self.nodes[id.0].len;
        let grouped = |input: &NodeId, group: usize| {
            if group == 0 || len(input) % group != 0 {
                Err(self.shape_err(
                    op,
                    format!("input length {} not divisible by group {group}", len(input)),
                ))
            } else {
                Ok(len(input) / group)
            }
        };
        match op {
            Op::Constant(v) => Ok(v.len()),
            Op::Input | Op::Parameter { .. } => {
                Err(self.shape_err(op, "use the dedicated constructor"))
            }
            Op::Sigmoid(a) | Op::OneMinus(a) | Op::Scale(a, _) => Ok(len(a)),
            Op::Mul(a, b) | Op::Add(a, b) => {
                if len(a) != len(b) {
                    Err(self.shape_err(op, format!("lengths {} and {} differ", len(a), len(b))))
                } else {
                    Ok(len(a))
                }
            }
            Op::ProductReduce { input, group }
            | Op::MaxReduce { input, group }
            | Op::SumReduce { input, group } => grouped(input, *group),
            Op::Concat(parts) => Ok(parts.iter().map(len).sum()),
            Op::Slice { .. } => Err(self.shape_err(op, "use Graph::slice")),
            Op::Amalgamate {
                store,
                offset,
                update,
            } => {
                if offset + len(update) > len(store) {
                    Err(self.shape_err(op, "update slice exceeds store"))
                } else {
                    Ok(len(store))
                }
            }
            Op::Conjunction {
                source,
                memberships,
                plan,
                rules,
            } => {
                plan.check(len(source)).map_err(|d| self.shape_err(op, d))?;
                match memberships {
                    Some(m) if len(m) != rules * plan.atoms => Err(self.shape_err(
                        op,
                        format!("memberships length {} != {rules} x {}", len(m), plan.atoms),
                    )),
                    None if *rules != 1 => Err(self.shape_err(op, "ungated conjunction needs one rule")),
                    _ => Ok(plan.heads * rules),
                }
            }
            Op::Disjunction {
                input,
                memberships,
                width,
            } => {
                if let Some(m) = memberships {
                    if len(m) != *width {
                        return Err(self.shape_err(op, "membership length must equal width"));
                    }
                }
                grouped(input, *width)
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                if len(logits) != len(labels) || len(logits) == 0 {
                    Err(self.shape_err(op, "logits and labels must be non-empty and equal length"))
                } else {
                    Ok(1)
                }
            }
            Op::BinaryCrossEntropy { input, terms } => {
                if terms.iter().any(|t| t.index >= len(input)) {
                    Err(self.shape_err(op, "term index out of range"))
                } else {
                    Ok(1)
                }
            }
        }
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        self.push(Op::Constant(values)).expect("constants have no inputs")
    }

    pub fn input(&mut self, len: usize) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            len,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Reads `len` parameters starting at `offset`.
    pub fn parameter(&mut self, offset: usize, len: usize) -> NodeId {
        self.param_count = self.param_count.max(offset + len);
        self.nodes.push(Node {
            op: Op::Parameter { offset },
            len,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn slice(&mut self, input: NodeId, offset: usize, len: usize) -> Result<NodeId, TapeError> {
        let op = Op::Slice { input, offset };
        if offset + len > self.len_of(input)? {
            return Err(self.shape_err(&op, "slice out of range"));
        }
        let requires_grad = self.nodes[input.0].requires_grad;
        self.nodes.push(Node {
            op,
            len,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.push(Op::Sigmoid(a))
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.push(Op::OneMinus(a))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.push(Op::Mul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.push(Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId, TapeError> {
        self.push(Op::Scale(a, k))
    }

    pub fn product_reduce(&mut self, input: NodeId, group: usize) -> Result<NodeId, TapeError> {
        self.push(Op::ProductReduce { input, group })
    }

    pub fn max_reduce(&mut self, input: NodeId, group: usize) -> Result<NodeId, TapeError> {
        self.push(Op::MaxReduce { input, group })
    }

    pub fn sum_reduce(&mut self, input: NodeId, group: usize) -> Result<NodeId, TapeError> {
        self.push(Op::SumReduce { input, group })
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId, TapeError> {
        self.push(Op::Concat(parts))
    }

    pub fn amalgamate(&mut self, store: NodeId, offset: usize, update: NodeId) -> Result<NodeId, TapeError> {
        self.push(Op::Amalgamate {
            store,
            offset,
            update,
        })
    }

    pub fn conjunction(
        &mut self,
        source: NodeId,
        memberships: Option<NodeId>,
        plan: Arc<ConjunctionPlan>,
        rules: usize,
    ) -> Result<NodeId, TapeError> {
        self.push(Op::Conjunction {
            source,
            memberships,
            plan,
            rules,
        })
    }

    pub fn disjunction(
        &mut self,
        input: NodeId,
        memberships: Option<NodeId>,
        width: usize,
    ) -> Result<NodeId, TapeError> {
        self.push(Op::Disjunction {
            input,
            memberships,
            width,
        })
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> Result<NodeId, TapeError> {
        self.push(Op::SoftmaxCrossEntropy { logits, labels })
    }

    pub fn binary_cross_entropy(&mut self, input: NodeId, terms: Vec<BceTerm>) -> Result<NodeId, TapeError> {
        self.push(Op::BinaryCrossEntropy {
            input,
            terms: terms.into(),
        })
    }

    /// Runs every node forward. Input nodes keep whatever the workspace holds.
    pub fn evaluate(&self, params: &[f64], ws: &mut Workspace) -> Result<(), TapeError> {
        if params.len() != self.param_count {
            return Err(TapeError::ParameterCount {
                expected: self.param_count,
                got: params.len(),
            });
        }
        ws.ensure(self);
        for i in 0..self.nodes.len() {
            let mut out = std::mem::take(&mut ws.values[i]);
            self.forward_node(i, params, ws, &mut out);
            ws.values[i] = out;
        }
        Ok(())
    }

    fn forward_node(&self, i: usize, params: &[f64], ws: &mut Workspace, out: &mut Vec<f64>) {
        let node = &self.nodes[i];
        let vals = &ws.values;
        let v = |id: &NodeId| vals[id.0].as_slice();
        match &node.op {
            Op::Constant(c) => {
                if out.len() != c.len() {
                    out.clone_from(c);
                }
            }
            Op::Input => {}
            Op::Parameter { offset } => {
                out.clear();
                out.extend_from_slice(&params[*offset..offset + node.len]);
            }
            Op::Sigmoid(a) => map_into(out, v(a), sigmoid),
            Op::OneMinus(a) => map_into(out, v(a), |x| 1.0 - x),
            Op::Scale(a, k) => map_into(out, v(a), |x| k * x),
            Op::Mul(a, b) => {
                out.clear();
                out.extend(v(a).iter().zip(v(b)).map(|(x, y)| x * y));
            }
            Op::Add(a, b) => {
                out.clear();
                out.extend(v(a).iter().zip(v(b)).map(|(x, y)| x + y));
            }
            Op::ProductReduce { input, group } => {
                out.clear();
                out.extend(v(input).chunks(*group).map(|c| c.iter().product::<f64>()));
            }
            Op::SumReduce { input, group } => {
                out.clear();
                out.extend(v(input).chunks(*group).map(|c| c.iter().sum::<f64>()));
            }
            Op::MaxReduce { input, group } => {
                out.clear();
                let (argmax, gaps) = (&mut ws.argmax[i], &mut ws.gaps[i]);
                argmax.clear();
                gaps.clear();
                for chunk in v(input).chunks(*group) {
                    let (arg, best, second) = top_two(chunk.iter().copied());
                    out.push(best);
                    argmax.push(arg as u32);
                    gaps.push(best - second);
                }
            }
            Op::Concat(parts) => {
                out.clear();
                for p in parts {
                    out.extend_from_slice(v(p));
                }
            }
            Op::Slice { input, offset } => {
                out.clear();
                out.extend_from_slice(&v(input)[*offset..offset + node.len]);
            }
            Op::Amalgamate {
                store,
                offset,
                update,
            } => {
                out.clear();
                out.extend_from_slice(v(store));
                let upd = v(update);
                let (argmax, gaps) = (&mut ws.argmax[i], &mut ws.gaps[i]);
                argmax.clear();
                gaps.clear();
                for (k, &u) in upd.iter().enumerate() {
                    let old = out[offset + k];
                    if u > old {
                        out[offset + k] = u;
                        argmax.push(1);
                    } else {
                        argmax.push(0);
                    }
                    gaps.push((u - old).abs());
                }
            }
            Op::Conjunction {
                source,
                memberships,
                plan,
                rules,
            } => {
                let m = memberships.as_ref().map(|m| vals[m.0].as_slice());
                conjunction_forward(
                    v(source),
                    m,
                    plan,
                    *rules,
                    out,
                    &mut ws.argmax[i],
                    &mut ws.gaps[i],
                    &mut ws.scratch,
                    ws.track_gaps,
                );
            }
            Op::Disjunction {
                input,
                memberships,
                width,
            } => {
                out.clear();
                let m = memberships.as_ref().map(|m| vals[m.0].as_slice());
                for row in v(input).chunks(*width) {
                    let p: f64 = row
                        .iter()
                        .enumerate()
                        .map(|(j, r)| 1.0 - r * m.map_or(1.0, |m| m[j]))
                        .product();
                    out.push(1.0 - p);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let z = v(logits);
                let y = v(labels);
                let lse = log_sum_exp(z);
                let loss: f64 = z.iter().zip(y).map(|(z, y)| -y * (z - lse)).sum();
                out.clear();
                out.push(loss);
            }
            Op::BinaryCrossEntropy { input, terms } => {
                let x = v(input);
                let loss: f64 = terms
                    .iter()
                    .map(|t| {
                        let p = x[t.index];
                        -t.weight * (t.label * (p + LOG_EPS).ln() + (1.0 - t.label) * (1.0 - p + LOG_EPS).ln())
                    })
                    .sum();
                out.clear();
                out.push(loss);
            }
        }
    }

    /// Back-propagates `seed` from `output`, accumulating into the
    /// workspace's parameter gradient. Call [`Workspace::zero_grad`] to reset.
    pub fn backward(&self, ws: &mut Workspace, output: NodeId, seed: &[f64]) -> Result<(), TapeError> {
        let out_len = self.len_of(output)?;
        if seed.len() != out_len {
            return Err(TapeError::Shape {
                node: output.0,
                op: self.nodes[output.0].op.name(),
                detail: format!("seed length {} != node length {out_len}", seed.len()),
            });
        }
        ws.ensure(self);
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        for t in ws.touched[..=output.0].iter_mut() {
            *t = false;
        }
        ws.adjoints[output.0].clear();
        ws.adjoints[output.0].extend_from_slice(seed);
        ws.touched[output.0] = true;

        for i in (0..=output.0).rev() {
            if !ws.touched[i] || !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, ws);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, ws: &mut Workspace) {
        let node = &self.nodes[i];
        let Workspace {
            values: vals,
            adjoints,
            touched,
            argmax: argmaxes,
            param_grad,
            ..
        } = ws;
        let (lower, upper) = adjoints.split_at_mut(i);
        let g = upper[0].as_slice();
        let rg = |id: &NodeId| self.nodes[id.0].requires_grad;
        macro_rules! adj {
            ($id:expr) => {
                adjoint_buffer(lower, touched, &self.nodes, *$id)
            };
        }
        match &node.op {
            Op::Constant(_) | Op::Input => {}
            Op::Parameter { offset } => {
                for (p, gk) in param_grad[*offset..].iter_mut().zip(g) {
                    *p += gk;
                }
            }
            Op::Sigmoid(a) => {
                let s = &vals[i];
                for ((acc, gk), sk) in adj!(a).iter_mut().zip(g).zip(s) {
                    *acc += gk * sk * (1.0 - sk);
                }
            }
            Op::OneMinus(a) => {
                for (acc, gk) in adj!(a).iter_mut().zip(g) {
                    *acc -= gk;
                }
            }
            Op::Scale(a, k) => {
                for (acc, gk) in adj!(a).iter_mut().zip(g) {
                    *acc += k * gk;
                }
            }
            Op::Mul(a, b) => {
                if rg(a) {
                    let vb = &vals[b.0];
                    for ((acc, gk), y) in adj!(a).iter_mut().zip(g).zip(vb) {
                        *acc += gk * y;
                    }
                }
                if rg(b) {
                    let va = &vals[a.0];
                    for ((acc, gk), x) in adj!(b).iter_mut().zip(g).zip(va) {
                        *acc += gk * x;
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if rg(id) {
                        for (acc, gk) in adj!(id).iter_mut().zip(g) {
                            *acc += gk;
                        }
                    }
                }
            }
            Op::ProductReduce { input, group } => {
                let x = &vals[input.0];
                let acc = adj!(input);
                for (gi, gk) in g.iter().enumerate() {
                    let chunk = &x[gi * group..(gi + 1) * group];
                    let dst = &mut acc[gi * group..(gi + 1) * group];
                    leave_one_out(chunk, |k, d| dst[k] += gk * d);
                }
            }
            Op::SumReduce { input, group } => {
                let acc = adj!(input);
                for (gi, gk) in g.iter().enumerate() {
                    for a in &mut acc[gi * group..(gi + 1) * group] {
                        *a += gk;
                    }
                }
            }
            Op::MaxReduce { input, group } => {
                let argmax = &argmaxes[i];
                let acc = adj!(input);
                for (gi, gk) in g.iter().enumerate() {
                    acc[gi * group + argmax[gi] as usize] += gk;
                }
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.nodes[p.0].len;
                    if rg(p) {
                        for (acc, gk) in adj!(p).iter_mut().zip(&g[start..start + n]) {
                            *acc += gk;
                        }
                    }
                    start += n;
                }
            }
            Op::Slice { input, offset } => {
                let acc = adj!(input);
                for (k, gk) in g.iter().enumerate() {
                    acc[offset + k] += gk;
                }
            }
            Op::Amalgamate {
                store,
                offset,
                update,
            } => {
                let argmax = &argmaxes[i];
                let n = self.nodes[update.0].len;
                if rg(store) {
                    let acc = adj!(store);
                    for (k, (a, gk)) in acc.iter_mut().zip(g).enumerate() {
                        let in_slice = k >= *offset && k < offset + n;
                        if !in_slice || argmax[k - offset] == 0 {
                            *a += gk;
                        }
                    }
                }
                if rg(update) {
                    let acc = adj!(update);
                    for (k, a) in acc.iter_mut().enumerate() {
                        if argmax[k] == 1 {
                            *a += g[offset + k];
                        }
                    }
                }
            }
            Op::Conjunction {
                source,
                memberships,
                plan,
                rules,
            } => {
                let x = &vals[source.0];
                let m = memberships.as_ref().map(|m| vals[m.0].as_slice());
                let argmax = &argmaxes[i];
                let mut src_acc = if rg(source) { Some(std::mem::take(adj!(source))) } else { None };
                let mut m_acc = match memberships {
                    Some(mid) if rg(mid) => Some(std::mem::take(adj!(mid))),
                    _ => None,
                };
                conjunction_backward(
                    x,
                    m,
                    plan,
                    *rules,
                    g,
                    argmax,
                    src_acc.as_deref_mut(),
                    m_acc.as_deref_mut(),
                );
                if let Some(buf) = src_acc {
                    *adj!(source) = buf;
                }
                if let (Some(buf), Some(mid)) = (m_acc, memberships) {
                    *adj!(mid) = buf;
                }
            }
            Op::Disjunction {
                input,
                memberships,
                width,
            } => {
                let r = &vals[input.0];
                let m = memberships.as_ref().map(|m| vals[m.0].as_slice());
                let want_m = memberships.as_ref().is_some_and(|m| rg(m));
                let want_r = rg(input);
                let mut dr = vec![0.0; if want_r { r.len() } else { 0 }];
                let mut dm = vec![0.0; if want_m { *width } else { 0 }];
                let mut factors = vec![0.0; *width];
                for (row, gk) in g.iter().enumerate() {
                    if *gk == 0.0 {
                        continue;
                    }
                    let rr = &r[row * width..(row + 1) * width];
                    for j in 0..*width {
                        factors[j] = 1.0 - rr[j] * m.map_or(1.0, |m| m[j]);
                    }
                    // out = 1 - prod(factors); d out / d factor_j = -prod_{k != j}
                    leave_one_out(&factors, |j, d| {
                        let mj = m.map_or(1.0, |m| m[j]);
                        if want_r {
                            dr[row * width + j] += gk * d * mj;
                        }
                        if want_m {
                            dm[j] += gk * d * rr[j];
                        }
                    });
                }
                if want_r {
                    for (a, d) in adj!(input).iter_mut().zip(&dr) {
                        *a += d;
                    }
                }
                if let (true, Some(mid)) = (want_m, memberships) {
                    for (a, d) in adj!(mid).iter_mut().zip(&dm) {
                        *a += d;
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let z = &vals[logits.0];
                let y = &vals[labels.0];
                let lse = log_sum_exp(z);
                let total: f64 = y.iter().sum();
                if rg(logits) {
                    for ((a, zk), yk) in adj!(logits).iter_mut().zip(z).zip(y) {
                        *a += g[0] * ((zk - lse).exp() * total - yk);
                    }
                }
                if rg(labels) {
                    for (a, zk) in adj!(labels).iter_mut().zip(z) {
                        *a -= g[0] * (zk - lse);
                    }
                }
            }
            Op::BinaryCrossEntropy { input, terms } => {
                let x = &vals[input.0];
                let acc = adj!(input);
                for t in terms.iter() {
                    let p = x[t.index];
                    acc[t.index] += g[0]
                        * t.weight
                        * (-t.label / (p + LOG_EPS) + (1.0 - t.label) / (1.0 - p + LOG_EPS));
                }
            }
        }
    }

    /// Gradient of a scalar `output` w.r.t. every parameter. Assumes
    /// [`Graph::evaluate`] already ran on `ws`.
    pub fn gradient(&self, ws: &mut Workspace, output: NodeId) -> Result<Vec<f64>, TapeError> {
        let len = self.len_of(output)?;
        if len != 1 {
            return Err(TapeError::NonScalarOutput { node: output.0, len });
        }
        ws.zero_grad();
        self.backward(ws, output, &[1.0])?;
        Ok(ws.param_grad.clone())
    }
}

fn adjoint_buffer<'a>(
    lower: &'a mut [Vec<f64>],
    touched: &mut [bool],
    nodes: &[Node],
    id: NodeId,
) -> &'a mut Vec<f64> {
    let buf = &mut lower[id.0];
    if !touched[id.0] {
        buf.clear();
        buf.resize(nodes[id.0].len, 0.0);
        touched[id.0] = true;
    }
    buf
}

fn map_into(out: &mut Vec<f64>, src: &[f64], f: impl Fn(f64) -> f64) {
    out.clear();
    out.extend(src.iter().map(|&x| f(x)));
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Returns `(argmax, best, second)` with ties resolved to the lowest index.
fn top_two(values: impl Iterator<Item = f64>) -> (usize, f64, f64) {
    let mut arg = 0;
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for (k, x) in values.enumerate() {
        if x > best {
            second = best;
            best = x;
            arg = k;
        } else if x > second {
            second = x;
        }
    }
    (arg, best, second)
}

/// Calls `f(k, prod_{i != k} x_i)` for every `k`, exact in the presence of
/// zero factors.
fn leave_one_out(x: &[f64], mut f: impl FnMut(usize, f64)) {
    let mut zeros = 0usize;
    let mut zero_at = 0usize;
    let mut prod = 1.0;
    for (k, &v) in x.iter().enumerate() {
        if v == 0.0 {
            zeros += 1;
            zero_at = k;
        } else {
            prod *= v;
        }
    }
    match zeros {
        0 => x.iter().enumerate().for_each(|(k, &v)| f(k, prod / v)),
        1 => f(zero_at, prod),
        _ => {}
    }
}

#[inline]
fn literal(x: &[f64], idx: u32, negated: bool) -> f64 {
    let v = x[idx as usize];
    if negated {
        1.0 - v
    } else {
        v
    }
}

#[inline]
fn gated(m: Option<&[f64]>, j: usize, atoms: usize, col: u32, lit: f64) -> f64 {
    match m {
        Some(m) => 1.0 - m[j * atoms + col as usize] * (1.0 - lit),
        None => lit,
    }
}

fn block_product(
    x: &[f64],
    m: Option<&[f64]>,
    atoms: usize,
    block: &LiteralBlock,
    row: usize,
    rules: usize,
    out: &mut [f64],
) {
    let w = block.width();
    let idx = &block.index[row * w..(row + 1) * w];
    out.iter_mut().for_each(|o| *o = 1.0);
    for i in 0..w {
        let lit = literal(x, idx[i], block.negated[i]);
        for (j, o) in out.iter_mut().enumerate().take(rules) {
            *o *= gated(m, j, atoms, block.columns[i], lit);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conjunction_forward(
    x: &[f64],
    m: Option<&[f64]>,
    plan: &ConjunctionPlan,
    rules: usize,
    out: &mut Vec<f64>,
    argmax: &mut Vec<u32>,
    gaps: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
    track_gaps: bool,
) {
    let (heads, subs, atoms) = (plan.heads, plan.substitutions, plan.atoms);
    out.clear();
    out.resize(heads * rules, 0.0);
    argmax.clear();
    argmax.resize(heads * rules, 0);
    gaps.clear();
    gaps.resize(heads * rules, 0.0);

    // scratch layout: [sub products: subs x rules][head products: rules][joint literals]
    let wj = plan.joint.width();
    scratch.clear();
    scratch.resize(subs * rules + rules + wj, 1.0);
    let (sub_prod, rest) = scratch.split_at_mut(subs * rules);
    let (head_prod, joint_lits) = rest.split_at_mut(rules);
    for s in 0..subs {
        block_product(x, m, atoms, &plan.sub, s, rules, &mut sub_prod[s * rules..(s + 1) * rules]);
    }

    for e in 0..heads {
        block_product(x, m, atoms, &plan.head, e, rules, head_prod);
        if head_prod.iter().all(|&h| h == 0.0) {
            continue;
        }
        let mut best = vec![f64::NEG_INFINITY; rules];
        let mut second = best.clone();
        let mut arg = vec![0u32; rules];
        for s in 0..subs {
            let row = e * subs + s;
            let idx = &plan.joint.index[row * wj..(row + 1) * wj];
            for i in 0..wj {
                joint_lits[i] = literal(x, idx[i], plan.joint.negated[i]);
            }
            for j in 0..rules {
                let bound = head_prod[j] * sub_prod[s * rules + j];
                if !track_gaps && bound <= best[j] {
                    continue;
                }
                let mut v = bound;
                if v != 0.0 {
                    for i in 0..wj {
                        v *= gated(m, j, atoms, plan.joint.columns[i], joint_lits[i]);
                    }
                }
                if v > best[j] {
                    second[j] = best[j];
                    best[j] = v;
                    arg[j] = s as u32;
                } else if v > second[j] {
                    second[j] = v;
                }
            }
        }
        for j in 0..rules {
            out[e * rules + j] = best[j];
            argmax[e * rules + j] = arg[j];
            gaps[e * rules + j] = if subs > 1 && track_gaps { best[j] - second[j] } else { f64::INFINITY };
        }
    }
    if !track_gaps || subs == 1 {
        gaps.iter_mut().for_each(|g| *g = f64::INFINITY);
    }
}

#[allow(clippy::too_many_arguments)]
fn conjunction_backward(
    x: &[f64],
    m: Option<&[f64]>,
    plan: &ConjunctionPlan,
    rules: usize,
    g: &[f64],
    argmax: &[u32],
    mut src_acc: Option<&mut [f64]>,
    mut m_acc: Option<&mut [f64]>,
) {
    let (subs, atoms) = (plan.substitutions, plan.atoms);
    let width = plan.row_width();
    let mut lits = Vec::with_capacity(width);
    let mut factors = vec![0.0; width];
    for (k, &gk) in g.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let (e, j) = (k / rules, k % rules);
        let s = argmax[k] as usize;
        lits.clear();
        for (block, row) in [(&plan.head, e), (&plan.sub, s), (&plan.joint, e * subs + s)] {
            let w = block.width();
            for i in 0..w {
                lits.push((block.index[row * w + i], block.negated[i], block.columns[i]));
            }
        }
        for (f, &(idx, neg, col)) in factors.iter_mut().zip(&lits) {
            *f = gated(m, j, atoms, col, literal(x, idx, neg));
        }
        leave_one_out(&factors, |i, rest| {
            let (idx, neg, col) = lits[i];
            let lit = literal(x, idx, neg);
            let mj = m.map_or(1.0, |m| m[j * atoms + col as usize]);
            if let Some(acc) = m_acc.as_deref_mut() {
                acc[j * atoms + col as usize] -= gk * rest * (1.0 - lit);
            }
            if let Some(acc) = src_acc.as_deref_mut() {
                let d = gk * rest * mj;
                acc[idx as usize] += if neg { -d } else { d };
            }
        });
    }
}

/// Per-caller evaluation state for a [`Graph`].
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    values: Vec<Vec<f64>>,
    adjoints: Vec<Vec<f64>>,
    touched: Vec<bool>,
    argmax: Vec<Vec<u32>>,
    gaps: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    param_grad: Vec<f64>,
    /// Record the exact gap between the best and second-best candidate of
    /// every max group. Off by default: without it conjunction evaluation
    /// may skip candidates that cannot win.
    pub track_gaps: bool,
}

impl Workspace {
    pub fn new(graph: &Graph) -> Self {
        let mut ws = Self::default();
        ws.ensure(graph);
        ws
    }

    fn ensure(&mut self, graph: &Graph) {
        let n = graph.nodes.len();
        if self.values.len() == n && self.param_grad.len() == graph.param_count {
            return;
        }
        self.values.resize_with(n, Vec::new);
        self.adjoints.resize_with(n, Vec::new);
        self.touched.resize(n, false);
        self.argmax.resize_with(n, Vec::new);
        self.gaps.resize_with(n, Vec::new);
        self.param_grad.resize(graph.param_count, 0.0);
        for (i, node) in graph.nodes.iter().enumerate() {
            if matches!(node.op, Op::Input) && self.values[i].len() != node.len {
                self.values[i] = vec![0.0; node.len];
            }
        }
    }

    pub fn set_input(&mut self, graph: &Graph, node: NodeId, values: &[f64]) -> Result<(), TapeError> {
        self.ensure(graph);
        let n = graph.nodes.get(node.0).ok_or(TapeError::UnknownNode(node.0))?;
        if !matches!(n.op, Op::Input) {
            return Err(TapeError::NotAnInput(node.0));
        }
        if values.len() != n.len {
            return Err(TapeError::Shape {
                node: node.0,
                op: "input",
                detail: format!("got {} values, expected {}", values.len(), n.len),
            });
        }
        self.values[node.0].clear();
        self.values[node.0].extend_from_slice(values);
        Ok(())
    }

    pub fn value(&self, node: NodeId) -> &[f64] {
        &self.values[node.0]
    }

    /// All node values in node order.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn param_grad(&self) -> &[f64] {
        &self.param_grad
    }

    pub fn zero_grad(&mut self) {
        self.param_grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Argmax bookkeeping of a max-like node from the last evaluation.
    pub fn argmax(&self, node: NodeId) -> &[u32] {
        &self.argmax[node.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Ok,
    Exceeded,
    /// A max decision near the evaluation point depends on this parameter.
    SkippedNonsmooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub parameter: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientReport {
    pub entries: Vec<GradientCheck>,
}

impl GradientReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest relative error among parameters that were not skipped.
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.status != CheckStatus::SkippedNonsmooth)
            .map(|e| e.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn count(&self, status: CheckStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }
}

/// Absolute floor of the relative-error denominator, so that gradients that
/// are zero up to rounding are not reported as arbitrarily large errors.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the scalar `output` against central finite
/// differences. `ws` must already hold the inputs; it is left evaluated at
/// `params` on return.
pub fn check_gradients(
    graph: &Graph,
    output: NodeId,
    params: &[f64],
    ws: &mut Workspace,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradientReport, TapeError> {
    let len = graph.len_of(output)?;
    if len != 1 {
        return Err(TapeError::NonScalarOutput { node: output.0, len });
    }
    let saved_track = ws.track_gaps;
    ws.track_gaps = true;
    graph.evaluate(params, ws)?;
    let base = kink_snapshot(graph, ws);
    let analytic = graph.gradient(ws, output)?;

    let mut report = GradientReport::default();
    let mut probe = params.to_vec();
    let tie_margin = 10.0 * epsilon;
    for k in 0..params.len() {
        probe[k] = params[k] + epsilon;
        graph.evaluate(&probe, ws)?;
        let f_plus = ws.value(output)[0];
        let plus = kink_snapshot(graph, ws);
        probe[k] = params[k] - epsilon;
        graph.evaluate(&probe, ws)?;
        let f_minus = ws.value(output)[0];
        let minus = kink_snapshot(graph, ws);
        probe[k] = params[k];

        let numeric = (f_plus - f_minus) / (2.0 * epsilon);
        let a = analytic[k];
        let relative_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        let nonsmooth = base.iter().zip(&plus).zip(&minus).any(|((b, p), m)| {
            b.argmax != p.argmax
                || b.argmax != m.argmax
                || b.gaps
                    .iter()
                    .enumerate()
                    .any(|(g, &gap)| gap <= tie_margin && p.values[g] != m.values[g])
        });
        let status = if nonsmooth {
            CheckStatus::SkippedNonsmooth
        } else if relative_error < tolerance {
            CheckStatus::Ok
        } else {
            CheckStatus::Exceeded
        };
        report.entries.push(GradientCheck {
            parameter: k,
            analytic: a,
            numeric,
            relative_error,
            status,
        });
    }
    graph.evaluate(params, ws)?;
    ws.track_gaps = saved_track;
    Ok(report)
}

struct KinkState {
    argmax: Vec<u32>,
    gaps: Vec<f64>,
    values: Vec<f64>,
}

fn kink_snapshot(graph: &Graph, ws: &Workspace) -> Vec<KinkState> {
    graph
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.op.is_kink())
        .map(|(i, n)| {
            let values = match n.op {
                Op::Amalgamate { offset, .. } => {
                    ws.values[i][offset..offset + ws.argmax[i].len()].to_vec()
                }
                _ => ws.values[i].clone(),
            };
            KinkState {
                argmax: ws.argmax[i].clone(),
                gaps: ws.gaps[i].clone(),
                values,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn eval(graph: &Graph, params: &[f64]) -> Workspace {
        let mut ws = Workspace::new(graph);
        graph.evaluate(params, &mut ws).unwrap();
        ws
    }

    /// prod_i (1 - m_i (1 - x_i)) built from elementary ops.
    fn conj_graph(g: &mut Graph, x: NodeId, m: NodeId, n: usize) -> NodeId {
        let nx = g.one_minus(x).unwrap();
        let gated = g.mul(m, nx).unwrap();
        let f = g.one_minus(gated).unwrap();
        g.product_reduce(f, n).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_parameter() {
        let mut g = Graph::new();
        let p = g.parameter(0, 1);
        let s = g.sigmoid(p).unwrap();
        let mut ws = eval(&g, &[0.0]);
        assert_eq!(ws.value(s), &[0.5]);
        assert_eq!(g.gradient(&mut ws, s).unwrap(), vec![0.25]);
    }

    #[test]
    fn product_of_ones() {
        let mut g = Graph::new();
        let c = g.constant(vec![1.0, 1.0, 1.0]);
        let p = g.product_reduce(c, 3).unwrap();
        assert_eq!(eval(&g, &[]).value(p), &[1.0]);
    }

    #[test]
    fn conjunction_truth_table_entry() {
        let mut g = Graph::new();
        let x = g.constant(vec![0.0, 1.0]);
        let m = g.constant(vec![1.0, 1.0]);
        let out = conj_graph(&mut g, x, m, 2);
        assert_eq!(eval(&g, &[]).value(out), &[0.0]);
    }

    #[test]
    fn product_rule_gradient() {
        let mut g = Graph::new();
        let p = g.parameter(0, 1);
        let two = g.constant(vec![2.0]);
        let both = g.concat(vec![p, two]).unwrap();
        let prod = g.product_reduce(both, 2).unwrap();
        let mut ws = eval(&g, &[3.0]);
        assert_eq!(ws.value(prod), &[6.0]);
        assert_eq!(g.gradient(&mut ws, prod).unwrap(), vec![2.0]);
    }

    #[test]
    fn max_tie_routes_to_lowest_index() {
        let mut g = Graph::new();
        let p = g.parameter(0, 1);
        let both = g.concat(vec![p, p]).unwrap();
        let mx = g.max_reduce(both, 2).unwrap();
        let mut ws = eval(&g, &[1.0]);
        assert_eq!(ws.argmax(mx), &[0]);
        ws.zero_grad();
        g.backward(&mut ws, mx, &[1.0]).unwrap();
        assert_eq!(ws.adjoints[both.0], vec![1.0, 0.0]);
        assert_eq!(ws.param_grad(), &[1.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::new();
        let p = g.parameter(0, 2);
        let mut ws = eval(&g, &[1.0, 2.0]);
        assert!(matches!(
            g.gradient(&mut ws, p),
            Err(TapeError::NonScalarOutput { len: 2, .. })
        ));
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut g = Graph::new();
        let a = g.constant(vec![1.0, 2.0]);
        let b = g.constant(vec![1.0]);
        let err = g.mul(a, b).unwrap_err();
        assert!(matches!(err, TapeError::Shape { node: 2, op: "elementwise-product", .. }));
    }

    #[test]
    fn parameter_count_is_checked() {
        let mut g = Graph::new();
        g.parameter(0, 3);
        let mut ws = Workspace::new(&g);
        assert_eq!(
            g.evaluate(&[1.0], &mut ws),
            Err(TapeError::ParameterCount { expected: 3, got: 1 })
        );
    }

    #[test]
    fn constant_graph_gives_empty_report() {
        let mut g = Graph::new();
        let c = g.constant(vec![0.3]);
        let mut ws = Workspace::new(&g);
        let report = check_gradients(&g, c, &[], &mut ws, 1e-5, 1e-4).unwrap();
        assert!(report.is_empty());
    }

    #[test]
    fn exact_tie_is_flagged_nonsmooth() {
        let mut g = Graph::new();
        let p = g.parameter(0, 1);
        let both = g.concat(vec![p, p]).unwrap();
        let mx = g.max_reduce(both, 2).unwrap();
        let mut ws = Workspace::new(&g);
        let report = check_gradients(&g, mx, &[1.0], &mut ws, 1e-5, 1e-4).unwrap();
        assert_eq!(report.entries[0].status, CheckStatus::SkippedNonsmooth);
    }

    #[test]
    fn conjunction_graph_gradients_match_finite_differences() {
        let mut g = Graph::new();
        let x = g.parameter(0, 4);
        let w = g.parameter(4, 4);
        let m = g.sigmoid(w).unwrap();
        let out = conj_graph(&mut g, x, m, 4);
        let params = [0.2, 0.7, 0.45, 0.9, -1.0, 0.3, 2.0, -0.5];
        let mut ws = Workspace::new(&g);
        let report = check_gradients(&g, out, &params, &mut ws, 1e-5, 1e-4).unwrap();
        assert_eq!(report.count(CheckStatus::Ok), 8, "{report:?}");
        assert!(report.max_relative_error() < 1e-4);
    }

    #[test]
    fn evaluation_is_idempotent() {
        let mut g = Graph::new();
        let x = g.parameter(0, 3);
        let m = g.constant(vec![0.3, 0.6, 0.9]);
        let out = conj_graph(&mut g, x, m, 3);
        let mut ws = Workspace::new(&g);
        g.evaluate(&[0.1, 0.5, 0.8], &mut ws).unwrap();
        let first = ws.value(out).to_vec();
        g.evaluate(&[0.1, 0.5, 0.8], &mut ws).unwrap();
        assert_eq!(first[0].to_bits(), ws.value(out)[0].to_bits());
    }

    #[test]
    fn amalgamate_routes_ties_to_the_old_value() {
        let mut g = Graph::new();
        let store = g.input(3);
        let p = g.parameter(0, 2);
        let merged = g.amalgamate(store, 1, p).unwrap();
        let total = g.sum_reduce(merged, 3).unwrap();
        let mut ws = Workspace::new(&g);
        ws.set_input(&g, store, &[0.1, 0.5, 0.2]).unwrap();
        g.evaluate(&[0.5, 0.7], &mut ws).unwrap();
        assert_eq!(ws.value(merged), &[0.1, 0.5, 0.7]);
        assert_eq!(g.gradient(&mut ws, total).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut g = Graph::new();
        let z = g.parameter(0, 3);
        let y = g.constant(vec![0.0, 1.0, 0.0]);
        let ce = g.softmax_cross_entropy(z, y).unwrap();
        let params = [0.3, -0.2, 1.1];
        let mut ws = Workspace::new(&g);
        let report = check_gradients(&g, ce, &params, &mut ws, 1e-5, 1e-6).unwrap();
        assert_eq!(report.count(CheckStatus::Ok), 3);
        let lse = (0.3f64.exp() + (-0.2f64).exp() + 1.1f64.exp()).ln();
        assert_abs_diff_eq!(ws.value(ce)[0], lse + 0.2, epsilon = 1e-12);
    }

    #[test]
    fn binary_cross_entropy_value() {
        let mut g = Graph::new();
        let x = g.constant(vec![0.5, 0.0]);
        let bce = g
            .binary_cross_entropy(
                x,
                vec![
                    BceTerm { index: 0, label: 1.0, weight: 1.0 },
                    BceTerm { index: 1, label: 0.0, weight: 1.0 },
                ],
            )
            .unwrap();
        let v = eval(&g, &[]).value(bce)[0];
        assert_abs_diff_eq!(v, -(0.5 + LOG_EPS).ln() - (1.0 + LOG_EPS).ln(), epsilon = 1e-12);
    }

    fn fused_dnf(rules: usize, atoms: usize, subs: usize) -> (Graph, NodeId) {
        // source = parameters [0, atoms*subs); one head, every literal joint
        let mut g = Graph::new();
        let x = g.parameter(0, atoms * subs);
        let w = g.parameter(atoms * subs, rules * atoms);
        let wd = g.parameter(atoms * subs + rules * atoms, rules);
        let m = g.sigmoid(w).unwrap();
        let md = g.sigmoid(wd).unwrap();
        let plan = ConjunctionPlan {
            heads: 1,
            substitutions: subs,
            atoms,
            head: LiteralBlock::default(),
            sub: LiteralBlock::default(),
            joint: LiteralBlock {
                columns: (0..atoms as u32).collect(),
                negated: (0..atoms).map(|i| i % 3 == 2).collect(),
                index: (0..(atoms * subs) as u32).collect(),
            },
        };
        let conj = g.conjunction(x, Some(m), Arc::new(plan), rules).unwrap();
        let out = g.disjunction(conj, Some(md), rules).unwrap();
        (g, out)
    }

    #[test]
    fn fused_conjunction_matches_elementary_ops() {
        let atoms = 3;
        let mut g = Graph::new();
        let x = g.parameter(0, atoms);
        let w = g.parameter(atoms, atoms);
        let m = g.sigmoid(w).unwrap();
        let reference = conj_graph(&mut g, x, m, atoms);
        let plan = ConjunctionPlan {
            heads: 1,
            substitutions: 1,
            atoms,
            head: LiteralBlock {
                columns: vec![0, 1, 2],
                negated: vec![false; 3],
                index: vec![0, 1, 2],
            },
            ..Default::default()
        };
        let fused = g.conjunction(x, Some(m), Arc::new(plan), 1).unwrap();
        let params = [0.2, 0.9, 0.4, 0.5, -1.0, 2.0];
        let mut ws = eval(&g, &params);
        assert_abs_diff_eq!(ws.value(reference)[0], ws.value(fused)[0], epsilon = 1e-15);
        let ga = g.gradient(&mut ws, reference).unwrap();
        let gb = g.gradient(&mut ws, fused).unwrap();
        for (a, b) in ga.iter().zip(&gb) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn pruned_and_tracked_conjunction_agree() {
        let (g, out) = fused_dnf(3, 4, 5);
        let params: Vec<f64> = (0..g.parameter_count()).map(|k| ((k * 37 % 17) as f64) / 17.0).collect();
        let mut a = Workspace::new(&g);
        let mut b = Workspace::new(&g);
        b.track_gaps = true;
        g.evaluate(&params, &mut a).unwrap();
        g.evaluate(&params, &mut b).unwrap();
        assert_eq!(a.value(out), b.value(out));
    }

    proptest! {
        #[test]
        fn fused_dnf_gradients_match(
            seed in proptest::collection::vec(0.1f64..0.9, 4 * 3),
            w in proptest::collection::vec(-3.0f64..3.0, 2 * 4 + 2),
        ) {
            let (g, out) = fused_dnf(2, 4, 3);
            let params: Vec<f64> = seed.into_iter().chain(w).collect();
            let mut ws = Workspace::new(&g);
            let report = check_gradients(&g, out, &params, &mut ws, 1e-5, 1e-4).unwrap();
            prop_assert_eq!(report.count(CheckStatus::Exceeded), 0, "{:?}", report);
        }

        #[test]
        fn fuzzy_ops_stay_in_unit_interval(
            x in proptest::collection::vec(0.0f64..=1.0, 5),
            w in proptest::collection::vec(-8.0f64..8.0, 5),
        ) {
            let mut g = Graph::new();
            let xs = g.constant(x);
            let wp = g.parameter(0, 5);
            let m = g.sigmoid(wp).unwrap();
            let conj = conj_graph(&mut g, xs, m, 5);
            let disj = g.disjunction(xs, Some(m), 5).unwrap();
            let both = g.concat(vec![conj, disj]).unwrap();
            let mx = g.max_reduce(both, 2).unwrap();
            let ws = eval(&g, &w);
            for node in [m, conj, disj, mx] {
                for &v in ws.value(node) {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn smooth_ops_match_finite_differences(
            p in proptest::collection::vec(0.1f64..0.9, 4),
            k in 0.5f64..3.0,
        ) {
            let mut g = Graph::new();
            let a = g.parameter(0, 2);
            let b = g.parameter(2, 2);
            let s = g.sigmoid(a).unwrap();
            let om = g.one_minus(b).unwrap();
            let prod = g.mul(s, om).unwrap();
            let sum = g.add(prod, a).unwrap();
            let sc = g.scale(sum, k).unwrap();
            let red = g.product_reduce(sc, 2).unwrap();
            let mut ws = Workspace::new(&g);
            let report = check_gradients(&g, red, &p, &mut ws, 1e-5, 1e-4).unwrap();
            prop_assert_eq!(report.count(CheckStatus::Ok), 4, "{:?}", report);
        }
    }
}
