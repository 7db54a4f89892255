//! The computation record and its reverse traversal.

use super::params::{ParamId, ParamStore};
use super::DiffError;

pub type NodeId = usize;

/// Primitive operations recorded on the tape.
#[derive(Clone, Debug)]
pub enum Op {
    /// Constant or input leaf; gradients stop here.
    Input,
    /// Leaf bound to a registered parameter.
    Param(ParamId),
    /// `y = W x (+ b)`; `w` holds `rows * cols` row-major entries.
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        rows: usize,
        cols: usize,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Slice {
        x: NodeId,
        start: usize,
    },
    SumN(Vec<NodeId>),
    /// Scalar `log softmax(logits)[index]`.
    LogSoftmaxPick {
        logits: NodeId,
        index: usize,
    },
    /// `d` independent two-category Gumbel-Softmax samples over logit pairs
    /// `(logits[2k], logits[2k+1])`; `relaxed` caches the soft samples that
    /// carry the straight-through gradient.
    GumbelBinary {
        logits: NodeId,
        relaxed: Vec<f64>,
        tau: f64,
    },
    /// Soft-attention aggregation of messages with cached weights.
    Attention {
        query: NodeId,
        messages: Vec<NodeId>,
        alpha: Vec<f64>,
    },
}

struct Node {
    op: Op,
    val: Vec<f64>,
}

/// Append-only record of primitive operations with cached values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Parameter leaves in creation order: (param, node).
    bound: Vec<(ParamId, NodeId)>,
    bound_lookup: Vec<Option<NodeId>>,
}

fn stable_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached forward value of a node.
    pub fn val(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].val
    }

    fn push(&mut self, op: Op, val: Vec<f64>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, val });
        id
    }

    /// Constant/input leaf.
    pub fn input(&mut self, value: &[f64]) -> NodeId {
        self.push(Op::Input, value.to_vec())
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.push(Op::Input, vec![0.0; len])
    }

    /// Leaf bound to a registered parameter; one leaf per parameter per tape,
    /// repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if self.bound_lookup.len() < store.len() {
            self.bound_lookup.resize(store.len(), None);
        }
        if let Some(node) = self.bound_lookup[id.0] {
            return node;
        }
        let node = self.push(Op::Param(id), store.value(id).to_vec());
        self.bound.push((id, node));
        self.bound_lookup[id.0] = Some(node);
        node
    }

    /// `W x (+ b)` where `w` is a `rows x cols` row-major matrix node.
    pub fn dense(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, DiffError> {
        let shape_err = |detail: String| DiffError::ShapeMismatch { op: "dense", detail };
        if self.nodes[w].val.len() != rows * cols {
            return Err(shape_err(format!(
                "weight len {} != {rows}x{cols}",
                self.nodes[w].val.len()
            )));
        }
        if self.nodes[x].val.len() != cols {
            return Err(shape_err(format!(
                "input len {} != cols {cols}",
                self.nodes[x].val.len()
            )));
        }
        if let Some(b) = b {
            if self.nodes[b].val.len() != rows {
                return Err(shape_err(format!(
                    "bias len {} != rows {rows}",
                    self.nodes[b].val.len()
                )));
            }
        }
        let mut out = match b {
            Some(b) => self.nodes[b].val.clone(),
            None => vec![0.0; rows],
        };
        {
            let wv = &self.nodes[w].val;
            let xv = &self.nodes[x].val;
            for (i, o) in out.iter_mut().enumerate() {
                let row = &wv[i * cols..(i + 1) * cols];
                let mut acc = 0.0;
                for (wij, xj) in row.iter().zip(xv.iter()) {
                    acc += wij * xj;
                }
                *o += acc;
            }
        }
        Ok(self.push(Op::Dense { x, w, b, rows, cols }, out))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(), DiffError> {
        if self.nodes[a].val.len() != self.nodes[b].val.len() {
            return Err(DiffError::ShapeMismatch {
                op: op_name,
                detail: format!(
                    "{} vs {}",
                    self.nodes[a].val.len(),
                    self.nodes[b].val.len()
                ),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_elementwise("add", a, b)?;
        let out: Vec<f64> = self.nodes[a]
            .val
            .iter()
            .zip(&self.nodes[b].val)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_elementwise("mul", a, b)?;
        let out: Vec<f64> = self.nodes[a]
            .val
            .iter()
            .zip(&self.nodes[b].val)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x].val.iter().map(|v| k * v).collect();
        self.push(Op::Scale(x, k), out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x]
            .val
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x].val.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x].val.iter().map(|v| v.max(0.0)).collect();
        self.push(Op::Relu(x), out)
    }

    /// Softmax with max-subtraction for stability.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let out = stable_softmax(&self.nodes[x].val);
        self.push(Op::Softmax(x), out)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x].val.iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(Op::Clamp { x, lo, hi }, out)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        if start + len > self.nodes[x].val.len() {
            return Err(DiffError::ShapeMismatch {
                op: "slice",
                detail: format!(
                    "range {start}..{} out of len {}",
                    start + len,
                    self.nodes[x].val.len()
                ),
            });
        }
        let out = self.nodes[x].val[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, out))
    }

    /// Elementwise sum of equally-shaped nodes.
    pub fn sum_n(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::ShapeMismatch {
                op: "sum_n",
                detail: "no inputs".to_string(),
            });
        };
        let len = self.nodes[first].val.len();
        let mut out = vec![0.0; len];
        for &p in parts {
            if self.nodes[p].val.len() != len {
                return Err(DiffError::ShapeMismatch {
                    op: "sum_n",
                    detail: format!("{} vs {len}", self.nodes[p].val.len()),
                });
            }
            for (o, v) in out.iter_mut().zip(&self.nodes[p].val) {
                *o += v;
            }
        }
        Ok(self.push(Op::SumN(parts.to_vec()), out))
    }

    /// Scalar log-probability of `index` under `softmax(logits)`.
    pub fn log_softmax_pick(&mut self, logits: NodeId, index: usize) -> Result<NodeId, DiffError> {
        let lv = &self.nodes[logits].val;
        if index >= lv.len() {
            return Err(DiffError::ShapeMismatch {
                op: "log_softmax_pick",
                detail: format!("index {index} out of len {}", lv.len()),
            });
        }
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = vec![lv[index] - lse];
        Ok(self.push(Op::LogSoftmaxPick { logits, index }, out))
    }

    /// Records a fused Gumbel-Softmax sample; used via
    /// [`super::nn::gumbel_binary`], which draws the noise.
    pub(super) fn push_gumbel(
        &mut self,
        logits: NodeId,
        relaxed: Vec<f64>,
        tau: f64,
        out: Vec<f64>,
    ) -> NodeId {
        self.push(
            Op::GumbelBinary {
                logits,
                relaxed,
                tau,
            },
            out,
        )
    }

    pub(super) fn push_attention(
        &mut self,
        query: NodeId,
        messages: Vec<NodeId>,
        alpha: Vec<f64>,
        out: Vec<f64>,
    ) -> NodeId {
        self.push(
            Op::Attention {
                query,
                messages,
                alpha,
            },
            out,
        )
    }

    /// Reverse pass from a scalar root. Gradients of bound parameter leaves
    /// are accumulated into `store`; call [`ParamStore::zero_grads`] or an
    /// optimizer step between episodes.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Result<(), DiffError> {
        if self.nodes[root].val.len() != 1 {
            return Err(DiffError::NonScalarRoot);
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.val.len()]).collect();
        grads[root][0] = 1.0;

        for id in (0..=root).rev() {
            if grads[id].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(p) => store.accumulate_grad(*p, &g),
                Op::Dense { x, w, b, rows, cols } => {
                    let xv = &self.nodes[*x].val;
                    let wv = &self.nodes[*w].val;
                    for i in 0..*rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let gw = &mut grads[*w][i * cols..(i + 1) * cols];
                        for j in 0..*cols {
                            gw[j] += gi * xv[j];
                        }
                    }
                    for i in 0..*rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &wv[i * cols..(i + 1) * cols];
                        let gx = &mut grads[*x];
                        for j in 0..*cols {
                            gx[j] += gi * row[j];
                        }
                    }
                    if let Some(b) = b {
                        for i in 0..*rows {
                            grads[*b][i] += g[i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += gi;
                    }
                    for (i, gi) in g.iter().enumerate() {
                        grads[*b][i] += gi;
                    }
                }
                Op::Mul(a, b) => {
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * self.nodes[*b].val[i];
                    }
                    for i in 0..g.len() {
                        grads[*b][i] += g[i] * self.nodes[*a].val[i];
                    }
                }
                Op::Scale(x, k) => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*x][i] += k * gi;
                    }
                }
                Op::Sigmoid(x) => {
                    let out = &self.nodes[id].val;
                    for i in 0..g.len() {
                        grads[*x][i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::Tanh(x) => {
                    let out = &self.nodes[id].val;
                    for i in 0..g.len() {
                        grads[*x][i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Relu(x) => {
                    let inp = &self.nodes[*x].val;
                    for i in 0..g.len() {
                        if inp[i] > 0.0 {
                            grads[*x][i] += g[i];
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &self.nodes[id].val;
                    let dot: f64 = y.iter().zip(&g).map(|(yi, gi)| yi * gi).sum();
                    for i in 0..g.len() {
                        grads[*x][i] += y[i] * (g[i] - dot);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let inp = &self.nodes[*x].val;
                    for i in 0..g.len() {
                        if inp[i] > *lo && inp[i] < *hi {
                            grads[*x][i] += g[i];
                        }
                    }
                }
                Op::Slice { x, start } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*x][start + i] += gi;
                    }
                }
                Op::SumN(parts) => {
                    for p in parts {
                        for (i, gi) in g.iter().enumerate() {
                            grads[*p][i] += gi;
                        }
                    }
                }
                Op::LogSoftmaxPick { logits, index } => {
                    let probs = stable_softmax(&self.nodes[*logits].val);
                    let g0 = g[0];
                    for (i, p) in probs.iter().enumerate() {
                        let indicator = if i == *index { 1.0 } else { 0.0 };
                        grads[*logits][i] += g0 * (indicator - p);
                    }
                }
                Op::GumbelBinary {
                    logits,
                    relaxed,
                    tau,
                } => {
                    // Straight-through: the hard forward value carries the
                    // relaxed sample's gradient.
                    for (k, r) in relaxed.iter().enumerate() {
                        let slope = g[k] * r * (1.0 - r) / tau;
                        grads[*logits][2 * k] += slope;
                        grads[*logits][2 * k + 1] -= slope;
                    }
                }
                Op::Attention {
                    query,
                    messages,
                    alpha,
                } => {
                    let qv = &self.nodes[*query].val;
                    // dalpha_j = m_j . g
                    let dalpha: Vec<f64> = messages
                        .iter()
                        .map(|m| {
                            self.nodes[*m]
                                .val
                                .iter()
                                .zip(&g)
                                .map(|(mi, gi)| mi * gi)
                                .sum()
                        })
                        .collect();
                    // Softmax backward over scores.
                    let dot: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    let dscores: Vec<f64> = alpha
                        .iter()
                        .zip(&dalpha)
                        .map(|(a, d)| a * (d - dot))
                        .collect();
                    for (j, m) in messages.iter().enumerate() {
                        let mv = &self.nodes[*m].val;
                        for i in 0..g.len() {
                            grads[*m][i] += dscores[j] * qv[i] + alpha[j] * g[i];
                        }
                        for i in 0..qv.len() {
                            grads[*query][i] += dscores[j] * mv[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
