//! Neural building blocks composed from tape primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::DiffError;

/// Logits are clamped to this range before Gumbel sampling.
const LOGIT_CLAMP: f64 = 30.0;

/// Xavier-uniform initialization.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-a..a)).collect()
}

/// Dense layer `W x + b` resolved from the store by parameter ids.
pub fn dense_layer(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    w: ParamId,
    b: Option<ParamId>,
) -> Result<NodeId, DiffError> {
    let shape = store.shape(w).to_vec();
    let (rows, cols) = (shape[0], shape[1]);
    let wn = tape.param(store, w);
    let bn = b.map(|b| tape.param(store, b));
    tape.dense(x, wn, bn, rows, cols)
}

/// Ids of one LSTM cell's parameters: fused input weights, recurrent
/// weights, and bias, each spanning the i, f, g, o gates.
#[derive(Clone, Copy, Debug)]
pub struct LstmParamIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParamIds {
    /// Registers LSTM parameters under `prefix`. The forget-gate bias starts
    /// at 1.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<LstmParamIds, DiffError> {
        let wx = store.register(
            &format!("{prefix}/wx"),
            &[4 * hidden, input],
            xavier_uniform(rng, input, hidden, 4 * hidden * input),
        )?;
        let wh = store.register(
            &format!("{prefix}/wh"),
            &[4 * hidden, hidden],
            xavier_uniform(rng, hidden, hidden, 4 * hidden * hidden),
        )?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        let b = store.register(&format!("{prefix}/b"), &[4 * hidden], bias)?;
        Ok(LstmParamIds {
            wx,
            wh,
            b,
            hidden,
        })
    }
}

/// Hidden and cell state node pair.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub h: NodeId,
    pub c: NodeId,
}

/// One LSTM cell update with input/forget/output gates and candidate cell,
/// differentiable through time via the tape.
pub fn lstm_step(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    state: LstmNodes,
    p: LstmParamIds,
) -> Result<LstmNodes, DiffError> {
    let hidden = p.hidden;
    let gx = dense_layer(tape, store, x, p.wx, None)?;
    let gh = dense_layer(tape, store, state.h, p.wh, Some(p.b))?;
    let gates = tape.add(gx, gh)?;
    let i_lin = tape.slice(gates, 0, hidden)?;
    let f_lin = tape.slice(gates, hidden, hidden)?;
    let g_lin = tape.slice(gates, 2 * hidden, hidden)?;
    let o_lin = tape.slice(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_lin);
    let f = tape.sigmoid(f_lin);
    let g = tape.tanh(g_lin);
    let o = tape.sigmoid(o_lin);
    let fc = tape.mul(f, state.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmNodes { h, c })
}

/// `d` independent two-category Gumbel-Softmax samples over the logit pairs
/// `(logits[2k], logits[2k+1])`.
///
/// With `hard`, the forward value is the coordinate-wise argmax of the
/// relaxed sample (exactly 0 or 1 on the wire) while the backward pass uses
/// the relaxed sample's gradient (straight-through).
pub fn gumbel_binary(
    tape: &mut Tape,
    logits: NodeId,
    tau: f64,
    hard: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, DiffError> {
    assert!(tau > 0.0, "gumbel temperature must be positive");
    let len = tape.val(logits).len();
    if len % 2 != 0 {
        return Err(DiffError::ShapeMismatch {
            op: "gumbel_binary",
            detail: format!("logit length {len} is not a pair multiple"),
        });
    }
    let clamped = tape.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP);
    let d = len / 2;
    let gumbel = |rng: &mut ChaCha8Rng| -> f64 {
        let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
        -(-u.ln()).ln()
    };
    let mut relaxed = Vec::with_capacity(d);
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let z1 = tape.val(clamped)[2 * k];
        let z0 = tape.val(clamped)[2 * k + 1];
        let g1 = gumbel(rng);
        let g0 = gumbel(rng);
        let margin = ((z1 + g1) - (z0 + g0)) / tau;
        let soft = 1.0 / (1.0 + (-margin).exp());
        relaxed.push(soft);
        out.push(if hard {
            if soft > 0.5 {
                1.0
            } else {
                0.0
            }
        } else {
            soft
        });
    }
    Ok(tape.push_gumbel(clamped, relaxed, tau, out))
}

/// Soft-attention aggregation: `q` scores each message by dot product,
/// weights are a softmax over scores, and the output is the weighted sum of
/// messages. Differentiable with respect to the query and every message.
///
/// Returns the aggregate node and the attention weights. Errors with
/// [`DiffError::EmptyInbox`] when no messages are given; the caller decides
/// the degenerate-inbox policy.
pub fn attention_aggregate(
    tape: &mut Tape,
    query: NodeId,
    messages: &[NodeId],
) -> Result<(NodeId, Vec<f64>), DiffError> {
    if messages.is_empty() {
        return Err(DiffError::EmptyInbox);
    }
    let d = tape.val(query).len();
    for &m in messages {
        if tape.val(m).len() != d {
            return Err(DiffError::ShapeMismatch {
                op: "attention_aggregate",
                detail: format!("message len {} != query len {d}", tape.val(m).len()),
            });
        }
    }
    let scores: Vec<f64> = messages
        .iter()
        .map(|&m| {
            tape.val(query)
                .iter()
                .zip(tape.val(m))
                .map(|(q, mi)| q * mi)
                .sum()
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut out = vec![0.0; d];
    for (&m, a) in messages.iter().zip(&alpha) {
        for (o, v) in out.iter_mut().zip(tape.val(m)) {
            *o += a * v;
        }
    }
    let node = tape.push_attention(query, messages.to_vec(), alpha.clone(), out);
    Ok((node, alpha))
}
