//! Named parameter tensors with Adam optimizer state.

use std::collections::BTreeMap;

use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(super) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Registry of learnable tensors. Shapes are immutable after registration;
/// gradients accumulate across [`super::Tape::backward`] calls until an
/// optimizer step or [`ParamStore::zero_grads`] clears them.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        value: Vec<f64>,
    ) -> Result<ParamId, DiffError> {
        if self.index.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let len: usize = shape.iter().product();
        if value.len() != len {
            return Err(DiffError::ShapeMismatch {
                op: "register",
                detail: format!("{name}: {} values for shape {shape:?}", value.len()),
            });
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
            value,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, DiffError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parameter names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub(super) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let e = &mut self.entries[id.0];
        for (slot, gi) in e.grad.iter_mut().zip(g) {
            *slot += gi;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// L2 norm over all gradients.
    pub fn grad_global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients down so the global norm is at most `max_norm`.
    pub fn clip_grads(&mut self, max_norm: f64) {
        let norm = self.grad_global_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for e in &mut self.entries {
                e.grad.iter_mut().for_each(|g| *g *= k);
            }
        }
    }

    /// Bias-corrected Adam step over all parameters; gradients are zeroed
    /// afterwards.
    pub fn adam_update(
        &mut self,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<(), DiffError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for e in &mut self.entries {
            if e.grad.len() != e.value.len() {
                return Err(DiffError::MissingGradient(e.name.clone()));
            }
            for i in 0..e.value.len() {
                let g = e.grad[i];
                e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
                e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }

    /// Number of optimizer steps taken.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Deep copy of values only (fresh optimizer state), e.g. for target
    /// networks and evaluation snapshots.
    pub fn snapshot_values(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn load_values(&mut self, values: &[Vec<f64>]) -> Result<(), DiffError> {
        if values.len() != self.entries.len() {
            return Err(DiffError::CheckpointMismatch(format!(
                "{} tensors, store has {}",
                values.len(),
                self.entries.len()
            )));
        }
        for (e, v) in self.entries.iter_mut().zip(values) {
            if e.value.len() != v.len() {
                return Err(DiffError::CheckpointMismatch(format!(
                    "tensor '{}' length {} != {}",
                    e.name,
                    v.len(),
                    e.value.len()
                )));
            }
            e.value.copy_from_slice(v);
        }
        Ok(())
    }
}
