use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Gradients, Tape, Tensor, TensorError};
use crate::math;

/// One named learnable tensor with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    /// Excluded from optimizer steps and loaded onto tapes as constants.
    pub frozen: bool,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain gradient descent, `p ← p − lr·g`.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters in insertion order plus a shared optimizer clock.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    optimizer: Optimizer,
    step: u64,
}

impl ParameterStore {
    pub fn new(optimizer: Optimizer) -> Self {
        ParameterStore {
            optimizer,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.into()));
        }
        let n = value.data().len();
        self.index.insert(name.into(), self.params.len());
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            frozen: false,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        Ok(())
    }

    /// Glorot-uniform initialisation for a `rows × cols` weight.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        let limit = math::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<(), TensorError> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub(crate) fn by_index(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParameter(name.into()))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.into()))?;
        let p = &mut self.params[idx];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set",
                lhs: p.value.shape(),
                rhs: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = true;
        }
    }

    /// Adds the gradients of every parameter copied onto `tape`. A
    /// parameter that was on the tape but received no gradient gets an
    /// explicit zero.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (idx, var) in tape.param_nodes() {
            let p = &mut self.params[idx];
            let slot = p.grad.get_or_insert_with(|| vec![0.0; p.value.data().len()]);
            if let Some(g) = grads.get(var) {
                for (s, d) in slot.iter_mut().zip(g) {
                    *s += d;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Sum over parameters whose name starts with `prefix` of the L2 norm
    /// of their gradient.
    pub fn grad_norm_sum(&self, prefix: &str) -> f64 {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .filter_map(|p| p.grad.as_ref())
            .map(|g| math::sqrt(g.iter().map(|x| x * x).sum()))
            .sum()
    }

    /// One optimizer update of every trainable parameter, then clears
    /// gradients.
    pub fn step(&mut self, lr: f64) -> Result<(), TensorError> {
        if let Some(p) = self.params.iter().find(|p| !p.frozen && p.grad.is_none()) {
            return Err(TensorError::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as f64;
        for p in self.params.iter_mut().filter(|p| !p.frozen) {
            let g = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            match self.optimizer {
                Optimizer::Sgd => {
                    for (v, gv) in values.iter_mut().zip(&g) {
                        *v -= lr * gv;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - math::powf(beta1, t);
                    let c2 = 1.0 - math::powf(beta2, t);
                    for i in 0..values.len() {
                        let m = &mut p.first_moment[i];
                        let s = &mut p.second_moment[i];
                        *m = beta1 * *m + (1.0 - beta1) * g[i];
                        *s = beta2 * *s + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = *m / c1;
                        let s_hat = *s / c2;
                        values[i] -= lr * m_hat / (math::sqrt(s_hat) + eps);
                    }
                }
            }
        }
        for p in &mut self.params {
            p.grad = None;
        }
        Ok(())
    }
}
