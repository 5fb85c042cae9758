use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::{DenseArray, Rng};

pub const DEFAULT_INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: DenseArray,
    pub grad: DenseArray,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    updates: u64,
}

impl Param {
    fn new(value: DenseArray) -> Self {
        let grad = DenseArray::zeros(value.shape());
        let n = value.len();
        Param {
            value,
            grad,
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            updates: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable arrays with paired gradient buffers and Adam moments.
///
/// Entries are kept in name order so iteration (and therefore every update
/// and serialization) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, Param::new(value));
        Ok(())
    }

    /// Adds a weight initialized uniformly in `[-scale, scale]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut Rng) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(-scale, scale)).collect();
        self.insert(name, DenseArray::new(shape.to_vec(), data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.insert(name, DenseArray::zeros(shape))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&DenseArray> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut DenseArray> {
        Ok(&mut self.get_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&DenseArray> {
        Ok(&self.get(name)?.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let p = self.get_mut(name)?;
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Scales every gradient buffer in place.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Moves every entry of `other` into self; names must not collide.
    pub fn absorb(&mut self, other: ParamStore) -> Result<()> {
        for (name, p) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(Error::Config(format!("duplicate parameter name `{name}`")));
            }
            self.entries.insert(name, p);
        }
        Ok(())
    }

    /// Splits off every entry whose name starts with `prefix`.
    pub fn split_prefix(&mut self, prefix: &str) -> ParamStore {
        let names: Vec<String> = self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        let mut out = ParamStore::new();
        for n in names {
            let p = self.entries.remove(&n).expect("present");
            out.entries.insert(n, p);
        }
        out
    }

    /// One Adam update with bias-corrected moments, then gradients are left
    /// in place (callers reset them with [`ParamStore::zero_grads`]).
    ///
    /// Entries whose gradient buffer is entirely zero are skipped: their
    /// moments do not decay and their values do not move. This keeps
    /// parameters that took no part in a step (frozen sub-models, evaluator
    /// weights living in the same store) exactly where they are.
    pub fn adam_step(&mut self, lr: f64) -> Result<()> {
        self.adam_step_with(lr, AdamConfig::default())
    }

    pub fn adam_step_with(&mut self, lr: f64, cfg: AdamConfig) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
        }
        for (name, p) in &self.entries {
            if !p.grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in `{name}`; update aborted"
                )));
            }
        }
        for p in self.entries.values_mut() {
            if p.grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            p.updates += 1;
            let t = p.updates as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                p.moment1[i] = cfg.beta1 * p.moment1[i] + (1.0 - cfg.beta1) * g;
                p.moment2[i] = cfg.beta2 * p.moment2[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.moment1[i] / c1;
                let v_hat = p.moment2[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Drops optimizer moments (values and gradients are kept).
    pub fn reset_optimizer(&mut self) {
        for p in self.entries.values_mut() {
            p.moment1.iter_mut().for_each(|m| *m = 0.0);
            p.moment2.iter_mut().for_each(|m| *m = 0.0);
            p.updates = 0;
        }
        self.step_count = 0;
    }

    /// True when every value array is bitwise equal to the one in `other`.
    pub fn values_bitwise_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((a, pa), (b, pb))| {
                a == b
                    && pa.value.shape() == pb.value.shape()
                    && pa
                        .value
                        .data()
                        .iter()
                        .zip(pb.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
