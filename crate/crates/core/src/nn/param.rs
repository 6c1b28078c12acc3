use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Real;

/// Handle to an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    /// Empty for non-trainable buffers.
    pub grad: Vec<T>,
}

impl<T> Entry<T> {
    pub fn trainable(&self) -> bool {
        !self.grad.is_empty()
    }
}

/// Flat, ordered registry of every array a network owns: trainable weights
/// plus state buffers (batch-norm running statistics, spectral-norm vectors).
///
/// Registration order is fixed at construction, which makes optimizer state,
/// checkpoint layout and gradient accumulation order deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<T>) -> ParamId {
        self.push(name.into(), shape, value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<T>) -> ParamId {
        self.push(name.into(), shape, value, false)
    }

    fn push(&mut self, name: String, shape: &[usize], value: Vec<T>, trainable: bool) -> ParamId {
        assert_eq!(value.len(), shape.iter().product::<usize>(), "{name}: shape mismatch");
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let grad = if trainable {
            vec![T::zero(); value.len()]
        } else {
            Vec::new()
        };
        self.entries.push(Entry {
            name,
            shape: shape.to_vec(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].grad
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.grad.is_empty())
            .map(|e| e.value.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.value.iter().all(|v| v.is_finite()))
    }

    /// Same layout, values converted to another scalar type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|x| U::of(x.to_f64().unwrap())).collect() };
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    value: conv(&e.value),
                    grad: conv(&e.grad),
                })
                .collect(),
        }
    }
}

/// Zero-mean Gaussian initializer with standard deviation 0.02.
pub fn gaussian_init<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<T> {
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    (0..len).map(|_| T::of(normal.sample(rng))).collect()
}

/// Random unit vector, used to seed power iteration.
pub fn random_unit<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<T> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| T::of(x / norm)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam moments for every trainable entry of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |e: &Entry<T>| vec![T::zero(); e.grad.len()];
        Self {
            config,
            step: 0,
            first: store.entries().iter().map(zeros).collect(),
            second: store.entries().iter().map(zeros).collect(),
        }
    }

    /// One bias-corrected update from the accumulated gradients, which are
    /// then cleared.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let corr1 = 1.0 - beta1.powi(t);
        let corr2 = 1.0 - beta2.powi(t);
        let step_size = T::of(lr * corr2.sqrt() / corr1);
        let eps_hat = T::of(eps * corr2.sqrt());
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        for ((entry, m), v) in store
            .entries_mut()
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..entry.grad.len() {
                let g = entry.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                entry.value[i] -= step_size * m[i] / (v[i].sqrt() + eps_hat);
                entry.grad[i] = T::zero();
            }
        }
    }
}
