//! Named trainable parameters and their binding onto a tape.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named collection of trainable arrays with gradient buffers.
///
/// Iteration order is the lexicographic order of names, which keeps
/// initialization, checkpoints and updates deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
    rng_seed: u64,
}

impl ParameterSet {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Sets every parameter value to zero.
    pub fn zero_values(&mut self) {
        for p in self.params.values_mut() {
            p.value.fill(0.0);
        }
    }

    /// Adds the gradients recorded for `bound` leaves into the parameter
    /// gradient buffers. Repeated calls accumulate.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Grads) {
        for (name, var) in &bound.vars {
            if let (Some(g), Some(p)) = (grads.get(*var), self.params.get_mut(name)) {
                p.grad.add_assign(g);
            }
        }
    }

    /// Runs `tape.backward(loss)` and accumulates into the gradient buffers.
    pub fn backward(&mut self, tape: &Tape, bound: &Bound, loss: Var) -> Result<()> {
        let grads = tape.backward(loss)?;
        self.accumulate(bound, &grads);
        Ok(())
    }
}

/// Glorot-uniform sampling and zero/constant tensors from a seeded stream.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±√(6/(fan_in+fan_out))`.
    pub fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-limit..=limit))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches")
    }
}

/// Parameter values recorded as gradient-tracking leaves of one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &ParameterSet) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, p) in params.iter() {
            vars.insert(name.clone(), tape.leaf(p.value.clone(), true)?);
        }
        Ok(Self { vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }
}
