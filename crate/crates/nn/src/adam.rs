//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8).expect("default betas are valid")
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !open_unit(beta1) || !open_unit(beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in (0,1): {beta1}, {beta2}"
            )));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    /// One update of every parameter from its accumulated gradient, then
    /// zeroes the gradients and advances `t`.
    pub fn step(&mut self, params: &mut ParameterSet) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (name, p) in params.iter_mut() {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let (md, vd) = (m.data_mut(), v.data_mut());
            let gd = p.grad.data();
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = gd[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
    }
}
