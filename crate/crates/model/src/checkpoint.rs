//! Model checkpoints as `f64` tensor containers.
//!
//! Layout: one entry per parameter under its own name, optimizer moments
//! under `__adam/m/<name>` and `__adam/v/<name>`, the step counter in
//! `__adam/t`, `[lr, β1, β2, ε]` in `__adam/hyper`, the model kind in
//! `__kind`, the initialization seed as `[hi, lo]` 32-bit halves in
//! `__param_seed` and the architecture as `__config/<key>` entries.

use std::path::Path;

use hava_core::container::{read_container, write_container, Entry, TensorContainer};
use hava_nn::{AdamState, ParameterSet, Tensor};

use crate::animation::AnimationModel;
use crate::config::{AnimationConfig, ConfigMap, PoseConfig};
use crate::error::{Error, Result};
use crate::pose_model::PoseModel;

const KIND: &str = "__kind";
const CONFIG: &str = "__config/";
const ADAM_M: &str = "__adam/m/";
const ADAM_V: &str = "__adam/v/";
const ADAM_T: &str = "__adam/t";
const ADAM_HYPER: &str = "__adam/hyper";
const PARAM_SEED: &str = "__param_seed";

pub trait Checkpointable: Sized {
    const KIND_CODE: f64;
    const KIND_NAME: &'static str;
    fn config_map(&self) -> ConfigMap;
    fn parameters(&self) -> &ParameterSet;
    fn from_parts(config: &ConfigMap, params: ParameterSet) -> Result<Self>;
    fn replace_params(&mut self, params: ParameterSet) -> Result<()>;
}

impl Checkpointable for AnimationModel {
    const KIND_CODE: f64 = 1.0;
    const KIND_NAME: &'static str = "animation";

    fn config_map(&self) -> ConfigMap {
        self.config().to_map()
    }

    fn parameters(&self) -> &ParameterSet {
        self.params()
    }

    fn from_parts(config: &ConfigMap, params: ParameterSet) -> Result<Self> {
        AnimationModel::from_params(AnimationConfig::from_map(config)?, params)
    }

    fn replace_params(&mut self, params: ParameterSet) -> Result<()> {
        self.set_params(params)
    }
}

impl Checkpointable for PoseModel {
    const KIND_CODE: f64 = 2.0;
    const KIND_NAME: &'static str = "pose";

    fn config_map(&self) -> ConfigMap {
        self.config().to_map()
    }

    fn parameters(&self) -> &ParameterSet {
        self.params()
    }

    fn from_parts(config: &ConfigMap, params: ParameterSet) -> Result<Self> {
        PoseModel::from_params(PoseConfig::from_map(config)?, params)
    }

    fn replace_params(&mut self, params: ParameterSet) -> Result<()> {
        self.set_params(params)
    }
}

fn f64_entry(name: String, t: &Tensor) -> Result<Entry> {
    Ok(Entry::f64(name, t.shape().to_vec(), t.data().to_vec())?)
}

fn tensor_of(e: &Entry) -> Result<Tensor> {
    Ok(Tensor::new(e.dims.clone(), e.values.clone())?)
}

pub fn checkpoint_container<M: Checkpointable>(model: &M, adam: &AdamState) -> Result<TensorContainer> {
    let mut c = TensorContainer::default();
    c.push(Entry::f64(KIND, vec![1], vec![M::KIND_CODE])?)?;
    for (k, v) in model.config_map() {
        c.push(Entry::f64(format!("{CONFIG}{k}"), vec![v.len()], v)?)?;
    }
    let seed = model.parameters().rng_seed();
    c.push(Entry::f64(PARAM_SEED, vec![2], vec![(seed >> 32) as f64, (seed & 0xffff_ffff) as f64])?)?;
    for (name, p) in model.parameters().iter() {
        c.push(f64_entry(name.clone(), &p.value)?)?;
    }
    for (name, m) in &adam.m {
        c.push(f64_entry(format!("{ADAM_M}{name}"), m)?)?;
    }
    for (name, v) in &adam.v {
        c.push(f64_entry(format!("{ADAM_V}{name}"), v)?)?;
    }
    c.push(Entry::f64(ADAM_T, vec![1], vec![adam.t as f64])?)?;
    c.push(Entry::f64(
        ADAM_HYPER,
        vec![4],
        vec![adam.lr, adam.beta1, adam.beta2, adam.eps],
    )?)?;
    Ok(c)
}

pub fn save_checkpoint<M: Checkpointable>(model: &M, adam: &AdamState, path: impl AsRef<Path>) -> Result<()> {
    write_container(&checkpoint_container(model, adam)?, path)?;
    Ok(())
}

fn check_kind<M: Checkpointable>(c: &TensorContainer) -> Result<()> {
    let kind = c.require(KIND)?;
    if kind.values.as_slice() != [M::KIND_CODE] {
        return Err(Error::Checkpoint(format!(
            "expected a {} checkpoint, found kind {:?}",
            M::KIND_NAME,
            kind.values
        )));
    }
    Ok(())
}

fn params_of(c: &TensorContainer) -> Result<ParameterSet> {
    let seed = match c.get(PARAM_SEED).map(|e| e.values.as_slice()) {
        Some([hi, lo]) => ((*hi as u64) << 32) | (*lo as u64),
        _ => 0,
    };
    let mut params = ParameterSet::new(seed);
    for e in c.entries().iter().filter(|e| !e.name.starts_with("__")) {
        params.insert(e.name.clone(), tensor_of(e)?)?;
    }
    Ok(params)
}

pub fn model_from_container<M: Checkpointable>(c: &TensorContainer) -> Result<(M, AdamState)> {
    check_kind::<M>(c)?;
    let config: ConfigMap = c
        .entries()
        .iter()
        .filter_map(|e| e.name.strip_prefix(CONFIG).map(|k| (k.to_string(), e.values.clone())))
        .collect();
    let model = M::from_parts(&config, params_of(c)?)?;

    let hyper = &c.require(ADAM_HYPER)?.values;
    let [lr, b1, b2, eps] = hyper[..] else {
        return Err(Error::Checkpoint(format!("`{ADAM_HYPER}` holds {} values, expected 4", hyper.len())));
    };
    let mut adam = AdamState::with_betas(lr, b1, b2, eps)?;
    let t = c.require(ADAM_T)?.values.first().copied().unwrap_or(-1.0);
    if !(t >= 0.0 && t.fract() == 0.0) {
        return Err(Error::Checkpoint(format!("`{ADAM_T}` is not a step count: {t}")));
    }
    adam.t = t as u64;
    for e in c.entries() {
        if let Some(name) = e.name.strip_prefix(ADAM_M) {
            adam.m.insert(name.to_string(), tensor_of(e)?);
        } else if let Some(name) = e.name.strip_prefix(ADAM_V) {
            adam.v.insert(name.to_string(), tensor_of(e)?);
        }
    }
    for (name, p) in model.parameters().iter() {
        for (what, map) in [("m", &adam.m), ("v", &adam.v)] {
            match map.get(name) {
                Some(t) if t.shape() != p.value.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "optimizer {what} for `{name}` has shape {:?}, parameter {:?}",
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None if adam.t > 0 => {
                    return Err(Error::Checkpoint(format!("optimizer {what} for `{name}` is missing")))
                }
                _ => {}
            }
        }
    }
    Ok((model, adam))
}

pub fn load_checkpoint<M: Checkpointable>(path: impl AsRef<Path>) -> Result<(M, AdamState)> {
    model_from_container(&read_container(path)?)
}

/// Loads only the parameters of a checkpoint into an existing model,
/// failing on the first entry that does not fit its configuration.
pub fn load_params_into<M: Checkpointable>(model: &mut M, path: impl AsRef<Path>) -> Result<()> {
    let c = read_container(path)?;
    check_kind::<M>(&c)?;
    model.replace_params(params_of(&c)?)
}
