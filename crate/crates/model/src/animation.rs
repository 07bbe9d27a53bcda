//! Stage-1 displacement model: local and global speech encoders, feature
//! assembly with a vertex embedding, and a stacked graph network.

use std::sync::Arc;

use hava_core::mesh::{build_adjacency, TemplateMesh, Vec3};
use hava_core::{SpeechFeatureWindow, VertexEmbedding};
use hava_nn::{graph_conv, Adjacency, Bound, ParameterSet, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::config::{AnimationConfig, AGM_KERNEL, ALM_KERNEL};
use crate::error::{Error, Result};
use crate::spec::{build_params, check_params, ParamSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct AnimationModel {
    config: AnimationConfig,
    params: ParameterSet,
    /// `N × 2K`
    embedding: Tensor,
}

fn param_specs(c: &AnimationConfig) -> Result<Vec<ParamSpec>> {
    let mut s = Vec::new();
    let mut c_in = c.feature_dim;
    for (i, &c_out) in c.alm_channels.iter().enumerate() {
        s.extend(ParamSpec::conv(&format!("alm.conv{i}"), c_in, c_out, ALM_KERNEL));
        c_in = c_out;
    }
    let mut f_in = c_in + c.embedding_width();
    for (i, &f_out) in c.local_mlp.iter().enumerate() {
        s.extend(ParamSpec::dense(&format!("alm.mlp{i}"), f_in, f_out));
        f_in = f_out;
    }
    let mut c_in = c.feature_dim;
    for (i, &c_out) in c.agm_channels.iter().enumerate() {
        s.extend(ParamSpec::conv(&format!("agm.conv{i}"), c_in, c_out, AGM_KERNEL));
        c_in = c_out;
    }
    let mut f_in = c.agm_flat_width()?;
    for (i, &f_out) in c.global_mlp.iter().enumerate() {
        s.extend(ParamSpec::dense(&format!("agm.mlp{i}"), f_in, f_out));
        f_in = f_out;
    }
    let h = c.gcn_width;
    s.extend(ParamSpec::dense("fsm.in", c.assembled_width(), h));
    for l in 0..c.gcn_layers {
        s.push(ParamSpec::zeros(format!("fsm.gc{l}.eps"), vec![1]));
        s.push(ParamSpec::zeros(format!("fsm.gc{l}.w"), vec![h, h]));
        s.push(ParamSpec::zeros(format!("fsm.gc{l}.b"), vec![h]));
    }
    s.extend(ParamSpec::dense("fsm.out", h, 3));
    Ok(s)
}

/// Transposes a `W × D` window into the `D × W` layout the encoders read.
pub fn window_input(w: &SpeechFeatureWindow) -> Vec<f64> {
    let mut out = vec![0.0; w.values.len()];
    for t in 0..w.rows {
        for d in 0..w.dim {
            out[d * w.rows + t] = w.values[t * w.dim + d];
        }
    }
    out
}

/// Stacks transposed windows into a `B × D × W` tensor.
pub fn stack_inputs(inputs: &[&[f64]], dim: usize, window: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(inputs.len() * dim * window);
    for x in inputs {
        if x.len() != dim * window {
            return Err(Error::Shape(format!("input of {} values, expected {dim}×{window}", x.len())));
        }
        data.extend_from_slice(x);
    }
    Ok(Tensor::new(vec![inputs.len(), dim, window], data)?)
}

/// Neighbor lists of `template`, building them when absent.
pub fn template_adjacency(template: &TemplateMesh) -> Adjacency {
    if template.adjacency.len() == template.num_vertices() && template.has_adjacency() {
        Arc::new(template.adjacency.clone())
    } else {
        Arc::new(build_adjacency(template.clone()).adjacency)
    }
}

impl AnimationModel {
    pub fn new(config: AnimationConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = build_params(&param_specs(&config)?, seed)?;
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: AnimationConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        check_params(&param_specs(&config)?, &params)?;
        let emb = VertexEmbedding::new(config.num_vertices, config.bands)?;
        let embedding = Tensor::new(vec![config.num_vertices, emb.width()], emb.values)?;
        Ok(Self {
            config,
            params,
            embedding,
        })
    }

    pub fn config(&self) -> &AnimationConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Replaces the parameters; the first entry not matching the config is
    /// reported.
    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        check_params(&param_specs(&self.config)?, &params)?;
        self.params = params;
        Ok(())
    }

    fn conv_stack(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prefix: &str,
        mut h: Var,
        strides: impl Iterator<Item = usize>,
    ) -> Result<Var> {
        for (i, s) in strides.enumerate() {
            let w = bound.var(&format!("{prefix}.conv{i}.w"))?;
            let b = bound.var(&format!("{prefix}.conv{i}.b"))?;
            h = tape.conv1d(h, w, b, s, 0)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        Ok(h)
    }

    fn mlp(&self, tape: &mut Tape, bound: &Bound, prefix: &str, layers: usize, mut h: Var) -> Result<Var> {
        for i in 0..layers {
            let w = bound.var(&format!("{prefix}.mlp{i}.w"))?;
            let b = bound.var(&format!("{prefix}.mlp{i}.b"))?;
            h = tape.dense(h, w, b)?;
            if i + 1 < layers {
                h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }

    fn batch_of(&self, tape: &Tape, input: Var) -> Result<usize> {
        match tape.value(input).shape() {
            [b, d, w] if *d == self.config.feature_dim && *w == self.config.window => Ok(*b),
            s => Err(Error::Shape(format!(
                "speech input {s:?}, expected B×{}×{}",
                self.config.feature_dim, self.config.window
            ))),
        }
    }

    fn embedding_rows(&self, tape: &mut Tape, batch: usize) -> Result<Var> {
        let e = tape.constant(self.embedding.clone())?;
        Ok(tape.tile_rows(e, batch)?)
    }

    /// Per-vertex local features, `(B·N) × local_dim`.
    pub fn alm(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let b = self.batch_of(tape, input)?;
        let n = self.config.num_vertices;
        let h = self.conv_stack(tape, bound, "alm", input, std::iter::repeat_n(1, self.config.alm_channels.len()))?;
        let code = tape.mean_last(h)?;
        let code = tape.repeat_rows(code, n)?;
        let emb = self.embedding_rows(tape, b)?;
        let x = tape.concat_cols(&[code, emb])?;
        self.mlp(tape, bound, "alm", self.config.local_mlp.len(), x)
    }

    /// Per-window global code, `B × global_dim`.
    pub fn agm(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let b = self.batch_of(tape, input)?;
        let strides = self.config.agm_strides.clone();
        let h = self.conv_stack(tape, bound, "agm", input, strides.into_iter())?;
        let flat = tape.reshape(h, vec![b, self.config.agm_flat_width()?])?;
        self.mlp(tape, bound, "agm", self.config.global_mlp.len(), flat)
    }

    /// `[local ‖ global ‖ embedding]`, `(B·N) × assembled_width`.
    pub fn assemble(&self, tape: &mut Tape, local: Var, global: Var) -> Result<Var> {
        let b = tape.value(global).shape()[0];
        let g = tape.repeat_rows(global, self.config.num_vertices)?;
        let emb = self.embedding_rows(tape, b)?;
        Ok(tape.concat_cols(&[local, g, emb])?)
    }

    /// Graph network from assembled features to displacements,
    /// `(B·N) × 3`.
    pub fn fsm(&self, tape: &mut Tape, bound: &Bound, x: Var, adj: &Adjacency) -> Result<Var> {
        let mut h = tape.dense(x, bound.var("fsm.in.w")?, bound.var("fsm.in.b")?)?;
        for l in 0..self.config.gcn_layers {
            let z = graph_conv(
                tape,
                h,
                adj,
                bound.var(&format!("fsm.gc{l}.eps"))?,
                bound.var(&format!("fsm.gc{l}.w"))?,
                bound.var(&format!("fsm.gc{l}.b"))?,
            )?;
            let s = tape.add(h, z)?;
            h = tape.leaky_relu(s, LEAKY_SLOPE)?;
        }
        Ok(tape.dense(h, bound.var("fsm.out.w")?, bound.var("fsm.out.b")?)?)
    }

    /// Displacements for a `B × D × W` batch, stacked `(B·N) × 3`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var, adj: &Adjacency) -> Result<Var> {
        if adj.len() != self.config.num_vertices {
            return Err(Error::Shape(format!(
                "adjacency for {} vertices, model built for {}",
                adj.len(),
                self.config.num_vertices
            )));
        }
        let local = self.alm(tape, bound, input)?;
        let global = self.agm(tape, bound, input)?;
        let x = self.assemble(tape, local, global)?;
        self.fsm(tape, bound, x, adj)
    }

    fn check_window(&self, w: &SpeechFeatureWindow) -> Result<()> {
        if w.rows != self.config.window || w.dim != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "speech window {}×{}, model expects {}×{}",
                w.rows, w.dim, self.config.window, self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Per-vertex displacement for one speech window.
    pub fn predict_displacements(&self, window: &SpeechFeatureWindow, adj: &Adjacency) -> Result<Vec<Vec3>> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params)?;
        let x = window_input(window);
        let input = tape.constant(stack_inputs(&[&x], self.config.feature_dim, self.config.window)?)?;
        let out = self.forward(&mut tape, &bound, input, adj)?;
        Ok(tape.value(out).data().chunks(3).map(|r| [r[0], r[1], r[2]]).collect())
    }

    /// Template plus predicted displacement.
    pub fn predict_frame(&self, template: &TemplateMesh, window: &SpeechFeatureWindow) -> Result<Vec<Vec3>> {
        self.predict_frame_with(template, &template_adjacency(template), window)
    }

    /// As [`Self::predict_frame`] with precomputed adjacency.
    pub fn predict_frame_with(
        &self,
        template: &TemplateMesh,
        adj: &Adjacency,
        window: &SpeechFeatureWindow,
    ) -> Result<Vec<Vec3>> {
        if template.num_vertices() != self.config.num_vertices {
            return Err(Error::Shape(format!(
                "template has {} vertices, model built for {}",
                template.num_vertices(),
                self.config.num_vertices
            )));
        }
        let d = self.predict_displacements(window, adj)?;
        Ok(template
            .vertices
            .iter()
            .zip(d)
            .map(|(p, r)| [p[0] + r[0], p[1] + r[1], p[2] + r[2]])
            .collect())
    }
}
