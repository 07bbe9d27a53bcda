//! Stage-2 pose model: a convolutional mel encoder feeding a two-layer
//! LSTM, re-anchored so the first frame of a sequence has zero rotation.

use hava_core::{MelPatch, PoseTrack, RotationVector, SpeechFeatureWindow};
use hava_nn::{lstm_cell, Bound, LstmWeights, ParameterSet, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::config::{PoseConfig, LSTM_LAYERS, PSM_KERNEL};
use crate::error::{Error, Result};
use crate::spec::{build_params, check_params, Init, ParamSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseModel {
    config: PoseConfig,
    params: ParameterSet,
}

/// Hidden and cell state of every LSTM layer, each `1 × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            layers: (0..LSTM_LAYERS)
                .map(|_| (Tensor::zeros(&[1, hidden]), Tensor::zeros(&[1, hidden])))
                .collect(),
        }
    }
}

fn param_specs(c: &PoseConfig) -> Result<Vec<ParamSpec>> {
    let mut s = Vec::new();
    let mut c_in = c.mel.n_mels;
    for (i, &c_out) in c.conv_channels.iter().enumerate() {
        s.extend(ParamSpec::conv(&format!("psm.conv{i}"), c_in, c_out, PSM_KERNEL));
        c_in = c_out;
    }
    let h = c.lstm_hidden;
    let mut f_in = c.encoding_width()?;
    for l in 0..LSTM_LAYERS {
        s.push(ParamSpec::glorot(format!("psm.lstm{l}.w_ih"), vec![f_in, 4 * h], f_in, 4 * h));
        s.push(ParamSpec::glorot(format!("psm.lstm{l}.w_hh"), vec![h, 4 * h], h, 4 * h));
        s.push(ParamSpec {
            name: format!("psm.lstm{l}.b"),
            shape: vec![4 * h],
            init: Init::ForgetBias { hidden: h },
        });
        f_in = h;
    }
    s.push(ParamSpec::glorot("psm.out.w".into(), vec![h, 3], h, 3));
    Ok(s)
}

/// A `W × D` speech window as a `D × W` patch, so the encoder convolves
/// over time with the feature dimensions as channels.
pub fn feature_patch(w: &SpeechFeatureWindow) -> MelPatch {
    let mut values = Vec::with_capacity(w.values.len());
    for d in 0..w.dim {
        values.extend((0..w.rows).map(|r| w.values[r * w.dim + d]));
    }
    MelPatch {
        center_frame: w.center_frame,
        n_mels: w.dim,
        n_frames: w.rows,
        values,
    }
}

/// Stacks mel patches into a `T × F × L` tensor.
pub fn stack_mels(mels: &[&MelPatch], n_mels: usize, n_frames: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(mels.len() * n_mels * n_frames);
    for m in mels {
        if m.n_mels != n_mels || m.n_frames != n_frames {
            return Err(Error::Shape(format!(
                "mel patch {}×{}, model expects {n_mels}×{n_frames}",
                m.n_mels, m.n_frames
            )));
        }
        data.extend_from_slice(&m.values);
    }
    Ok(Tensor::new(vec![mels.len(), n_mels, n_frames], data)?)
}

impl PoseModel {
    pub fn new(config: PoseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = build_params(&param_specs(&config)?, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: PoseConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        check_params(&param_specs(&config)?, &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PoseConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        check_params(&param_specs(&self.config)?, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn stack(&self, mels: &[&MelPatch]) -> Result<Tensor> {
        stack_mels(mels, self.config.mel.n_mels, self.config.mel.n_frames)
    }

    /// Mel encoding, `T × E` for a `T × F × L` input.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let t = tape.value(input).shape()[0];
        let mut h = input;
        for (i, &s) in self.config.conv_strides.iter().enumerate() {
            let w = bound.var(&format!("psm.conv{i}.w"))?;
            let b = bound.var(&format!("psm.conv{i}.b"))?;
            h = tape.conv1d(h, w, b, s, self.config.conv_padding)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        Ok(tape.reshape(h, vec![t, self.config.encoding_width()?])?)
    }

    fn lstm_weights(&self, bound: &Bound, l: usize) -> Result<LstmWeights> {
        Ok(LstmWeights {
            w_ih: bound.var(&format!("psm.lstm{l}.w_ih"))?,
            w_hh: bound.var(&format!("psm.lstm{l}.w_hh"))?,
            bias: bound.var(&format!("psm.lstm{l}.b"))?,
        })
    }

    /// Steps the LSTM over every row of `enc` from `state`, returning the
    /// raw per-frame rotations (`1 × 3` each) and the final state on the
    /// tape.
    pub fn recur(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        enc: Var,
        state: &[(Var, Var)],
    ) -> Result<(Vec<Var>, Vec<(Var, Var)>)> {
        let t = tape.value(enc).shape()[0];
        let weights: Vec<LstmWeights> = (0..LSTM_LAYERS)
            .map(|l| self.lstm_weights(bound, l))
            .collect::<Result<_>>()?;
        let ow = bound.var("psm.out.w")?;
        let mut state = state.to_vec();
        let mut out = Vec::with_capacity(t);
        for i in 0..t {
            let mut x = tape.slice_rows(enc, i, i + 1)?;
            for (l, w) in weights.iter().enumerate() {
                let (h, c) = lstm_cell(tape, x, state[l].0, state[l].1, w)?;
                state[l] = (h, c);
                x = h;
            }
            out.push(tape.matmul(x, ow)?);
        }
        Ok((out, state))
    }

    /// Places a detached state on the tape.
    pub fn state_vars(&self, tape: &mut Tape, state: &LstmState) -> Result<Vec<(Var, Var)>> {
        state
            .layers
            .iter()
            .map(|(h, c)| Ok((tape.constant(h.clone())?, tape.constant(c.clone())?)))
            .collect()
    }

    pub fn read_state(&self, tape: &Tape, vars: &[(Var, Var)]) -> LstmState {
        LstmState {
            layers: vars
                .iter()
                .map(|(h, c)| (tape.value(*h).clone(), tape.value(*c).clone()))
                .collect(),
        }
    }

    /// Raw (unanchored) rotations for `mels` starting from `state`.
    pub fn run_raw(&self, mels: &[&MelPatch], state: &LstmState) -> Result<(Vec<[f64; 3]>, LstmState)> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params)?;
        let input = tape.constant(self.stack(mels)?)?;
        let enc = self.encode(&mut tape, &bound, input)?;
        let sv = self.state_vars(&mut tape, state)?;
        let (out, end) = self.recur(&mut tape, &bound, enc, &sv)?;
        let raw = out
            .iter()
            .map(|v| {
                let d = tape.value(*v).data();
                [d[0], d[1], d[2]]
            })
            .collect();
        Ok((raw, self.read_state(&tape, &end)))
    }

    /// Raw rotations over a whole sequence processed `chunk_len` frames at a
    /// time with state carried between chunks. Returns the state after the
    /// last frame.
    pub fn run_chunked(&self, mels: &[&MelPatch], chunk_len: usize) -> Result<(Vec<[f64; 3]>, LstmState)> {
        if chunk_len == 0 {
            return Err(Error::Config("chunk length must be ≥ 1".into()));
        }
        let mut state = LstmState::zeros(self.config.lstm_hidden);
        let mut raw = Vec::with_capacity(mels.len());
        for chunk in mels.chunks(chunk_len) {
            let (r, s) = self.run_raw(chunk, &state)?;
            raw.extend(r);
            state = s;
        }
        Ok((raw, state))
    }

    /// Anchored pose track using the configured chunk length.
    pub fn predict_pose_track(&self, mels: &[&MelPatch]) -> Result<PoseTrack> {
        self.predict_pose_track_chunked(mels, self.config.chunk_len)
    }

    pub fn predict_pose_track_chunked(&self, mels: &[&MelPatch], chunk_len: usize) -> Result<PoseTrack> {
        if mels.is_empty() {
            return Ok(PoseTrack::new(Vec::new()));
        }
        let (raw, _) = self.run_chunked(mels, chunk_len)?;
        let r0 = raw[0];
        Ok(PoseTrack::new(
            raw.iter()
                .map(|r| RotationVector([r[0] - r0[0], r[1] - r0[1], r[2] - r0[2]]))
                .collect(),
        ))
    }
}
