//! Stage-1 and stage-2 optimization loops.
//!
//! Both loops derive every batch from the global step index alone, so a run
//! restored from a checkpoint continues exactly where it stopped.

use std::fs;
use std::path::Path;

use hava_core::{Dataset, MelPatch};
use hava_nn::{Adjacency, AdamState, Bound, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::animation::{stack_inputs, template_adjacency, window_input, AnimationModel};
use crate::config::{PoseInput, TrainConfig};
use crate::error::{Error, Result};
use crate::pose_model::{feature_patch, LstmState, PoseModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    /// 1-based optimizer step.
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

pub fn write_history(rows: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("step,epoch,loss\n");
    for r in rows {
        text.push_str(&format!("{},{},{:.9e}\n", r.step, r.epoch, r.loss));
    }
    fs::write(path, text).map_err(|source| hava_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Mean loss of each epoch present in `rows`, in epoch order.
pub fn epoch_means(rows: &[HistoryRow]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(last) if last.0 == r.epoch => {
                last.1 += r.loss;
                last.2 += 1;
            }
            _ => out.push((r.epoch, r.loss, 1)),
        }
    }
    out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
}

pub fn steps_per_epoch(items: usize, batch: usize) -> u64 {
    items.div_ceil(batch.max(1)) as u64
}

fn total_steps(cfg: &TrainConfig, per_epoch: u64) -> u64 {
    let full = cfg.epochs as u64 * per_epoch;
    cfg.max_steps.map_or(full, |m| m.min(full))
}

/// Frame visiting order of one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Per-frame stage-1 inputs and residual targets.
#[derive(Debug, Clone)]
pub struct Stage1Data {
    /// `D × W` per frame.
    pub inputs: Vec<Vec<f64>>,
    /// `N × 3` per frame, ground truth minus template.
    pub residuals: Vec<Vec<f64>>,
    pub adjacency: Adjacency,
}

impl Stage1Data {
    pub fn from_dataset(ds: &Dataset, model: &AnimationModel) -> Result<Self> {
        let c = model.config();
        if ds.num_vertices() != c.num_vertices {
            return Err(Error::Shape(format!(
                "dataset has {} vertices, model built for {}",
                ds.num_vertices(),
                c.num_vertices
            )));
        }
        if ds.window != c.window || ds.features.dim != c.feature_dim {
            return Err(Error::Shape(format!(
                "dataset windows {}×{}, model expects {}×{}",
                ds.window, ds.features.dim, c.window, c.feature_dim
            )));
        }
        if ds.samples.is_empty() {
            return Err(Error::Shape("dataset has no frames".into()));
        }
        let inputs = ds.samples.iter().map(|s| window_input(&s.speech_window)).collect();
        let residuals = ds
            .samples
            .iter()
            .map(|s| {
                s.gt_vertices
                    .iter()
                    .zip(&ds.template.vertices)
                    .flat_map(|(y, p)| [y[0] - p[0], y[1] - p[1], y[2] - p[2]])
                    .collect()
            })
            .collect();
        Ok(Self {
            inputs,
            residuals,
            adjacency: template_adjacency(&ds.template),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.inputs.len()
    }
}

/// Batch-mean stage-1 objective for `frames` on `tape`.
pub fn stage1_batch_loss(
    model: &AnimationModel,
    tape: &mut Tape,
    bound: &Bound,
    data: &Stage1Data,
    frames: &[usize],
    lambda: f64,
) -> Result<hava_nn::Var> {
    let c = model.config();
    let b = frames.len();
    let n = c.num_vertices;
    let prev: Vec<usize> = frames.iter().map(|&f| f.saturating_sub(1)).collect();
    let inputs: Vec<&[f64]> = frames
        .iter()
        .chain(&prev)
        .map(|&f| data.inputs[f].as_slice())
        .collect();
    let input = tape.constant(stack_inputs(&inputs, c.feature_dim, c.window)?)?;
    let out = model.forward(tape, bound, input, &data.adjacency)?;
    let cur = tape.slice_rows(out, 0, b * n)?;
    let before = tape.slice_rows(out, b * n, 2 * b * n)?;

    let mut target = Vec::with_capacity(b * n * 3);
    let mut delta = Vec::with_capacity(b * n * 3);
    for (&f, &p) in frames.iter().zip(&prev) {
        target.extend_from_slice(&data.residuals[f]);
        delta.extend(data.residuals[f].iter().zip(&data.residuals[p]).map(|(a, b)| a - b));
    }
    let target = tape.constant(Tensor::new(vec![b * n, 3], target)?)?;
    let delta = tape.constant(Tensor::new(vec![b * n, 3], delta)?)?;

    let err = tape.sub(cur, target)?;
    let l_r = tape.sum_abs(err)?;
    let vel = tape.sub(cur, before)?;
    let verr = tape.sub(vel, delta)?;
    let l_v = tape.sum_abs(verr)?;
    let l_v = tape.scale(l_v, lambda)?;
    let total = tape.add(l_r, l_v)?;
    Ok(tape.scale(total, 1.0 / b as f64)?)
}

/// Runs stage-1 steps from `adam.t` up to the configured total.
pub fn train_stage1(
    model: &mut AnimationModel,
    adam: &mut AdamState,
    data: &Stage1Data,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&HistoryRow, &AnimationModel, &AdamState) -> Result<()>,
) -> Result<Vec<HistoryRow>> {
    cfg.validate()?;
    adam.lr = cfg.lr;
    let n = data.num_frames();
    let per_epoch = steps_per_epoch(n, cfg.batch);
    let total = total_steps(cfg, per_epoch);
    let mut history = Vec::new();
    let mut order: Option<(usize, Vec<usize>)> = None;
    while adam.t < total {
        let step = adam.t;
        let epoch = (step / per_epoch) as usize;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, n)));
        }
        let ord = &order.as_ref().expect("set above").1;
        let k = (step % per_epoch) as usize * cfg.batch;
        let frames = &ord[k..(k + cfg.batch).min(n)];

        let loss = (|| -> Result<f64> {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, model.params())?;
            let loss = stage1_batch_loss(model, &mut tape, &bound, data, frames, cfg.lambda)?;
            model.params_mut().backward(&tape, &bound, loss)?;
            Ok(tape.value(loss).data()[0])
        })()
        .map_err(|e| Error::at_step(step + 1, e))?;
        adam.step(model.params_mut());
        let row = HistoryRow {
            step: adam.t,
            epoch,
            loss,
        };
        on_step(&row, model, adam)?;
        history.push(row);
    }
    Ok(history)
}

/// Mel patches and target rotations for stage 2.
#[derive(Debug, Clone)]
pub struct Stage2Data {
    pub mels: Vec<MelPatch>,
    pub targets: Vec<[f64; 3]>,
}

impl Stage2Data {
    pub fn from_dataset(ds: &Dataset, model: &PoseModel) -> Result<Self> {
        if !ds.poses_present {
            return Err(Error::MissingPoses);
        }
        let mel = &model.config().mel;
        let (have, inputs): ((usize, usize), Vec<MelPatch>) = match model.config().input {
            PoseInput::Mel => (
                (ds.mel_config.n_mels, ds.mel_config.n_frames),
                ds.samples.iter().map(|s| s.mel.clone()).collect(),
            ),
            PoseInput::SpeechFeatures => (
                (ds.features.dim, ds.window),
                ds.samples.iter().map(|s| feature_patch(&s.speech_window)).collect(),
            ),
        };
        if have != (mel.n_mels, mel.n_frames) {
            return Err(Error::Shape(format!(
                "dataset pose inputs {}×{}, model expects {}×{}",
                have.0, have.1, mel.n_mels, mel.n_frames
            )));
        }
        if ds.samples.is_empty() {
            return Err(Error::Shape("dataset has no frames".into()));
        }
        Ok(Self {
            mels: inputs,
            targets: ds.samples.iter().map(|s| s.gt_pose.0).collect(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.mels.len()
    }
}

/// Stage-2 loss for the chunks `[first, first + count)`: mean over their
/// frames of `‖p − p̂‖²`. Gradients are truncated at chunk boundaries; the
/// state entering `first` is recomputed without gradients.
pub fn stage2_step_loss(
    model: &PoseModel,
    tape: &mut Tape,
    bound: &Bound,
    data: &Stage2Data,
    chunk_len: usize,
    first: usize,
    count: usize,
) -> Result<hava_nn::Var> {
    let mels: Vec<&MelPatch> = data.mels.iter().collect();
    let start = first * chunk_len;
    let mut state = if start == 0 {
        LstmState::zeros(model.config().lstm_hidden)
    } else {
        model.run_chunked(&mels[..start], chunk_len)?.1
    };

    let zero = model.state_vars(tape, &LstmState::zeros(model.config().lstm_hidden))?;
    let in0 = tape.constant(model.stack(&mels[..1])?)?;
    let enc0 = model.encode(tape, bound, in0)?;
    let (r0, _) = model.recur(tape, bound, enc0, &zero)?;
    let r0 = r0[0];

    let end = ((first + count) * chunk_len).min(mels.len());
    let mut terms = Vec::new();
    for lo in (start..end).step_by(chunk_len) {
        let hi = (lo + chunk_len).min(end);
        let sv = model.state_vars(tape, &state)?;
        let input = tape.constant(model.stack(&mels[lo..hi])?)?;
        let enc = model.encode(tape, bound, input)?;
        let (raw, last) = model.recur(tape, bound, enc, &sv)?;
        state = model.read_state(tape, &last);
        for (i, r) in raw.into_iter().enumerate() {
            let p_hat = tape.sub(r, r0)?;
            let target = tape.constant(Tensor::new(vec![1, 3], data.targets[lo + i].to_vec())?)?;
            let d = tape.sub(p_hat, target)?;
            terms.push(tape.sum_sq(d)?);
        }
    }
    let frames = terms.len();
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = tape.add(acc, *t)?;
    }
    Ok(tape.scale(acc, 1.0 / frames as f64)?)
}

/// Runs stage-2 steps from `adam.t`; each step covers `cfg.batch`
/// consecutive chunks, visited in sequence order every epoch.
pub fn train_stage2(
    model: &mut PoseModel,
    adam: &mut AdamState,
    data: &Stage2Data,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&HistoryRow, &PoseModel, &AdamState) -> Result<()>,
) -> Result<Vec<HistoryRow>> {
    cfg.validate()?;
    adam.lr = cfg.lr;
    let chunk_len = model.config().chunk_len;
    let chunks = data.num_frames().div_ceil(chunk_len);
    let per_epoch = steps_per_epoch(chunks, cfg.batch);
    let total = total_steps(cfg, per_epoch);
    let mut history = Vec::new();
    while adam.t < total {
        let step = adam.t;
        let epoch = (step / per_epoch) as usize;
        let first = (step % per_epoch) as usize * cfg.batch;
        let loss = (|| -> Result<f64> {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, model.params())?;
            let loss = stage2_step_loss(model, &mut tape, &bound, data, chunk_len, first, cfg.batch)?;
            model.params_mut().backward(&tape, &bound, loss)?;
            Ok(tape.value(loss).data()[0])
        })()
        .map_err(|e| Error::at_step(step + 1, e))?;
        adam.step(model.params_mut());
        let row = HistoryRow {
            step: adam.t,
            epoch,
            loss,
        };
        on_step(&row, model, adam)?;
        history.push(row);
    }
    Ok(history)
}
