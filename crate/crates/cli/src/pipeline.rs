//! Audio and speech features in, posed per-frame meshes out.

use std::fs;
use std::path::Path;

use hava_core::audio::{add_feature_noise, add_gaussian_noise, slice_feature_windows, MelExtractor};
use hava_core::container::read_container;
use hava_core::dataset::DEFAULT_FPS;
use hava_core::{apply_pose, write_obj, write_pose_csv, PoseTrack, RotationVector, SpeechFeatureSequence, TemplateMesh, Vec3, Waveform};
use hava_model::{feature_patch, template_adjacency, AnimationModel, PoseInput, PoseModel};
use rayon::prelude::*;

use crate::error::{io_err, CliError, Result};

/// Where per-frame poses come from.
#[derive(Debug, Clone)]
pub enum PoseSource {
    Model(PoseModel),
    /// Every frame unposed.
    Zero,
    /// The same rotation on every frame.
    Constant(RotationVector),
}

#[derive(Debug, Clone, Default)]
pub struct InferOptions {
    /// Rotation center; the template centroid when absent.
    pub pivot: Option<Vec3>,
    /// Injected noise as `(snr_db, seed)`.
    pub noise: Option<(f64, u64)>,
    /// Apply `p̂` then `−p̂` to every frame.
    pub round_trip: bool,
    /// Worker threads for per-frame stage-1 inference; `None` uses all.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutput {
    pub frames: Vec<Vec<Vec3>>,
    pub poses: PoseTrack,
}

/// Feature matrix and frame rate from a container with a `features` entry
/// (`T × D`) and an optional `meta` entry whose first value is the fps.
pub fn read_features(path: &Path) -> Result<(SpeechFeatureSequence, f64)> {
    let c = read_container(path)?;
    let e = c.require("features")?;
    let [_, d] = e.dims[..] else {
        return Err(CliError::Runtime(format!(
            "{}: `features` must be T×D, got {:?}",
            path.display(),
            e.dims
        )));
    };
    let fps = c.get("meta").and_then(|m| m.values.first().copied()).unwrap_or(DEFAULT_FPS);
    Ok((SpeechFeatureSequence::new(d, e.values.clone())?, fps))
}

/// Number of video frames a waveform spans at `fps`.
pub fn audio_frames(w: &Waveform, fps: f64) -> usize {
    (w.samples.len() as f64 * fps / w.sample_rate as f64).round() as usize
}

fn frame_threads(requested: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(requested.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

#[allow(clippy::too_many_arguments)]
pub fn infer_sequence(
    template: &TemplateMesh,
    anim: &AnimationModel,
    pose: &PoseSource,
    features: &SpeechFeatureSequence,
    fps: f64,
    wav: &Waveform,
    opts: &InferOptions,
) -> Result<InferOutput> {
    let t = features.num_frames();
    let t_audio = audio_frames(wav, fps);
    if t_audio != t {
        return Err(CliError::Runtime(format!(
            "audio spans {t_audio} frames at {fps} fps but the features have {t}"
        )));
    }
    let cfg = anim.config();
    if features.dim != cfg.feature_dim {
        return Err(CliError::Runtime(format!(
            "features have width {}, the animation model expects {}",
            features.dim, cfg.feature_dim
        )));
    }
    let (features, wav) = match opts.noise {
        Some((snr, seed)) => (add_feature_noise(features, snr, seed)?, add_gaussian_noise(wav, snr, seed)?),
        None => (features.clone(), wav.clone()),
    };

    let poses = match pose {
        PoseSource::Zero => PoseTrack::zeros(t),
        PoseSource::Constant(c) => PoseTrack::new(vec![*c; t]),
        PoseSource::Model(m) => {
            let mels = match m.config().input {
                PoseInput::Mel => {
                    let extractor = MelExtractor::new(&m.config().mel)?;
                    (0..t).map(|i| extractor.patch(&wav, i, fps)).collect::<hava_core::Result<Vec<_>>>()?
                }
                PoseInput::SpeechFeatures => {
                    let w = m.config().mel.n_frames;
                    slice_feature_windows(&features, w)?.iter().map(feature_patch).collect()
                }
            };
            let refs: Vec<_> = mels.iter().collect();
            m.predict_pose_track(&refs)?
        }
    };

    let windows = slice_feature_windows(&features, cfg.window)?;
    let adj = template_adjacency(template);
    let unposed: Vec<Vec<Vec3>> = frame_threads(opts.threads)?.install(|| {
        windows
            .par_iter()
            .map(|w| anim.predict_frame_with(template, &adj, w))
            .collect::<hava_model::Result<_>>()
    })?;

    let pivot = opts.pivot.unwrap_or_else(|| template.centroid());
    let frames = unposed
        .iter()
        .zip(&poses.frames)
        .map(|(v, p)| {
            let posed = apply_pose(v, *p, pivot);
            if opts.round_trip {
                apply_pose(&posed, p.neg(), pivot)
            } else {
                posed
            }
        })
        .collect();
    Ok(InferOutput { frames, poses })
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.obj")
}

/// Writes `frame_%05d.obj` per frame and `poses.csv` into `dir`.
pub fn write_sequence(dir: &Path, template: &TemplateMesh, out: &InferOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, v) in out.frames.iter().enumerate() {
        write_obj(&template.with_vertices(v.clone())?, dir.join(frame_file_name(i)))?;
    }
    write_pose_csv(&out.poses, dir.join("poses.csv"))?;
    Ok(())
}
