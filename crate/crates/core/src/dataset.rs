//! Dataset assembly, on-disk layout and the seeded synthetic oracle.
//!
//! A dataset directory holds `template.obj` and `data.hava` with entries
//! `features` (T×D), `vertices` (T×N×3), `mel` (T×F×L), optional `poses`
//! (T×3), `meta` (`[fps, W]`) and `mel_config`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::audio::{
    quantize_pcm16, slice_feature_windows, MelConfig, MelExtractor, MelPatch, SpeechFeatureSequence,
    SpeechFeatureWindow, Waveform,
};
use crate::container::{read_container, write_container, Entry, TensorContainer};
use crate::error::{Error, Result};
use crate::geometry::RotationVector;
use crate::mesh::{build_adjacency, icosphere, load_obj, write_obj, RegionMask, TemplateMesh, Vec3};
use crate::pose::PoseTrack;

pub const TEMPLATE_FILE: &str = "template.obj";
pub const DATA_FILE: &str = "data.hava";
pub const DEFAULT_FPS: f64 = 60.0;
pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub frame: usize,
    pub gt_vertices: Vec<Vec3>,
    pub gt_pose: RotationVector,
    pub speech_window: SpeechFeatureWindow,
    pub mel: MelPatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub template: TemplateMesh,
    pub fps: f64,
    pub window: usize,
    pub features: SpeechFeatureSequence,
    pub mel_config: MelConfig,
    pub samples: Vec<FrameSample>,
    /// False when no pose track was stored; stage 2 then needs augmentation.
    pub poses_present: bool,
}

impl Dataset {
    /// Assembles samples from per-frame arrays, checking that every shape
    /// agrees with the template and the feature sequence.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        template: TemplateMesh,
        fps: f64,
        window: usize,
        features: SpeechFeatureSequence,
        mel_config: MelConfig,
        vertices: Vec<Vec<Vec3>>,
        mels: Vec<MelPatch>,
        poses: Option<PoseTrack>,
    ) -> Result<Self> {
        let t = features.num_frames();
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if vertices.len() != t || mels.len() != t {
            return Err(Error::Shape(format!(
                "features have {t} frames, vertices {}, mel {}",
                vertices.len(),
                mels.len()
            )));
        }
        let n = template.num_vertices();
        if let Some(bad) = vertices.iter().find(|v| v.len() != n) {
            return Err(Error::Shape(format!(
                "vertex frames have {} vertices, template has {n}",
                bad.len()
            )));
        }
        if let Some(p) = &poses {
            if p.len() != t {
                return Err(Error::Shape(format!("pose track has {} frames, features {t}", p.len())));
            }
        }
        let poses_present = poses.is_some();
        let poses = poses.unwrap_or_else(|| PoseTrack::zeros(t));
        let windows = slice_feature_windows(&features, window)?;
        let samples = vertices
            .into_iter()
            .zip(mels)
            .zip(windows)
            .zip(&poses.frames)
            .enumerate()
            .map(|(frame, (((gt_vertices, mel), speech_window), &gt_pose))| FrameSample {
                frame,
                gt_vertices,
                gt_pose,
                speech_window,
                mel,
            })
            .collect();
        Ok(Self {
            template,
            fps,
            window,
            features,
            mel_config,
            samples,
            poses_present,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.samples.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.template.num_vertices()
    }

    pub fn pose_track(&self) -> PoseTrack {
        PoseTrack::new(self.samples.iter().map(|s| s.gt_pose).collect())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let (t, n) = (self.num_frames(), self.num_vertices());
        let cfg = &self.mel_config;
        let mut c = TensorContainer::new();
        c.push(Entry::f32("features", vec![t, self.features.dim], self.features.values.clone())?)?;
        c.push(Entry::f32(
            "vertices",
            vec![t, n, 3],
            self.samples.iter().flat_map(|s| s.gt_vertices.iter().flatten().copied()).collect(),
        )?)?;
        c.push(Entry::f32(
            "mel",
            vec![t, cfg.n_mels, cfg.n_frames],
            self.samples.iter().flat_map(|s| s.mel.values.iter().copied()).collect(),
        )?)?;
        if self.poses_present {
            c.push(Entry::f32("poses", vec![t, 3], self.pose_track().flat())?)?;
        }
        c.push(Entry::f32("meta", vec![2], vec![self.fps, self.window as f64])?)?;
        c.push(Entry::f32("mel_config", vec![7], cfg.to_vec())?)?;
        Ok(c)
    }
}

fn expect_dims(entry: &Entry, expected: &[usize]) -> Result<()> {
    if entry.dims != expected {
        return Err(Error::Shape(format!(
            "entry `{}` has dims {:?}, expected {:?}",
            entry.name, entry.dims, expected
        )));
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_obj(&ds.template, dir.join(TEMPLATE_FILE))?;
    write_container(&ds.to_container()?, dir.join(DATA_FILE))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut template = load_obj(dir.join(TEMPLATE_FILE))?;
    if !template.has_adjacency() {
        template = build_adjacency(template);
    }
    let c = read_container(dir.join(DATA_FILE))?;
    dataset_from_container(template, &c)
}

pub fn dataset_from_container(template: TemplateMesh, c: &TensorContainer) -> Result<Dataset> {
    let features = c.require("features")?;
    if features.dims.len() != 2 {
        return Err(Error::Shape(format!("`features` must be T×D, got {:?}", features.dims)));
    }
    let (t, d) = (features.dims[0], features.dims[1]);
    let features = SpeechFeatureSequence::new(d, features.values.clone())?;

    let n = template.num_vertices();
    let vertices = c.require("vertices")?;
    expect_dims(vertices, &[t, n, 3])?;
    let frames: Vec<Vec<Vec3>> = vertices
        .values
        .chunks_exact(n * 3)
        .map(|f| f.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
        .collect();

    let (fps, window) = match c.get("meta") {
        Some(m) => (m.values[0], m.values.get(1).map_or(DEFAULT_WINDOW, |&w| w as usize)),
        None => return Err(Error::MissingEntry("meta".into())),
    };
    let mel_config = match c.get("mel_config") {
        Some(m) => MelConfig::from_slice(&m.values)?,
        None => MelConfig::default(),
    };

    let mel = c.require("mel")?;
    expect_dims(mel, &[t, mel_config.n_mels, mel_config.n_frames])?;
    let per = mel_config.n_mels * mel_config.n_frames;
    let mels = mel
        .values
        .chunks_exact(per)
        .enumerate()
        .map(|(i, v)| MelPatch {
            center_frame: i,
            n_mels: mel_config.n_mels,
            n_frames: mel_config.n_frames,
            values: v.to_vec(),
        })
        .collect();

    let poses = match c.get("poses") {
        Some(p) => {
            expect_dims(p, &[t, 3])?;
            Some(PoseTrack::from_flat(&p.values)?)
        }
        None => None,
    };
    Dataset::assemble(template, fps, window, features, mel_config, frames, mels, poses)
}

/// Knobs of the synthetic oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub feature_dim: usize,
    pub window: usize,
    pub fps: f64,
    /// Sphere radius in millimeters.
    pub radius: f64,
    /// Largest displacement-field magnitude in millimeters.
    pub max_displacement: f64,
    /// Temporal smoothing (frames) of the latent driving the features.
    pub latent_sigma: f64,
    pub latent_std: f64,
    pub feature_noise: f64,
    /// Pose amplitudes `(a, b)` in radians.
    pub pose_amplitudes: [f64; 2],
    pub mel: MelConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            feature_dim: 29,
            window: DEFAULT_WINDOW,
            fps: DEFAULT_FPS,
            radius: 100.0,
            max_displacement: 2.0,
            latent_sigma: 6.0,
            latent_std: 1.0,
            feature_noise: 0.4,
            pose_amplitudes: [0.1, 0.05],
            mel: MelConfig::default(),
        }
    }
}

/// Everything `synth` writes: the dataset plus its waveform and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub dataset: Dataset,
    pub waveform: Waveform,
    pub lips: RegionMask,
    pub eyes: RegionMask,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Oracle pose `(a·sin(2πi/T), b·sin(4πi/T), 0)`.
pub fn synthetic_pose(i: usize, t: usize, amplitudes: [f64; 2]) -> RotationVector {
    let phase = 2.0 * PI * i as f64 / t as f64;
    RotationVector([
        round_f32(amplitudes[0] * phase.sin()),
        round_f32(amplitudes[1] * (2.0 * phase).sin()),
        0.0,
    ])
}

/// Smooth seeded displacement directions `B_v`, scaled so the largest has
/// norm `max_displacement`.
pub fn synthetic_displacement_field(template: &TemplateMesh, seed: u64, max_displacement: f64) -> Vec<Vec3> {
    let mut rng = stream(seed, 2);
    let mut unit = || {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
        v.map(|x| x / n)
    };
    let dirs: Vec<Vec3> = (0..3).map(|_| unit()).collect();
    let mut rng = stream(seed, 3);
    let omega: Vec<f64> = (0..3).map(|_| rng.sample(Uniform::new(1.0, 3.0).expect("valid range"))).collect();
    let phase: Vec<f64> = (0..3).map(|_| rng.sample(Uniform::new(0.0, 2.0 * PI).expect("valid range"))).collect();
    let amp: Vec<[f64; 3]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
        .collect();

    let field: Vec<Vec3> = template
        .vertices
        .iter()
        .map(|p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(1e-12);
            let u = p.map(|x| x / r);
            let mut b = [0.0; 3];
            for k in 0..3 {
                let s = (omega[k] * (u[0] * dirs[k][0] + u[1] * dirs[k][1] + u[2] * dirs[k][2]) + phase[k]).sin();
                for c in 0..3 {
                    b[c] += amp[k][c] * s;
                }
            }
            b
        })
        .collect();
    let largest = field
        .iter()
        .map(|b| (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt())
        .fold(0.0, f64::max)
        .max(1e-12);
    field
        .into_iter()
        .map(|b| b.map(|x| x * max_displacement / largest * (1.0 - 1e-6)))
        .collect()
}

/// Smoothed seeded latent per frame, scaled to `latent_std`.
fn synthetic_latent(seed: u64, t: usize, cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = stream(seed, 1);
    let half = (3.0 * cfg.latent_sigma).ceil() as usize;
    let raw: Vec<f64> = (0..t + 2 * half).map(|_| rng.sample(StandardNormal)).collect();
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let x = k as f64 - half as f64;
            (-x * x / (2.0 * cfg.latent_sigma * cfg.latent_sigma)).exp()
        })
        .collect();
    let smooth: Vec<f64> = (0..t)
        .map(|i| kernel.iter().zip(&raw[i..]).map(|(w, x)| w * x).sum())
        .collect();
    let mean = smooth.iter().sum::<f64>() / t as f64;
    let std = (smooth.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64)
        .sqrt()
        .max(1e-12);
    smooth.iter().map(|x| (x - mean) / std * cfg.latent_std).collect()
}

/// Two amplitude-modulated tones whose envelopes follow the pose phases,
/// plus light seeded noise, quantized to the 16-bit grid.
pub fn synthetic_waveform(seed: u64, n_frames: usize, cfg: &SynthConfig) -> Result<Waveform> {
    let sr = cfg.mel.sample_rate as f64;
    let n = (n_frames as f64 / cfg.fps * sr).ceil() as usize;
    let mut rng = stream(seed, 4);
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / sr;
            let phi = t * cfg.fps / n_frames as f64;
            let a1 = 0.2 * (1.0 + 0.8 * (2.0 * PI * phi).sin());
            let a2 = 0.2 * (1.0 + 0.8 * (4.0 * PI * phi).sin());
            let noise: f64 = rng.sample(StandardNormal);
            let x = a1 * (2.0 * PI * 440.0 * t).sin() + a2 * (2.0 * PI * 1500.0 * t).sin() + 0.01 * noise;
            quantize_pcm16(x) as f64 / 32768.0
        })
        .collect();
    Waveform::new(samples, cfg.mel.sample_rate)
}

/// Front-facing coordinate bands standing in for lip and eye regions. On
/// meshes too coarse to hit a band, the vertex nearest its center is used.
pub fn synthetic_masks(template: &TemplateMesh, radius: f64) -> Result<(RegionMask, RegionMask)> {
    let band = |lo: f64, hi: f64| {
        let inside: Vec<usize> = template
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, p)| p[2] > 0.3 * radius && p[1] >= lo * radius && p[1] <= hi * radius)
            .map(|(i, _)| i)
            .collect();
        if !inside.is_empty() {
            return inside;
        }
        let y = 0.5 * (lo + hi);
        let target = [0.0, y * radius, (1.0 - y * y).sqrt() * radius];
        let dist = |p: &Vec3| (0..3).map(|k| (p[k] - target[k]).powi(2)).sum::<f64>();
        let nearest = (0..template.num_vertices())
            .min_by(|&a, &b| dist(&template.vertices[a]).total_cmp(&dist(&template.vertices[b])))
            .unwrap_or(0);
        vec![nearest]
    };
    let n = template.num_vertices();
    Ok((
        RegionMask::new("lips", band(-0.55, -0.2), n)?,
        RegionMask::new("eyes", band(0.2, 0.5), n)?,
    ))
}

/// Deterministic oracle dataset: `y_i[v] = template[v] + B_v·tanh(mean(d_i))`,
/// sinusoidal poses and mel patches from [`synthetic_waveform`]. Every stored
/// value is rounded to `f32` so a save/load round trip is exact.
pub fn generate_synthetic_bundle(seed: u64, n_vertices: usize, n_frames: usize, cfg: &SynthConfig) -> Result<SyntheticBundle> {
    if n_vertices < 12 {
        return Err(Error::Config(format!("need at least 12 vertices, got {n_vertices}")));
    }
    if n_frames < 2 {
        return Err(Error::Config(format!("need at least 2 frames, got {n_frames}")));
    }
    if cfg.feature_dim == 0 || cfg.window == 0 {
        return Err(Error::Config("feature dimension and window must be positive".into()));
    }
    cfg.mel.validate()?;

    let mut template = icosphere(n_vertices, cfg.radius);
    for v in &mut template.vertices {
        *v = v.map(round_f32);
    }

    let latent = synthetic_latent(seed, n_frames, cfg);
    let mut rng = stream(seed, 5);
    let mut feats = Vec::with_capacity(n_frames * cfg.feature_dim);
    for z in &latent {
        for _ in 0..cfg.feature_dim {
            let e: f64 = rng.sample(StandardNormal);
            feats.push(round_f32(z + cfg.feature_noise * e));
        }
    }
    let features = SpeechFeatureSequence::new(cfg.feature_dim, feats)?;
    let windows = slice_feature_windows(&features, cfg.window)?;

    let field = synthetic_displacement_field(&template, seed, cfg.max_displacement);
    let vertices = windows
        .iter()
        .map(|w| synthetic_vertices(&template, &field, w))
        .collect();

    let waveform = synthetic_waveform(seed, n_frames, cfg)?;
    let extractor = MelExtractor::new(&cfg.mel)?;
    let mels = (0..n_frames)
        .map(|i| {
            let mut p = extractor.patch(&waveform, i, cfg.fps)?;
            p.values.iter_mut().for_each(|v| *v = round_f32(*v));
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;

    let poses = PoseTrack::new(
        (0..n_frames)
            .map(|i| synthetic_pose(i, n_frames, cfg.pose_amplitudes))
            .collect(),
    );
    let (lips, eyes) = synthetic_masks(&template, cfg.radius)?;
    let dataset = Dataset::assemble(
        template,
        cfg.fps,
        cfg.window,
        features,
        cfg.mel.clone(),
        vertices,
        mels,
        Some(poses),
    )?;
    Ok(SyntheticBundle {
        dataset,
        waveform,
        lips,
        eyes,
    })
}

pub fn generate_synthetic_dataset(seed: u64, n_vertices: usize, n_frames: usize, cfg: &SynthConfig) -> Result<Dataset> {
    Ok(generate_synthetic_bundle(seed, n_vertices, n_frames, cfg)?.dataset)
}

/// The oracle map from one feature window to ground-truth vertices.
pub fn synthetic_vertices(template: &TemplateMesh, field: &[Vec3], window: &SpeechFeatureWindow) -> Vec<Vec3> {
    let s = window.mean().tanh();
    template
        .vertices
        .iter()
        .zip(field)
        .map(|(p, b)| std::array::from_fn(|k| round_f32(p[k] + b[k] * s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            mel: MelConfig {
                n_mels: 8,
                n_frames: 8,
                ..MelConfig::default()
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn first_pose_is_zero() {
        let ds = generate_synthetic_dataset(1, 12, 10, &small()).unwrap();
        assert_eq!(ds.samples[0].gt_pose, RotationVector::ZERO);
        assert_eq!(ds.num_vertices(), 12);
        assert!(ds.poses_present);
    }

    #[test]
    fn size_bounds() {
        assert!(generate_synthetic_dataset(1, 11, 10, &small()).is_err());
        assert!(generate_synthetic_dataset(1, 12, 1, &small()).is_err());
    }

    #[test]
    fn displacement_bounded() {
        let ds = generate_synthetic_dataset(3, 42, 20, &small()).unwrap();
        for s in &ds.samples {
            for (y, p) in s.gt_vertices.iter().zip(&ds.template.vertices) {
                let d = ((y[0] - p[0]).powi(2) + (y[1] - p[1]).powi(2) + (y[2] - p[2]).powi(2)).sqrt();
                assert!(d <= 2.0 + 1e-4, "{d}");
            }
        }
    }

    #[test]
    fn missing_vertices_entry() {
        let ds = generate_synthetic_dataset(1, 12, 4, &small()).unwrap();
        let mut c = ds.to_container().unwrap();
        let kept: Vec<Entry> = c.entries().iter().filter(|e| e.name != "vertices").cloned().collect();
        c = TensorContainer::from_entries(kept).unwrap();
        assert!(matches!(
            dataset_from_container(ds.template.clone(), &c),
            Err(Error::MissingEntry(name)) if name == "vertices"
        ));
    }
}
