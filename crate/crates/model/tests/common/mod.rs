#![allow(dead_code)]

use hava_core::audio::MelConfig;
use hava_core::{MelPatch, SynthConfig};
use hava_model::{AnimationConfig, PoseConfig, PoseInput};
use hava_nn::{ParameterSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_animation(n: usize) -> AnimationConfig {
    AnimationConfig {
        window: 16,
        feature_dim: 4,
        bands: 2,
        num_vertices: n,
        alm_channels: vec![3, 3, 3, 3, 3],
        local_mlp: vec![4, 4, 4, 3],
        agm_channels: vec![3, 3, 3, 3],
        agm_strides: vec![1, 2, 1, 2],
        global_mlp: vec![4, 3],
        gcn_width: 5,
        gcn_layers: 8,
    }
}

pub fn small_mel() -> MelConfig {
    MelConfig {
        sample_rate: 8000,
        n_fft: 128,
        hop: 64,
        n_mels: 8,
        n_frames: 8,
        fmin: 0.0,
        fmax: 4000.0,
    }
}

pub fn small_pose() -> PoseConfig {
    PoseConfig {
        mel: small_mel(),
        input: PoseInput::Mel,
        conv_channels: vec![2; 7],
        conv_strides: vec![1, 2, 1, 2, 1, 1, 1],
        conv_padding: 1,
        lstm_hidden: 3,
        chunk_len: 4,
    }
}

pub fn small_synth() -> SynthConfig {
    SynthConfig {
        feature_dim: 4,
        mel: small_mel(),
        ..SynthConfig::default()
    }
}

/// Overwrites every parameter with uniform values in `±scale`.
pub fn randomize(params: &mut ParameterSet, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_mels(seed: u64, t: usize, f: usize, l: usize) -> Vec<MelPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|i| MelPatch {
            center_frame: i,
            n_mels: f,
            n_frames: l,
            values: (0..f * l).map(|_| rng.random_range(-3.0..1.0)).collect(),
        })
        .collect()
}

pub fn nn<T>(r: hava_model::Result<T>) -> hava_nn::Result<T> {
    r.map_err(|e| hava_nn::Error::Config(e.to_string()))
}
