//! Mel versus speech-feature input for the pose model.

mod common;

use common::{small_pose, small_synth};
use hava_core::audio::slice_feature_windows;
use hava_core::{generate_synthetic_dataset, Dataset, MelPatch};
use hava_model::config::ConfigMap;
use hava_model::{feature_patch, train_stage2, Error, PoseConfig, PoseInput, PoseModel, Stage2Data, TrainConfig};
use hava_nn::AdamState;

fn dataset(seed: u64) -> Dataset {
    generate_synthetic_dataset(seed, 12, 40, &small_synth()).unwrap()
}

fn feature_config(ds: &Dataset) -> PoseConfig {
    let mut c = small_pose();
    c.input = PoseInput::SpeechFeatures;
    c.mel.n_mels = ds.features.dim;
    c.mel.n_frames = ds.window;
    c
}

#[test]
fn feature_patch_transposes_the_window() {
    let ds = dataset(3);
    for w in slice_feature_windows(&ds.features, ds.window).unwrap().iter().step_by(7) {
        let p = feature_patch(w);
        assert_eq!((p.n_mels, p.n_frames, p.center_frame), (w.dim, w.rows, w.center_frame));
        for r in 0..w.rows {
            for d in 0..w.dim {
                assert_eq!(p.at(d, r), w.row(r)[d]);
            }
        }
    }
}

#[test]
fn input_key_round_trips_and_defaults_to_mel() {
    let ds = dataset(3);
    let mel = small_pose();
    assert!(!mel.to_map().contains_key("input"));
    assert_eq!(PoseConfig::from_map(&mel.to_map()).unwrap(), mel);

    let feat = feature_config(&ds);
    assert_eq!(feat.to_map()["input"], vec![1.0]);
    assert_eq!(PoseConfig::from_map(&feat.to_map()).unwrap(), feat);

    let mut bad: ConfigMap = feat.to_map();
    bad.insert("input".into(), vec![2.0]);
    assert!(matches!(PoseConfig::from_map(&bad), Err(Error::Config(_))));
}

#[test]
fn stage2_data_follows_the_input_kind() {
    let ds = dataset(3);
    let m = PoseModel::new(feature_config(&ds), 1).unwrap();
    let data = Stage2Data::from_dataset(&ds, &m).unwrap();
    let want: Vec<MelPatch> = ds.samples.iter().map(|s| feature_patch(&s.speech_window)).collect();
    assert_eq!(data.mels, want);

    // Mel-shaped model fed from features must be rejected.
    let mut wrong = small_pose();
    wrong.input = PoseInput::SpeechFeatures;
    let m = PoseModel::new(wrong, 1).unwrap();
    assert!(matches!(Stage2Data::from_dataset(&ds, &m), Err(Error::Shape(_))));
}

fn held_out_mse(config: PoseConfig, train: &Dataset, test: &Dataset) -> f64 {
    let mut m = PoseModel::new(config, 5).unwrap();
    let data = Stage2Data::from_dataset(train, &m).unwrap();
    let cfg = TrainConfig {
        epochs: 1000,
        batch: 2,
        lr: 3e-3,
        max_steps: Some(300),
        ..TrainConfig::stage2()
    };
    let mut adam = AdamState::new(0.0);
    train_stage2(&mut m, &mut adam, &data, &cfg, |_, _, _| Ok(())).unwrap();

    let eval = Stage2Data::from_dataset(test, &m).unwrap();
    let track = m.predict_pose_track(&eval.mels.iter().collect::<Vec<_>>()).unwrap();
    let n = track.len() as f64 * 3.0;
    track
        .frames
        .iter()
        .zip(&eval.targets)
        .map(|(p, q)| (0..3).map(|k| (p.0[k] - q[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n
}

/// The synthetic audio envelopes carry the head motion while the speech
/// features do not, so the mel-driven model must generalize better.
#[test]
fn mel_input_beats_speech_features_on_held_out_audio() {
    let (train, test) = (dataset(3), dataset(11));
    let mel = held_out_mse(small_pose(), &train, &test);
    let feat = held_out_mse(feature_config(&train), &train, &test);
    eprintln!("pose held-out MSE: mel {mel:.3e}, speech features {feat:.3e}");
    assert!(mel.is_finite() && feat.is_finite());
    assert!(mel < feat, "mel {mel:.3e} vs speech features {feat:.3e}");
}
