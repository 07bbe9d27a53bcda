//! Data-side primitives for speech-driven head animation: meshes, audio
//! features, the `HAVA` container, datasets, pose augmentation and metrics.

pub mod audio;
pub mod augment;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mesh;
pub mod pose;

pub use audio::{
    add_feature_noise, add_gaussian_noise, mel_patch, read_wav, slice_feature_windows, write_wav, MelConfig, MelExtractor, MelPatch,
    SpeechFeatureSequence, SpeechFeatureWindow, Waveform,
};
pub use augment::{attach_poses, gaussian_kernel, gaussian_smooth};
pub use container::{read_container, write_container, DType, Entry, TensorContainer};
pub use dataset::{
    generate_synthetic_bundle, generate_synthetic_dataset, load_dataset, save_dataset, Dataset, FrameSample,
    SynthConfig, SyntheticBundle,
};
pub use error::{Error, Result};
pub use eval::{emit_report, per_vertex_error, regional_metric, ReportRow};
pub use geometry::{apply_pose, RotationVector, VertexEmbedding};
pub use mesh::{icosphere, load_obj, load_region_mask, write_obj, RegionMask, TemplateMesh, Vec3};
pub use pose::{pose_magnitude_track, read_pose_csv, write_pose_csv, PoseTrack};
