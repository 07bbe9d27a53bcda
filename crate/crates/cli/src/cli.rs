use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hava", version, about = "Speech-driven head animation: synthesize, train, infer, evaluate")]
pub struct Cli {
    /// `key=value` settings file (sections anim., pose., stage1., stage2., synth., infer.)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic oracle dataset with audio, features and masks
    Synth(SynthArgs),
    /// Train the animation (stage 1) or pose (stage 2) model
    Train(TrainArgs),
    /// Animate a template from speech features and audio
    Infer(InferArgs),
    /// Score predicted frames against ground truth
    Eval(EvalArgs),
    /// Smooth a pose track, optionally attaching it to a dataset
    Augment(AugmentArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 162)]
    pub vertices: usize,
    #[arg(long, default_value_t = 256)]
    pub frames: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stage 2 only: drive the pose model from speech features instead of mel
    #[arg(long, hide = true)]
    pub pose_from_features: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub anim_ckpt: PathBuf,
    #[arg(long, required_unless_present_any = ["no_pose", "const_pose"])]
    pub pose_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the pose model; every frame stays unposed
    #[arg(long, conflicts_with = "const_pose")]
    pub no_pose: bool,
    /// Inject white noise at this SNR into the audio and the features
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0, requires = "snr_db")]
    pub noise_seed: u64,
    #[arg(long, hide = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub const_pose: Option<Vec<f64>>,
    #[arg(long, hide = true)]
    pub pose_round_trip: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `frame_*.obj`
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory or directory of ground-truth `frame_*.obj`
    #[arg(long)]
    pub gt: PathBuf,
    /// Lip mask, then optionally the eye mask
    #[arg(long, required = true, num_args = 1, action = clap::ArgAction::Append)]
    pub mask: Vec<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// PLY with the mean per-vertex error painted on the template
    #[arg(long)]
    pub colormap: Option<PathBuf>,
    #[arg(long)]
    pub squared: bool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 29)]
    pub window: usize,
    /// Dataset directory to attach the smoothed track to
    #[arg(long)]
    pub attach: Option<PathBuf>,
}
