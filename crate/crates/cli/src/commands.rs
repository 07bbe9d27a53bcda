use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use hava_core::container::{write_container, Entry, TensorContainer};
use hava_core::eval::{mean_vertex_error, region_max_series};
use hava_core::mesh::{export_ply_colormap, write_region_mask};
use hava_core::{
    attach_poses, emit_report, gaussian_smooth, generate_synthetic_bundle, load_dataset, load_obj, load_region_mask,
    read_pose_csv, read_wav, regional_metric, save_dataset, write_pose_csv, write_wav, ReportRow, RotationVector,
    TemplateMesh, Vec3,
};
use hava_model::train::{epoch_means, write_history, HistoryRow};
use hava_model::{
    load_checkpoint, save_checkpoint, train_stage1, train_stage2, AnimationModel, PoseModel, Stage1Data, Stage2Data,
    TrainConfig,
};
use hava_nn::AdamState;

use crate::cli::{AugmentArgs, EvalArgs, InferArgs, SynthArgs, TrainArgs};
use crate::error::{io_err, CliError, Result};
use crate::pipeline::{infer_sequence, read_features, write_sequence, InferOptions, PoseSource};
use crate::settings::{desk_settings, Settings, DATASET_CONFIG};

/// Environment variable capping inference threads.
pub const THREADS_ENV: &str = "HAVA_THREADS";

fn echo(command: &str, pairs: &[(&str, &dyn Display)]) {
    for (k, v) in pairs {
        eprintln!("hava {command}: {k} = {v}");
    }
}

fn show(p: &Option<impl Display>) -> String {
    p.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn show_path(p: &Option<PathBuf>) -> String {
    show(&p.as_ref().map(|p| p.display()))
}

pub fn synth(args: &SynthArgs, config: Option<&Path>) -> Result<()> {
    let settings = match config {
        Some(p) => Settings::load(p)?,
        None => desk_settings(),
    };
    echo(
        "synth",
        &[
            ("out", &args.out.display()),
            ("vertices", &args.vertices),
            ("frames", &args.frames),
            ("seed", &args.seed),
            ("config", &show_path(&settings.source)),
        ],
    );
    let bundle = generate_synthetic_bundle(args.seed, args.vertices, args.frames, &settings.synth)?;
    let ds = &bundle.dataset;
    save_dataset(ds, &args.out)?;

    let mut feats = TensorContainer::new();
    feats.push(Entry::f32("features", vec![ds.num_frames(), ds.features.dim], ds.features.values.clone())?)?;
    feats.push(Entry::f32("meta", vec![2], vec![ds.fps, ds.window as f64])?)?;
    write_container(&feats, args.out.join("features.hava"))?;
    write_wav(&bundle.waveform, args.out.join("audio.wav"))?;
    write_region_mask(&bundle.lips, args.out.join("lips.txt"))?;
    write_region_mask(&bundle.eyes, args.out.join("eyes.txt"))?;
    write_pose_csv(&ds.pose_track(), args.out.join("poses.csv"))?;
    let cfg_path = args.out.join(DATASET_CONFIG);
    fs::write(&cfg_path, settings.to_text()).map_err(|e| io_err(&cfg_path, e))?;
    eprintln!(
        "hava synth: {} vertices, {} frames, lips {} / eyes {} vertices",
        ds.num_vertices(),
        ds.num_frames(),
        bundle.lips.len(),
        bundle.eyes.len()
    );
    Ok(())
}

/// `<ckpt stem>_history.csv` next to the checkpoint.
pub fn history_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ckpt".into());
    ckpt.with_file_name(format!("{stem}_history.csv"))
}

fn train_config(base: &TrainConfig, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(base.epochs),
        batch: args.batch.unwrap_or(base.batch),
        lr: args.lr.unwrap_or(base.lr),
        lambda: args.lambda.unwrap_or(base.lambda),
        seed: args.seed.unwrap_or(base.seed),
        max_steps: base.max_steps,
    };
    if args.epochs.is_some() {
        cfg.max_steps = None;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn summarize(history: &[HistoryRow]) {
    let means = epoch_means(history);
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        eprintln!(
            "hava train: {} steps, epoch {} mean loss {:.6e}, epoch {} mean loss {:.6e} (ratio {:.4})",
            history.len(),
            first.0 + 1,
            first.1,
            last.0 + 1,
            last.1,
            last.1 / first.1
        );
    }
}

pub fn train(args: &TrainArgs, config: Option<&Path>) -> Result<()> {
    if args.pose_from_features && args.stage != 2 {
        return Err(CliError::Usage("--pose-from-features applies to --stage 2 only".into()));
    }
    let settings = Settings::resolve(config, Some(&args.data))?;
    let base = if args.stage == 1 { &settings.stage1 } else { &settings.stage2 };
    let cfg = train_config(base, args)?;
    echo(
        "train",
        &[
            ("stage", &args.stage),
            ("data", &args.data.display()),
            ("ckpt", &args.ckpt.display()),
            ("epochs", &cfg.epochs),
            ("batch", &cfg.batch),
            ("lr", &cfg.lr),
            ("lambda", &cfg.lambda),
            ("seed", &cfg.seed),
            ("max_steps", &show(&cfg.max_steps)),
            ("config", &show_path(&settings.source)),
        ],
    );
    let ds = load_dataset(&args.data)?;
    let mut adam = AdamState::new(cfg.lr);
    let history = if args.stage == 1 {
        let arch = settings.animation_config(ds.num_vertices(), ds.window, ds.features.dim)?;
        let mut model = AnimationModel::new(arch, cfg.seed)?;
        let data = Stage1Data::from_dataset(&ds, &model)?;
        let h = train_stage1(&mut model, &mut adam, &data, &cfg, |_, _, _| Ok(()))?;
        save_checkpoint(&model, &adam, &args.ckpt)?;
        h
    } else {
        let mut settings = settings;
        if args.pose_from_features {
            settings.pose.insert("input".into(), vec![1.0]);
        }
        let arch = settings.pose_config(&ds.mel_config, ds.features.dim, ds.window)?;
        let mut model = PoseModel::new(arch, cfg.seed)?;
        let data = Stage2Data::from_dataset(&ds, &model)?;
        let h = train_stage2(&mut model, &mut adam, &data, &cfg, |_, _, _| Ok(()))?;
        save_checkpoint(&model, &adam, &args.ckpt)?;
        h
    };
    write_history(&history, history_path(&args.ckpt))?;
    summarize(&history);
    Ok(())
}

/// Thread cap from `HAVA_THREADS`; unset means no cap.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn infer(args: &InferArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::resolve(config, args.features.parent())?;
    let threads = thread_cap()?;
    echo(
        "infer",
        &[
            ("template", &args.template.display()),
            ("anim-ckpt", &args.anim_ckpt.display()),
            ("pose-ckpt", &show_path(&args.pose_ckpt)),
            ("features", &args.features.display()),
            ("wav", &args.wav.display()),
            ("out", &args.out.display()),
            ("no-pose", &args.no_pose),
            ("snr-db", &show(&args.snr_db)),
            ("noise-seed", &args.noise_seed),
            ("pivot", &show(&settings.pivot.map(|p| format!("{},{},{}", p[0], p[1], p[2])))),
            ("threads", &show(&threads)),
            ("config", &show_path(&settings.source)),
        ],
    );
    let template = load_obj(&args.template)?;
    let (anim, _) = load_checkpoint::<AnimationModel>(&args.anim_ckpt)?;
    let pose = match (&args.const_pose, args.no_pose, &args.pose_ckpt) {
        (Some(c), _, _) => match c[..] {
            [x, y, z] => PoseSource::Constant(RotationVector([x, y, z])),
            _ => return Err(CliError::Usage(format!("--const-pose expects x,y,z, got {c:?}"))),
        },
        (None, true, _) => PoseSource::Zero,
        (None, false, Some(p)) => PoseSource::Model(load_checkpoint::<PoseModel>(p)?.0),
        (None, false, None) => return Err(CliError::Usage("--pose-ckpt is required unless --no-pose is given".into())),
    };
    let (features, fps) = read_features(&args.features)?;
    let wav = read_wav(&args.wav)?;
    let opts = InferOptions {
        pivot: settings.pivot,
        noise: args.snr_db.map(|s| (s, args.noise_seed)),
        round_trip: args.pose_round_trip,
        threads,
    };
    let out = infer_sequence(&template, &anim, &pose, &features, fps, &wav, &opts)?;
    write_sequence(&args.out, &template, &out)?;
    eprintln!("hava infer: wrote {} frames to {}", out.frames.len(), args.out.display());
    Ok(())
}

/// `frame_*.obj` files of a directory in name order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".obj"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Runtime(format!("{}: no frame_*.obj files", dir.display())));
    }
    Ok(files)
}

/// Template and per-frame vertices from a dataset or a frame directory.
pub fn load_frames(dir: &Path) -> Result<(TemplateMesh, Vec<Vec<Vec3>>)> {
    if dir.join("data.hava").is_file() {
        let ds = load_dataset(dir)?;
        let frames = ds.samples.iter().map(|s| s.gt_vertices.clone()).collect();
        return Ok((ds.template, frames));
    }
    let meshes = frame_files(dir)?
        .iter()
        .map(load_obj)
        .collect::<hava_core::Result<Vec<_>>>()?;
    let frames = meshes.iter().map(|m| m.vertices.clone()).collect();
    Ok((meshes.into_iter().next().expect("non-empty"), frames))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    echo(
        "eval",
        &[
            ("pred", &args.pred.display()),
            ("gt", &args.gt.display()),
            ("mask", &args.mask.iter().map(|m| m.display().to_string()).collect::<Vec<_>>().join(",")),
            ("report", &args.report.display()),
            ("colormap", &show_path(&args.colormap)),
            ("squared", &args.squared),
        ],
    );
    if args.mask.len() > 2 {
        return Err(CliError::Usage(format!("at most two --mask files, got {}", args.mask.len())));
    }
    let (template, gt) = load_frames(&args.gt)?;
    let (_, pred) = load_frames(&args.pred)?;
    let n = template.num_vertices();
    let masks = args
        .mask
        .iter()
        .map(|p| load_region_mask(p, n))
        .collect::<hava_core::Result<Vec<_>>>()?;
    let metrics = masks
        .iter()
        .map(|m| regional_metric(&gt, &pred, m, args.squared))
        .collect::<hava_core::Result<Vec<_>>>()?;
    let series = masks
        .iter()
        .map(|m| Ok((m.name.clone(), region_max_series(&gt, &pred, m, args.squared)?)))
        .collect::<Result<Vec<_>>>()?;
    let dataset = args
        .gt
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.gt.display().to_string());
    let row = ReportRow {
        method: "hava".into(),
        dataset,
        e_vl: metrics[0],
        e_ve: metrics.get(1).copied(),
        series,
    };
    emit_report(std::slice::from_ref(&row), &args.report)?;
    if let Some(ply) = &args.colormap {
        export_ply_colormap(&template, &mean_vertex_error(&gt, &pred)?, ply)?;
    }
    println!("E_vl {:.6}", row.e_vl);
    if let Some(e) = row.e_ve {
        println!("E_ve {e:.6}");
    }
    Ok(())
}

pub fn augment(args: &AugmentArgs) -> Result<()> {
    echo(
        "augment",
        &[
            ("poses", &args.poses.display()),
            ("out", &args.out.display()),
            ("sigma", &args.sigma),
            ("window", &args.window),
            ("attach", &show_path(&args.attach)),
        ],
    );
    let track = read_pose_csv(&args.poses)?;
    let smooth = gaussian_smooth(&track, args.sigma, args.window)?;
    write_pose_csv(&smooth, &args.out)?;
    if let Some(dir) = &args.attach {
        let ds = attach_poses(load_dataset(dir)?, &smooth)?;
        save_dataset(&ds, dir)?;
        eprintln!("hava augment: attached {} poses to {}", smooth.len(), dir.display());
    }
    Ok(())
}
