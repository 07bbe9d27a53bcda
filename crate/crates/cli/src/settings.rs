//! Layered settings: built-in defaults, then a `key=value` config file,
//! then command-line flags.
//!
//! Keys are grouped by prefix: `anim.` (stage-1 architecture), `pose.`
//! (stage-2 architecture), `stage1.` / `stage2.` (training), `synth.`
//! (synthetic data) and `infer.` (`pivot`).

use std::fs;
use std::path::{Path, PathBuf};

use hava_core::audio::MelConfig;
use hava_core::{SynthConfig, Vec3};
use hava_model::config::{format_key_values, parse_key_values, section, ConfigMap};
use hava_model::{AnimationConfig, PoseConfig, PoseInput, TrainConfig};

use crate::error::{CliError, Result};

/// Name of the config file `synth` writes next to the data.
pub const DATASET_CONFIG: &str = "hava.cfg";

const SECTIONS: [&str; 6] = ["anim", "pose", "stage1", "stage2", "synth", "infer"];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub anim: ConfigMap,
    pub pose: ConfigMap,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub synth: SynthConfig,
    pub pivot: Option<Vec3>,
    pub source: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            anim: ConfigMap::new(),
            pose: ConfigMap::new(),
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
            synth: SynthConfig::default(),
            pivot: None,
            source: None,
        }
    }
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn one(key: &str, v: &[f64]) -> Result<f64, String> {
    match v {
        [x] if x.is_finite() => Ok(*x),
        _ => Err(format!("`{key}` expects one finite number, got {v:?}")),
    }
}

fn count(key: &str, v: &[f64]) -> Result<usize, String> {
    let x = one(key, v)?;
    if x < 0.0 || x.fract() != 0.0 {
        return Err(format!("`{key}` expects a non-negative integer, got {x}"));
    }
    Ok(x as usize)
}

fn set_synth(cfg: &mut SynthConfig, key: &str, v: &[f64]) -> Result<(), String> {
    match key {
        "feature_dim" => cfg.feature_dim = count(key, v)?,
        "window" => cfg.window = count(key, v)?,
        "fps" => cfg.fps = one(key, v)?,
        "radius" => cfg.radius = one(key, v)?,
        "max_displacement" => cfg.max_displacement = one(key, v)?,
        "latent_sigma" => cfg.latent_sigma = one(key, v)?,
        "latent_std" => cfg.latent_std = one(key, v)?,
        "feature_noise" => cfg.feature_noise = one(key, v)?,
        "pose_amplitudes" => match v {
            [a, b] => cfg.pose_amplitudes = [*a, *b],
            _ => return Err(format!("`{key}` expects two numbers, got {v:?}")),
        },
        "mel" => cfg.mel = MelConfig::from_slice(v).map_err(|e| e.to_string())?,
        _ => return Err(format!("unknown synth key `{key}`")),
    }
    Ok(())
}

fn synth_map(cfg: &SynthConfig) -> ConfigMap {
    let mut m = ConfigMap::new();
    m.insert("feature_dim".into(), vec![cfg.feature_dim as f64]);
    m.insert("window".into(), vec![cfg.window as f64]);
    m.insert("fps".into(), vec![cfg.fps]);
    m.insert("radius".into(), vec![cfg.radius]);
    m.insert("max_displacement".into(), vec![cfg.max_displacement]);
    m.insert("latent_sigma".into(), vec![cfg.latent_sigma]);
    m.insert("latent_std".into(), vec![cfg.latent_std]);
    m.insert("feature_noise".into(), vec![cfg.feature_noise]);
    m.insert("pose_amplitudes".into(), cfg.pose_amplitudes.to_vec());
    m.insert("mel".into(), cfg.mel.to_vec());
    m
}

fn train_map(cfg: &TrainConfig) -> ConfigMap {
    let mut m = ConfigMap::new();
    m.insert("epochs".into(), vec![cfg.epochs as f64]);
    m.insert("batch".into(), vec![cfg.batch as f64]);
    m.insert("lr".into(), vec![cfg.lr]);
    m.insert("lambda".into(), vec![cfg.lambda]);
    m.insert("seed".into(), vec![cfg.seed as f64]);
    if let Some(s) = cfg.max_steps {
        m.insert("max_steps".into(), vec![s as f64]);
    }
    m
}

fn prefixed(out: &mut ConfigMap, prefix: &str, map: &ConfigMap) {
    for (k, v) in map {
        out.insert(format!("{prefix}.{k}"), v.clone());
    }
}

impl Settings {
    /// Applies a parsed config map on top of the current values.
    pub fn apply(&mut self, map: &ConfigMap, origin: &Path) -> Result<()> {
        if let Some(bad) = map
            .keys()
            .find(|k| !SECTIONS.iter().any(|s| k.starts_with(&format!("{s}."))))
        {
            return Err(config_err(
                origin,
                format!("key `{bad}` has no known section ({})", SECTIONS.join(", ")),
            ));
        }
        let anim = section(map, "anim");
        AnimationConfig::new(0).apply(&anim).map_err(|e| config_err(origin, e))?;
        self.anim.extend(anim);
        let pose = section(map, "pose");
        PoseConfig::default().apply(&pose).map_err(|e| config_err(origin, e))?;
        self.pose.extend(pose);
        self.stage1.apply(&section(map, "stage1")).map_err(|e| config_err(origin, e))?;
        self.stage2.apply(&section(map, "stage2")).map_err(|e| config_err(origin, e))?;
        for (k, v) in section(map, "synth") {
            set_synth(&mut self.synth, &k, &v).map_err(|e| config_err(origin, e))?;
        }
        for (k, v) in section(map, "infer") {
            match (k.as_str(), v.as_slice()) {
                ("pivot", [x, y, z]) => self.pivot = Some([*x, *y, *z]),
                _ => return Err(config_err(origin, format!("bad infer key `{k}` = {v:?}"))),
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
        let map = parse_key_values(&text).map_err(|e| config_err(path, e))?;
        let mut s = Self::default();
        s.apply(&map, path)?;
        s.source = Some(path.to_path_buf());
        Ok(s)
    }

    /// The explicit file if given, else `hava.cfg` inside `data_dir` when
    /// present, else built-in defaults.
    pub fn resolve(explicit: Option<&Path>, data_dir: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        if let Some(candidate) = data_dir.map(|d| d.join(DATASET_CONFIG)).filter(|p| p.is_file()) {
            return Self::load(&candidate);
        }
        Ok(Self::default())
    }

    /// Stage-1 architecture for a dataset's shape.
    pub fn animation_config(&self, num_vertices: usize, window: usize, feature_dim: usize) -> Result<AnimationConfig> {
        let mut c = AnimationConfig::new(num_vertices);
        c.apply(&self.anim)?;
        c.num_vertices = num_vertices;
        c.window = window;
        c.feature_dim = feature_dim;
        c.validate()?;
        Ok(c)
    }

    /// Pose architecture for a dataset. With speech-feature input the patch
    /// shape is `D × W` instead of the mel shape.
    pub fn pose_config(&self, mel: &MelConfig, feature_dim: usize, window: usize) -> Result<PoseConfig> {
        let mut c = PoseConfig::default();
        c.apply(&self.pose)?;
        c.mel = mel.clone();
        if c.input == PoseInput::SpeechFeatures {
            c.mel.n_mels = feature_dim;
            c.mel.n_frames = window;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        prefixed(&mut m, "anim", &self.anim);
        prefixed(&mut m, "pose", &self.pose);
        prefixed(&mut m, "stage1", &train_map(&self.stage1));
        prefixed(&mut m, "stage2", &train_map(&self.stage2));
        prefixed(&mut m, "synth", &synth_map(&self.synth));
        if let Some(p) = self.pivot {
            m.insert("infer.pivot".into(), p.to_vec());
        }
        m
    }

    pub fn to_text(&self) -> String {
        format_key_values(&self.to_map())
    }
}

/// Desk-scale settings for the synthetic corpus: small widths and step
/// budgets that fit a single CPU core.
pub fn desk_settings() -> Settings {
    let mut s = Settings::default();
    let mut anim = ConfigMap::new();
    anim.insert("bands".into(), vec![8.0]);
    anim.insert("alm_channels".into(), vec![16.0, 16.0, 32.0, 32.0, 32.0]);
    anim.insert("local_mlp".into(), vec![32.0; 4]);
    anim.insert("agm_channels".into(), vec![16.0, 32.0, 32.0, 32.0]);
    anim.insert("global_mlp".into(), vec![32.0; 2]);
    anim.insert("gcn_width".into(), vec![32.0]);
    anim.insert("gcn_layers".into(), vec![8.0]);
    s.anim = anim;
    let mut pose = ConfigMap::new();
    pose.insert("conv_channels".into(), vec![16.0, 16.0, 32.0, 32.0, 32.0, 32.0, 32.0]);
    pose.insert("lstm_hidden".into(), vec![32.0]);
    pose.insert("chunk_len".into(), vec![30.0]);
    s.pose = pose;
    s.stage1 = TrainConfig {
        epochs: 1000,
        batch: 16,
        lr: 1e-3,
        max_steps: Some(2000),
        ..TrainConfig::stage1()
    };
    s.stage2 = TrainConfig {
        epochs: 1000,
        batch: 2,
        lr: 1e-3,
        max_steps: Some(600),
        ..TrainConfig::stage2()
    };
    s
}
