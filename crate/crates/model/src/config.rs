//! Model and training configuration.
//!
//! Every config converts to and from a [`ConfigMap`] of numeric lists; the
//! same map backs `key=value` files and the `__config/…` checkpoint entries.

use std::collections::BTreeMap;

use hava_core::audio::MelConfig;

use crate::error::{Error, Result};

pub type ConfigMap = BTreeMap<String, Vec<f64>>;

pub const ALM_KERNEL: usize = 4;
pub const AGM_KERNEL: usize = 3;
pub const PSM_KERNEL: usize = 3;

/// Output length of a kernel-`k` convolution, or `None` when the padded
/// input is shorter than the kernel.
pub fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

fn scalar(key: &str, v: &[f64]) -> Result<usize> {
    match v {
        [x] if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
        _ => Err(Error::Config(format!("`{key}` expects one non-negative integer, got {v:?}"))),
    }
}

fn real(key: &str, v: &[f64]) -> Result<f64> {
    match v {
        [x] if x.is_finite() => Ok(*x),
        _ => Err(Error::Config(format!("`{key}` expects one finite number, got {v:?}"))),
    }
}

fn list(key: &str, v: &[f64]) -> Result<Vec<usize>> {
    v.iter()
        .map(|x| scalar(key, std::slice::from_ref(x)))
        .collect()
}

fn as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn positive(name: &str, v: &[usize]) -> Result<()> {
    if v.contains(&0) {
        return Err(Error::Config(format!("`{name}` entries must be ≥ 1, got {v:?}")));
    }
    Ok(())
}

fn exact_len(name: &str, v: &[usize], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Config(format!("`{name}` needs {n} entries, got {}", v.len())));
    }
    Ok(())
}

/// Parses `key=value[,value…]` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let values = v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("line {}: `{}`: {e}", i + 1, s.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if map.insert(k.trim().to_string(), values).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{}`", i + 1, k.trim())));
        }
    }
    Ok(map)
}

/// Keys of `map` starting with `prefix.`, with the prefix removed.
pub fn section(map: &ConfigMap, prefix: &str) -> ConfigMap {
    let p = format!("{prefix}.");
    map.iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
        .collect()
}

pub fn format_key_values(map: &ConfigMap) -> String {
    map.iter()
        .map(|(k, v)| {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("{k}={}\n", vals.join(","))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnimationConfig {
    /// Speech window length `W`.
    pub window: usize,
    /// Speech feature width `D`.
    pub feature_dim: usize,
    /// Fourier bands `K` (embedding width `2K`).
    pub bands: usize,
    pub num_vertices: usize,
    pub alm_channels: Vec<usize>,
    /// Widths of the four per-vertex MLP layers; the last is `local_dim`.
    pub local_mlp: Vec<usize>,
    pub agm_channels: Vec<usize>,
    pub agm_strides: Vec<usize>,
    /// Widths of the two global MLP layers; the last is `global_dim`.
    pub global_mlp: Vec<usize>,
    pub gcn_width: usize,
    pub gcn_layers: usize,
}

impl AnimationConfig {
    pub fn new(num_vertices: usize) -> Self {
        Self {
            window: 16,
            feature_dim: 29,
            bands: 8,
            num_vertices,
            alm_channels: vec![32, 32, 64, 64, 64],
            local_mlp: vec![64, 64, 64, 64],
            agm_channels: vec![32, 64, 64, 64],
            agm_strides: vec![1, 2, 1, 2],
            global_mlp: vec![64, 64],
            gcn_width: 128,
            gcn_layers: 8,
        }
    }

    pub fn local_dim(&self) -> usize {
        *self.local_mlp.last().unwrap_or(&0)
    }

    pub fn global_dim(&self) -> usize {
        *self.global_mlp.last().unwrap_or(&0)
    }

    pub fn embedding_width(&self) -> usize {
        2 * self.bands
    }

    pub fn assembled_width(&self) -> usize {
        self.local_dim() + self.global_dim() + self.embedding_width()
    }

    /// Time lengths after each AGM convolution.
    pub fn agm_lengths(&self) -> Result<Vec<usize>> {
        let mut t = self.window;
        let mut out = Vec::new();
        for (i, &s) in self.agm_strides.iter().enumerate() {
            t = conv_out_len(t, AGM_KERNEL, s, 0).ok_or_else(|| {
                Error::Config(format!(
                    "AGM conv {} receives length {t} < kernel {AGM_KERNEL} (window {}, strides {:?})",
                    i + 1,
                    self.window,
                    self.agm_strides
                ))
            })?;
            out.push(t);
        }
        Ok(out)
    }

    pub fn agm_flat_width(&self) -> Result<usize> {
        Ok(self.agm_lengths()?.last().copied().unwrap_or(0) * self.agm_channels.last().copied().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        exact_len("alm_channels", &self.alm_channels, 5)?;
        exact_len("local_mlp", &self.local_mlp, 4)?;
        exact_len("agm_channels", &self.agm_channels, 4)?;
        exact_len("agm_strides", &self.agm_strides, 4)?;
        exact_len("global_mlp", &self.global_mlp, 2)?;
        for (name, v) in [
            ("alm_channels", &self.alm_channels),
            ("local_mlp", &self.local_mlp),
            ("agm_channels", &self.agm_channels),
            ("agm_strides", &self.agm_strides),
            ("global_mlp", &self.global_mlp),
        ] {
            positive(name, v)?;
        }
        positive(
            "window/feature_dim/bands/gcn_width/gcn_layers",
            &[self.window, self.feature_dim, self.bands, self.gcn_width, self.gcn_layers],
        )?;
        if self.num_vertices < 2 {
            return Err(Error::Config(format!("need at least 2 vertices, got {}", self.num_vertices)));
        }
        let alm_needed = self.alm_channels.len() * (ALM_KERNEL - 1) + 1;
        if self.window < alm_needed {
            return Err(Error::Config(format!(
                "window {} too short for five kernel-{ALM_KERNEL} convolutions (needs ≥ {alm_needed})",
                self.window
            )));
        }
        self.agm_lengths()?;
        Ok(())
    }

    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        m.insert("window".into(), vec![self.window as f64]);
        m.insert("feature_dim".into(), vec![self.feature_dim as f64]);
        m.insert("bands".into(), vec![self.bands as f64]);
        m.insert("num_vertices".into(), vec![self.num_vertices as f64]);
        m.insert("alm_channels".into(), as_f64(&self.alm_channels));
        m.insert("local_mlp".into(), as_f64(&self.local_mlp));
        m.insert("agm_channels".into(), as_f64(&self.agm_channels));
        m.insert("agm_strides".into(), as_f64(&self.agm_strides));
        m.insert("global_mlp".into(), as_f64(&self.global_mlp));
        m.insert("gcn_width".into(), vec![self.gcn_width as f64]);
        m.insert("gcn_layers".into(), vec![self.gcn_layers as f64]);
        m
    }

    pub fn set(&mut self, key: &str, v: &[f64]) -> Result<()> {
        match key {
            "window" => self.window = scalar(key, v)?,
            "feature_dim" => self.feature_dim = scalar(key, v)?,
            "bands" => self.bands = scalar(key, v)?,
            "num_vertices" => self.num_vertices = scalar(key, v)?,
            "alm_channels" => self.alm_channels = list(key, v)?,
            "local_mlp" => self.local_mlp = list(key, v)?,
            "agm_channels" => self.agm_channels = list(key, v)?,
            "agm_strides" => self.agm_strides = list(key, v)?,
            "global_mlp" => self.global_mlp = list(key, v)?,
            "gcn_width" => self.gcn_width = scalar(key, v)?,
            "gcn_layers" => self.gcn_layers = scalar(key, v)?,
            _ => return Err(Error::Config(format!("unknown animation key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, map: &ConfigMap) -> Result<()> {
        map.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut c = Self::new(0);
        c.apply(map)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseConfig {
    /// Mel settings; `n_mels` is `F` and `n_frames` is `L`.
    pub mel: MelConfig,
    pub input: PoseInput,
    pub conv_channels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub conv_padding: usize,
    pub lstm_hidden: usize,
    pub chunk_len: usize,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            input: PoseInput::Mel,
            conv_channels: vec![32, 32, 64, 64, 64, 64, 64],
            conv_strides: vec![1, 2, 1, 2, 1, 1, 1],
            conv_padding: 1,
            lstm_hidden: 128,
            chunk_len: 30,
        }
    }
}

pub const LSTM_LAYERS: usize = 2;

/// What the pose model listens to. `SpeechFeatures` feeds each `W × D`
/// speech window as a `D × W` patch, so `mel.n_mels` must be `D` and
/// `mel.n_frames` must be `W`; it exists only for comparing the two inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseInput {
    #[default]
    Mel,
    SpeechFeatures,
}

impl PoseConfig {
    pub fn conv_lengths(&self) -> Result<Vec<usize>> {
        let mut t = self.mel.n_frames;
        let mut out = Vec::new();
        for (i, &s) in self.conv_strides.iter().enumerate() {
            t = conv_out_len(t, PSM_KERNEL, s, self.conv_padding).ok_or_else(|| {
                Error::Config(format!(
                    "PsM conv {} receives length {t} < kernel {PSM_KERNEL} with padding {} (L={}, strides {:?})",
                    i + 1,
                    self.conv_padding,
                    self.mel.n_frames,
                    self.conv_strides
                ))
            })?;
            out.push(t);
        }
        Ok(out)
    }

    /// Flattened encoding width `E`.
    pub fn encoding_width(&self) -> Result<usize> {
        Ok(self.conv_lengths()?.last().copied().unwrap_or(0) * self.conv_channels.last().copied().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        exact_len("conv_channels", &self.conv_channels, 7)?;
        exact_len("conv_strides", &self.conv_strides, 7)?;
        positive("conv_channels", &self.conv_channels)?;
        positive("conv_strides", &self.conv_strides)?;
        positive("lstm_hidden/chunk_len", &[self.lstm_hidden, self.chunk_len])?;
        self.conv_lengths()?;
        Ok(())
    }

    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        m.insert("mel".into(), self.mel.to_vec());
        if self.input == PoseInput::SpeechFeatures {
            m.insert("input".into(), vec![1.0]);
        }
        m.insert("conv_channels".into(), as_f64(&self.conv_channels));
        m.insert("conv_strides".into(), as_f64(&self.conv_strides));
        m.insert("conv_padding".into(), vec![self.conv_padding as f64]);
        m.insert("lstm_hidden".into(), vec![self.lstm_hidden as f64]);
        m.insert("chunk_len".into(), vec![self.chunk_len as f64]);
        m
    }

    pub fn set(&mut self, key: &str, v: &[f64]) -> Result<()> {
        match key {
            "mel" => self.mel = MelConfig::from_slice(v)?,
            "input" => {
                self.input = match scalar(key, v)? {
                    0 => PoseInput::Mel,
                    1 => PoseInput::SpeechFeatures,
                    n => return Err(Error::Config(format!("pose input must be 0 (mel) or 1 (speech features), got {n}"))),
                }
            }
            "n_mels" => self.mel.n_mels = scalar(key, v)?,
            "mel_frames" => self.mel.n_frames = scalar(key, v)?,
            "sample_rate" => self.mel.sample_rate = scalar(key, v)? as u32,
            "n_fft" => self.mel.n_fft = scalar(key, v)?,
            "hop" => self.mel.hop = scalar(key, v)?,
            "fmin" => self.mel.fmin = real(key, v)?,
            "fmax" => self.mel.fmax = real(key, v)?,
            "conv_channels" => self.conv_channels = list(key, v)?,
            "conv_strides" => self.conv_strides = list(key, v)?,
            "conv_padding" => self.conv_padding = scalar(key, v)?,
            "lstm_hidden" => self.lstm_hidden = scalar(key, v)?,
            "chunk_len" => self.chunk_len = scalar(key, v)?,
            _ => return Err(Error::Config(format!("unknown pose key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, map: &ConfigMap) -> Result<()> {
        map.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut c = Self::default();
        c.apply(map)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Velocity-loss weight `λ` (stage 1 only).
    pub lambda: f64,
    pub seed: u64,
    /// Optional cap on the total number of optimizer steps.
    pub max_steps: Option<u64>,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            epochs: 50,
            batch: 64,
            lr: 1e-4,
            lambda: 10.0,
            seed: 0,
            max_steps: None,
        }
    }

    pub fn stage2() -> Self {
        Self {
            epochs: 1,
            batch: 8,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be ≥ 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be ≥ 0, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &[f64]) -> Result<()> {
        match key {
            "epochs" => self.epochs = scalar(key, v)?,
            "batch" => self.batch = scalar(key, v)?,
            "lr" => self.lr = real(key, v)?,
            "lambda" => self.lambda = real(key, v)?,
            "seed" => self.seed = scalar(key, v)? as u64,
            "max_steps" => self.max_steps = Some(scalar(key, v)? as u64),
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, map: &ConfigMap) -> Result<()> {
        map.iter().try_for_each(|(k, v)| self.set(k, v))
    }
}
