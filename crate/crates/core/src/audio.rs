//! Waveforms, log-mel patches, speech-feature windows and noise injection.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Power floor applied before taking log10.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("waveform samples must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Reads 16-bit PCM WAV. Multi-channel audio is averaged to mono; samples
/// are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: unsupported encoding {:?} {}-bit (need 16-bit PCM)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Wav(format!(
            "{}: {} channels (need mono or stereo)",
            path.display(),
            spec.channels
        )));
    }
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let channels = spec.channels as usize;
    if !raw.len().is_multiple_of(channels) {
        return Err(Error::Wav(format!("{}: truncated frame", path.display())));
    }
    let samples = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64 / 32768.0)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Quantizes a sample to the 16-bit grid used by [`read_wav`].
pub fn quantize_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes mono 16-bit PCM.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Wav(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    /// Number of mel bands (F).
    pub n_mels: usize,
    /// Number of STFT columns per patch (L).
    pub n_frames: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            n_frames: 16,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_fft == 0 || self.hop == 0 || self.n_mels == 0 || self.n_frames == 0 {
            return Err(Error::Config(format!("mel dimensions must be positive: {self:?}")));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "mel band edges need 0 ≤ fmin < fmax ≤ sample_rate/2: {self:?}"
            )));
        }
        Ok(())
    }

    /// `[sample_rate, n_fft, hop, n_mels, n_frames, fmin, fmax]`, the layout
    /// stored in dataset and checkpoint containers.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.sample_rate as f64,
            self.n_fft as f64,
            self.hop as f64,
            self.n_mels as f64,
            self.n_frames as f64,
            self.fmin,
            self.fmax,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 7 {
            return Err(Error::Shape(format!("mel config needs 7 values, got {}", v.len())));
        }
        let cfg = Self {
            sample_rate: v[0] as u32,
            n_fft: v[1] as usize,
            hop: v[2] as usize,
            n_mels: v[3] as usize,
            n_frames: v[4] as usize,
            fmin: v[5],
            fmax: v[6],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Dense `n_mels × (n_fft/2+1)` HTK triangular filterbank (peak 1, no area
/// normalization).
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f >= l && f <= c && c > l {
                        (f - l) / (c - l)
                    } else if f > c && f <= r && r > c {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelPatch {
    pub center_frame: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    /// `F × L`, row-major (row = mel band).
    pub values: Vec<f64>,
}

impl MelPatch {
    pub fn at(&self, band: usize, col: usize) -> f64 {
        self.values[band * self.n_frames + col]
    }
}

/// Reusable STFT + filterbank state for one [`MelConfig`].
pub struct MelExtractor {
    cfg: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per band: first nonzero bin and the weights from there on.
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelExtractor {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let bands = mel_filterbank(cfg)
            .into_iter()
            .map(|row| {
                let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
                (start, row[start..end].to_vec())
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            fft,
            window: hann_window(cfg.n_fft),
            bands,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// One-sided power spectrum `|X_k|²`, `k = 0..=n_fft/2`, of the Hann-windowed
    /// segment starting at sample `start` (zero outside the signal).
    pub fn power_spectrum(&self, samples: &[f64], start: isize) -> Vec<f64> {
        let n = self.cfg.n_fft;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let idx = start + i as isize;
                let x = if idx >= 0 && (idx as usize) < samples.len() {
                    samples[idx as usize]
                } else {
                    0.0
                };
                Complex::new(x * self.window[i], 0.0)
            })
            .collect();
        self.fft.process(&mut buf);
        buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn apply_filterbank(&self, power: &[f64]) -> Vec<f64> {
        self.bands
            .iter()
            .map(|(start, w)| {
                w.iter()
                    .zip(&power[*start..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Log-mel patch centered at the timestamp of video frame `frame`.
    ///
    /// Column `j` is the STFT frame centered `(j − L/2)·hop` samples from the
    /// frame timestamp; audio outside the waveform reads as zeros.
    pub fn patch(&self, w: &Waveform, frame: usize, fps: f64) -> Result<MelPatch> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::Config(format!(
                "waveform sampled at {} Hz, mel config expects {} Hz",
                w.sample_rate, self.cfg.sample_rate
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        let (f, l) = (self.cfg.n_mels, self.cfg.n_frames);
        let center = (frame as f64 / fps * w.sample_rate as f64).round() as isize;
        let half = (self.cfg.n_fft / 2) as isize;
        let mut values = vec![0.0; f * l];
        for j in 0..l {
            let col_center = center + (j as isize - (l / 2) as isize) * self.cfg.hop as isize;
            let power = self.power_spectrum(&w.samples, col_center - half);
            for (band, e) in self.apply_filterbank(&power).into_iter().enumerate() {
                values[band * l + j] = e.max(LOG_FLOOR).log10();
            }
        }
        Ok(MelPatch {
            center_frame: frame,
            n_mels: f,
            n_frames: l,
            values,
        })
    }
}

pub fn mel_patch(w: &Waveform, frame: usize, fps: f64, cfg: &MelConfig) -> Result<MelPatch> {
    MelExtractor::new(cfg)?.patch(w, frame, fps)
}

/// Per-frame character-probability features, `T × D` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechFeatureSequence {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SpeechFeatureSequence {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} feature values do not form rows of width {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("speech features must be finite".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn num_frames(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// `W × D` window of speech features centered at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechFeatureWindow {
    pub center_frame: usize,
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SpeechFeatureWindow {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Source row indices of window `i`: `i − ⌈W/2⌉ + 1 ..= i + ⌊W/2⌋`,
/// clamped to `[0, T)`.
pub fn window_rows(i: usize, w: usize, t: usize) -> impl Iterator<Item = usize> {
    let first = i as isize - w.div_ceil(2) as isize + 1;
    (0..w).map(move |k| (first + k as isize).clamp(0, t as isize - 1) as usize)
}

/// One edge-replicated window per frame.
pub fn slice_feature_windows(seq: &SpeechFeatureSequence, w: usize) -> Result<Vec<SpeechFeatureWindow>> {
    if w == 0 {
        return Err(Error::Config("window size must be ≥ 1".into()));
    }
    let t = seq.num_frames();
    Ok((0..t)
        .map(|i| {
            let mut values = Vec::with_capacity(w * seq.dim);
            for r in window_rows(i, w, t) {
                values.extend_from_slice(seq.row(r));
            }
            SpeechFeatureWindow {
                center_frame: i,
                rows: w,
                dim: seq.dim,
                values,
            }
        })
        .collect())
}

/// Adds zero-mean Gaussian noise at `snr_db` relative to the signal power,
/// then clips to `[−1, 1]`. An infinite SNR returns the input unchanged.
pub fn add_gaussian_noise(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("invalid SNR {snr_db} dB")));
    }
    let p_signal = w.power();
    if p_signal <= 0.0 {
        return Err(Error::Invalid("SNR is undefined for a silent waveform".into()));
    }
    let sigma = (p_signal / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples
        .iter()
        .map(|s| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (s + sigma * n).clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(samples, w.sample_rate)
}

/// Adds zero-mean Gaussian noise at `snr_db` relative to the mean square of
/// the feature matrix. Stands in for features recomputed from noisy audio.
pub fn add_feature_noise(seq: &SpeechFeatureSequence, snr_db: f64, seed: u64) -> Result<SpeechFeatureSequence> {
    if snr_db == f64::INFINITY {
        return Ok(seq.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("invalid SNR {snr_db} dB")));
    }
    let p_signal = seq.values.iter().map(|v| v * v).sum::<f64>() / seq.values.len() as f64;
    if p_signal <= 0.0 {
        return Err(Error::Invalid("SNR is undefined for all-zero features".into()));
    }
    let sigma = (p_signal / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let values = seq
        .values
        .iter()
        .map(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + sigma * n
        })
        .collect();
    SpeechFeatureSequence::new(seq.dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_floors_every_entry() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let p = mel_patch(&w, 30, 60.0, &MelConfig::default()).unwrap();
        assert_eq!(p.values.len(), 80 * 16);
        assert!(p.values.iter().all(|v| *v == -10.0));
    }

    #[test]
    fn zero_padding_before_start() {
        let cfg = MelConfig::default();
        let w = Waveform::new(vec![0.5; 16_000], 16_000).unwrap();
        let p = mel_patch(&w, 0, 60.0, &cfg).unwrap();
        // columns whose whole STFT frame lies before t=0 see only padding
        let silent_cols = (0..cfg.n_frames).filter(|&j| (0..cfg.n_mels).all(|b| p.at(b, j) == -10.0)).count();
        assert_eq!(silent_cols, cfg.n_frames / 2 - 1);
        // and the remaining columns see signal
        assert!(p.at(0, cfg.n_frames - 1) > -10.0);
    }

    #[test]
    fn bad_config_rejected() {
        let w = Waveform::new(vec![0.0; 10], 16_000).unwrap();
        let cfg = MelConfig {
            n_mels: 0,
            ..MelConfig::default()
        };
        assert!(matches!(mel_patch(&w, 0, 60.0, &cfg), Err(Error::Config(_))));
        let cfg = MelConfig {
            fmax: 9000.0,
            ..MelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn window_edge_rules() {
        let seq = SpeechFeatureSequence::new(2, vec![1.0, 2.0]).unwrap();
        let w = slice_feature_windows(&seq, 4).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].values, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);

        let seq = SpeechFeatureSequence::new(1, (0..10).map(f64::from).collect()).unwrap();
        let w = slice_feature_windows(&seq, 1).unwrap();
        assert_eq!(w.len(), 10);
        for (i, win) in w.iter().enumerate() {
            assert_eq!(win.values, vec![i as f64]);
        }
    }

    #[test]
    fn noise_noop_and_silence_error() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 16_000).unwrap();
        assert_eq!(add_gaussian_noise(&w, f64::INFINITY, 1).unwrap(), w);
        let silent = Waveform::new(vec![0.0; 100], 16_000).unwrap();
        assert!(add_gaussian_noise(&silent, 20.0, 1).is_err());
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 100.0, 440.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }
}
