//! Per-frame head-pose tracks and their CSV form (`frame,rx,ry,rz`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RotationVector;

pub const POSE_CSV_HEADER: &str = "frame,rx,ry,rz";

/// `T` rotation vectors relative to frame 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseTrack {
    pub frames: Vec<RotationVector>,
}

impl PoseTrack {
    pub fn new(frames: Vec<RotationVector>) -> Self {
        Self { frames }
    }

    pub fn zeros(t: usize) -> Self {
        Self {
            frames: vec![RotationVector::ZERO; t],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Subtracts frame 0 from every frame.
    pub fn anchored(&self) -> Self {
        let Some(first) = self.frames.first().copied() else {
            return self.clone();
        };
        Self {
            frames: self
                .frames
                .iter()
                .map(|p| RotationVector([p.0[0] - first.0[0], p.0[1] - first.0[1], p.0[2] - first.0[2]]))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|p| p.0).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(3) {
            return Err(Error::Shape(format!("{} pose values are not triples", values.len())));
        }
        Ok(Self {
            frames: values
                .chunks_exact(3)
                .map(|c| RotationVector([c[0], c[1], c[2]]))
                .collect(),
        })
    }
}

/// Per-frame rotation angle (norm of the rotation vector).
pub fn pose_magnitude_track(track: &PoseTrack) -> Vec<f64> {
    track.frames.iter().map(RotationVector::angle).collect()
}

pub fn parse_pose_csv(text: &str, path: &Path) -> Result<PoseTrack> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == POSE_CSV_HEADER => {}
        Some((i, _)) => {
            return Err(Error::parse(path, i + 1, format!("expected header `{POSE_CSV_HEADER}`")))
        }
        None => return Err(Error::parse(path, 1, format!("missing header `{POSE_CSV_HEADER}`"))),
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, i + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|e| Error::parse(path, i + 1, format!("bad frame index `{}`: {e}", fields[0])))?;
        if frame != frames.len() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("non-contiguous frame index {frame}, expected {}", frames.len()),
            ));
        }
        let mut r = [0.0f64; 3];
        for (slot, s) in r.iter_mut().zip(&fields[1..]) {
            *slot = s
                .parse()
                .map_err(|e| Error::parse(path, i + 1, format!("bad value `{s}`: {e}")))?;
            if !slot.is_finite() {
                return Err(Error::parse(path, i + 1, "non-finite rotation component"));
            }
        }
        frames.push(RotationVector(r));
    }
    Ok(PoseTrack { frames })
}

pub fn read_pose_csv(path: impl AsRef<Path>) -> Result<PoseTrack> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_csv(&text, path)
}

/// Writes radians with 9 significant digits.
pub fn write_pose_csv(track: &PoseTrack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from(POSE_CSV_HEADER);
    s.push('\n');
    for (i, p) in track.frames.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", p.0[0], p.0[1], p.0[2]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
