//! Fourier vertex-index embedding and axis-angle head pose.

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Maps vertex `v` of `n` to `2v/(n−1) − 1 ∈ [−1, 1]`.
pub fn normalize_index(v: usize, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config(format!(
            "index normalization needs at least 2 vertices, got {n}"
        )));
    }
    if v >= n {
        return Err(Error::OutOfRange {
            index: v as i64,
            limit: n,
            context: "vertex index".into(),
        });
    }
    Ok(2.0 * v as f64 / (n - 1) as f64 - 1.0)
}

/// `[sin(2⁰πt), cos(2⁰πt), …, sin(2^{K−1}πt), cos(2^{K−1}πt)]`.
pub fn fourier_embed(t: f64, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands);
    let mut freq = std::f64::consts::PI;
    for _ in 0..bands {
        let (s, c) = (freq * t).sin_cos();
        out.push(s);
        out.push(c);
        freq *= 2.0;
    }
    out
}

/// Per-vertex Fourier embedding of normalized vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexEmbedding {
    pub bands: usize,
    /// `N × 2K`, row-major.
    pub values: Vec<f64>,
}

impl VertexEmbedding {
    pub fn new(n: usize, bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Config("embedding needs at least one band".into()));
        }
        let mut values = Vec::with_capacity(n * 2 * bands);
        for v in 0..n {
            values.extend(fourier_embed(normalize_index(v, n)?, bands));
        }
        Ok(Self { bands, values })
    }

    pub fn width(&self) -> usize {
        2 * self.bands
    }

    pub fn num_vertices(&self) -> usize {
        self.values.len() / self.width()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.width()..(v + 1) * self.width()]
    }
}

/// Axis-angle rotation: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationVector(pub Vec3);

impl RotationVector {
    pub const ZERO: Self = Self([0.0; 3]);

    pub fn angle(&self) -> f64 {
        let [x, y, z] = self.0;
        (x * x + y * y + z * z).sqrt()
    }

    pub fn neg(&self) -> Self {
        Self(self.0.map(|c| -c))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// Rodrigues formula `R = I + sinθ·K + (1−cosθ)·K²`; identity below 1e−12 rad.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let theta = self.angle();
        if theta < 1e-12 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        let [x, y, z] = self.0.map(|c| c / theta);
        let (s, c) = theta.sin_cos();
        let t = 1.0 - c;
        [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
            [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
        ]
    }
}

/// Rotates every vertex about `pivot`: `x ↦ R(p)(x − pivot) + pivot`.
pub fn apply_pose(vertices: &[Vec3], pose: RotationVector, pivot: Vec3) -> Vec<Vec3> {
    if pose.angle() < 1e-12 {
        return vertices.to_vec();
    }
    let r = pose.matrix();
    vertices
        .iter()
        .map(|v| {
            let d = [v[0] - pivot[0], v[1] - pivot[1], v[2] - pivot[2]];
            let mut out = [0.0; 3];
            for (i, row) in r.iter().enumerate() {
                out[i] = row[0] * d[0] + row[1] * d[1] + row[2] * d[2] + pivot[i];
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn index_normalization_endpoints() {
        assert_eq!(normalize_index(0, 101).unwrap(), -1.0);
        assert_eq!(normalize_index(100, 101).unwrap(), 1.0);
        assert_eq!(normalize_index(50, 101).unwrap(), 0.0);
        assert!(normalize_index(0, 1).is_err());
    }

    #[test]
    fn embedding_analytic_values() {
        assert_eq!(fourier_embed(0.0, 2), vec![0.0, 1.0, 0.0, 1.0]);
        let e = fourier_embed(-1.0, 1);
        assert!(e[0].abs() < 1e-15);
        assert_eq!(e[1], -1.0);
    }

    #[test]
    fn embedding_matches_direct_evaluation() {
        let t = 0.3;
        let e = fourier_embed(t, 8);
        for k in 0..8 {
            let w = 2f64.powi(k as i32) * PI * t;
            assert!((e[2 * k] - w.sin()).abs() < 1e-12);
            assert!((e[2 * k + 1] - w.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let out = apply_pose(&[[1.0, 0.0, 0.0]], RotationVector([0.0, 0.0, PI / 2.0]), [0.0; 3]);
        assert!((out[0][0]).abs() < 1e-15);
        assert!((out[0][1] - 1.0).abs() < 1e-15);
        assert_eq!(out[0][2], 0.0);
    }

    #[test]
    fn zero_pose_is_identity() {
        let v = vec![[1.5, -2.0, 3.25], [0.0, 7.0, -1.0]];
        assert_eq!(apply_pose(&v, RotationVector::ZERO, [3.0, 1.0, 2.0]), v);
        assert_eq!(apply_pose(&v, RotationVector([1e-13, 0.0, 0.0]), [0.0; 3]), v);
    }
}
