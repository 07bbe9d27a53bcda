//! Plain-value losses, mirroring the on-tape objectives used in training.

use hava_core::mesh::Vec3;
use hava_core::RotationVector;

use crate::error::{Error, Result};

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn l1(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).sum()
}

/// `Σ_v ‖y_v − ŷ_v‖₁`.
pub fn reconstruction_loss(y: &[Vec3], y_hat: &[Vec3]) -> Result<f64> {
    same_len("reconstruction loss", y.len(), y_hat.len())?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| l1(a, b)).sum())
}

/// `Σ_v ‖(y_v − y'_v) − (ŷ_v − ŷ'_v)‖₁` between a frame and its predecessor.
pub fn velocity_loss(y_prev: &[Vec3], y: &[Vec3], y_hat_prev: &[Vec3], y_hat: &[Vec3]) -> Result<f64> {
    let n = y.len();
    for m in [y_prev.len(), y_hat_prev.len(), y_hat.len()] {
        same_len("velocity loss", n, m)?;
    }
    Ok((0..n)
        .map(|v| (0..3).map(|k| ((y[v][k] - y_prev[v][k]) - (y_hat[v][k] - y_hat_prev[v][k])).abs()).sum::<f64>())
        .sum())
}

pub fn stage1_objective(l_r: f64, l_v: f64, lambda: f64) -> f64 {
    l_r + lambda * l_v
}

/// Mean stage-1 objective over consecutive frames; the first frame is its
/// own predecessor.
pub fn stage1_loss(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>], lambda: f64) -> Result<f64> {
    same_len("stage-1 loss frames", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(Error::Shape("stage-1 loss over zero frames".into()));
    }
    let mut total = 0.0;
    for i in 0..gt.len() {
        let p = i.saturating_sub(1);
        let l_r = reconstruction_loss(&gt[i], &pred[i])?;
        let l_v = velocity_loss(&gt[p], &gt[i], &pred[p], &pred[i])?;
        total += stage1_objective(l_r, l_v, lambda);
    }
    Ok(total / gt.len() as f64)
}

/// Mean over frames of `‖p − p̂‖²`.
pub fn pose_loss(p: &[RotationVector], p_hat: &[RotationVector]) -> Result<f64> {
    same_len("pose loss", p.len(), p_hat.len())?;
    if p.is_empty() {
        return Err(Error::Shape("pose loss over zero frames".into()));
    }
    let s: f64 = p
        .iter()
        .zip(p_hat)
        .map(|(a, b)| (0..3).map(|k| (a.0[k] - b.0[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(s / p.len() as f64)
}
