//! Pose-attribute augmentation: smooth an externally estimated pose track
//! and attach it to a pose-less dataset.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::RotationVector;
use crate::pose::PoseTrack;

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_WINDOW: usize = 29;

/// Normalized samples of `exp(−x²/2σ²)` at offsets `−(w−1)/2 ..= (w−1)/2`.
pub fn gaussian_kernel(sigma: f64, window: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("window must be odd, got {window}")));
    }
    let half = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| {
            let x = (i as f64 - half).abs();
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    // pairwise from the tails inward so the sum does not depend on direction
    let mut total = raw[window / 2];
    for k in (0..window / 2).rev() {
        total += raw[k] + raw[window - 1 - k];
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Reflect index `j` into `[0, t)` without repeating the edge sample.
pub fn reflect_index(j: isize, t: usize) -> usize {
    if t == 1 {
        return 0;
    }
    let period = 2 * (t as isize - 1);
    let m = j.rem_euclid(period);
    if m < t as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Convolves one series with `kernel` under reflect padding.
pub fn smooth_series(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    (0..x.len() as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[reflect_index(i + k as isize - half, x.len())])
                .sum()
        })
        .collect()
}

/// Componentwise smoothing without re-anchoring.
pub fn smooth_track_raw(track: &PoseTrack, sigma: f64, window: usize) -> Result<PoseTrack> {
    let kernel = gaussian_kernel(sigma, window)?;
    if track.is_empty() {
        return Ok(track.clone());
    }
    let comps: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let series: Vec<f64> = track.frames.iter().map(|p| p.0[c]).collect();
            smooth_series(&series, &kernel)
        })
        .collect();
    Ok(PoseTrack::new(
        (0..track.len())
            .map(|i| RotationVector([comps[0][i], comps[1][i], comps[2][i]]))
            .collect(),
    ))
}

/// Smooths each rotation component, then subtracts the smoothed frame 0.
pub fn gaussian_smooth(track: &PoseTrack, sigma: f64, window: usize) -> Result<PoseTrack> {
    Ok(smooth_track_raw(track, sigma, window)?.anchored())
}

pub fn attach_poses(mut dataset: Dataset, track: &PoseTrack) -> Result<Dataset> {
    if track.len() != dataset.num_frames() {
        return Err(Error::Shape(format!(
            "pose track has {} frames but dataset has {}",
            track.len(),
            dataset.num_frames()
        )));
    }
    for (s, p) in dataset.samples.iter_mut().zip(&track.frames) {
        s.gt_pose = *p;
    }
    dataset.poses_present = true;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel() {
        assert_eq!(gaussian_kernel(1.0, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn kernel_errors() {
        assert!(gaussian_kernel(1.0, 4).is_err());
        assert!(gaussian_kernel(0.0, 5).is_err());
        assert!(gaussian_kernel(-1.0, 5).is_err());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|j| reflect_index(j, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn constant_track_anchors_to_zero() {
        let t = PoseTrack::new(vec![RotationVector([0.2, -0.1, 0.05]); 40]);
        let s = gaussian_smooth(&t, 1.0, 29).unwrap();
        for p in &s.frames {
            assert!(p.0.iter().all(|c| c.abs() < 1e-15));
        }
    }
}
