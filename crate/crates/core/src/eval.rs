//! Regional vertex-error metrics and CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::{RegionMask, Vec3};

/// Euclidean distance per vertex.
pub fn per_vertex_error(y: &[Vec3], y_hat: &[Vec3]) -> Result<Vec<f64>> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "ground truth has {} vertices, prediction {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .collect())
}

/// Per-frame maximum error over the mask; `squared` uses squared distances.
pub fn region_max_series(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>], mask: &RegionMask, squared: bool) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(Error::Invalid("region mask is empty".into()));
    }
    if gt.is_empty() {
        return Err(Error::Invalid("no frames to evaluate".into()));
    }
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth frames, {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    gt.iter()
        .zip(pred)
        .map(|(y, y_hat)| {
            let err = per_vertex_error(y, y_hat)?;
            let mut worst = 0.0f64;
            for &v in mask.indices() {
                let e = *err.get(v).ok_or_else(|| Error::OutOfRange {
                    index: v as i64,
                    limit: err.len(),
                    context: format!("mask `{}`", mask.name),
                })?;
                worst = worst.max(if squared { e * e } else { e });
            }
            Ok(worst)
        })
        .collect()
}

/// Mean over frames of the per-frame maximum masked vertex error.
pub fn regional_metric(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>], mask: &RegionMask, squared: bool) -> Result<f64> {
    let series = region_max_series(gt, pred, mask, squared)?;
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Mean per-vertex error over all frames (for colormaps).
pub fn mean_vertex_error(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<Vec<f64>> {
    if gt.is_empty() || gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth frames, {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    let mut acc = vec![0.0; gt[0].len()];
    for (y, y_hat) in gt.iter().zip(pred) {
        let e = per_vertex_error(y, y_hat)?;
        if e.len() != acc.len() {
            return Err(Error::Shape("vertex count changes between frames".into()));
        }
        acc.iter_mut().zip(e).for_each(|(a, e)| *a += e);
    }
    Ok(acc.into_iter().map(|a| a / gt.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub e_vl: f64,
    pub e_ve: Option<f64>,
    /// Per-region per-frame series, e.g. `("lips", e_i)`.
    pub series: Vec<(String, Vec<f64>)>,
}

/// Rounds half away from zero to 3 decimals.
pub fn format_metric(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    format!("{:.3}", if r == 0.0 { 0.0 } else { r })
}

/// Sibling path `<stem>_series.csv` holding per-frame series.
pub fn series_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}_series.csv"))
}

/// Writes `method,dataset,E_vl,E_ve` (empty `E_ve` when absent) and the
/// per-frame series next to it.
pub fn emit_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::Invalid("report needs at least one row".into()));
    }
    let mut s = String::from("method,dataset,E_vl,E_ve\n");
    let mut series = String::from("method,region,frame,error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.method,
            r.dataset,
            format_metric(r.e_vl),
            r.e_ve.map(format_metric).unwrap_or_default()
        );
        for (region, values) in &r.series {
            for (i, v) in values.iter().enumerate() {
                let _ = writeln!(series, "{},{region},{i},{v:.6}", r.method);
            }
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))?;
    let sp = series_path(path);
    fs::write(&sp, series).map_err(|e| Error::io(&sp, e))
}

/// One parsed report line: `(method, dataset, E_vl, E_ve)`.
pub type ReportLine = (String, String, f64, Option<f64>);

pub fn parse_report(text: &str, path: &Path) -> Result<Vec<ReportLine>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "method,dataset,E_vl,E_ve")) => {}
        _ => return Err(Error::parse(path, 1, "expected header `method,dataset,E_vl,E_ve`")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::parse(path, i + 1, format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(path, i + 1, format!("bad number `{s}`: {e}")))
            };
            let e_ve = if f[3].is_empty() { None } else { Some(num(f[3])?) };
            Ok((f[0].to_string(), f[1].to_string(), num(f[2])?, e_ve))
        })
        .collect()
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportLine>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let e = per_vertex_error(&[[0.0; 3], [1.0, 1.0, 1.0]], &[[3.0, 4.0, 0.0], [1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(e, vec![5.0, 0.0]);
        assert!(per_vertex_error(&[[0.0; 3]], &[]).is_err());
    }

    #[test]
    fn max_then_mean() {
        let mask = RegionMask::new("m", [0, 1], 3).unwrap();
        let gt = vec![vec![[0.0; 3]; 3], vec![[0.0; 3]; 3]];
        let pred = vec![
            vec![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 9.0]],
            vec![[4.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 9.0]],
        ];
        assert_eq!(regional_metric(&gt, &pred, &mask, false).unwrap(), 3.0);
        assert_eq!(regional_metric(&gt, &pred, &mask, true).unwrap(), 10.0);
        assert_eq!(regional_metric(&gt, &gt, &mask, false).unwrap(), 0.0);
    }

    #[test]
    fn half_away_from_zero() {
        assert_eq!(format_metric(0.0), "0.000");
        assert_eq!(format_metric(1.0005), "1.001");
        assert_eq!(format_metric(2.0625), "2.063");
        assert_eq!(format_metric(-0.0004), "0.000");
    }
}
