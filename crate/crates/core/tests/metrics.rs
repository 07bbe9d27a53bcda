use hava_core::eval::{emit_report, per_vertex_error, read_report, regional_metric, series_path, ReportRow};
use hava_core::mesh::{RegionMask, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frames(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<Vec3>> {
    (0..t)
        .map(|_| (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0))).collect())
        .collect()
}

#[test]
fn per_vertex_error_matches_row_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = random_frames(&mut rng, 1, 500).remove(0);
    let y_hat = random_frames(&mut rng, 1, 500).remove(0);
    let e = per_vertex_error(&y, &y_hat).unwrap();
    for ((a, b), e) in y.iter().zip(&y_hat).zip(&e) {
        let oracle = (a[0] - b[0]).hypot(a[1] - b[1]).hypot(a[2] - b[2]);
        assert!((e - oracle).abs() < 1e-12);
    }
    assert!(per_vertex_error(&y, &y).unwrap().iter().all(|&e| e == 0.0));
}

#[test]
fn homogeneous_in_prediction_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt = random_frames(&mut rng, 6, 40);
    let pred = random_frames(&mut rng, 6, 40);
    let mask = RegionMask::new("m", (0..40).step_by(3), 40).unwrap();
    let base = regional_metric(&gt, &pred, &mask, false).unwrap();
    for s in [0.5, 2.0, 7.25] {
        let scaled: Vec<Vec<Vec3>> = gt
            .iter()
            .zip(&pred)
            .map(|(y, p)| {
                y.iter()
                    .zip(p)
                    .map(|(a, b)| std::array::from_fn(|k| a[k] + s * (b[k] - a[k])))
                    .collect()
            })
            .collect();
        let m = regional_metric(&gt, &scaled, &mask, false).unwrap();
        assert!((m - s * base).abs() <= 1e-12 * (1.0 + s * base));
    }
}

proptest! {
    #[test]
    fn mask_monotone_and_nonnegative(seed in 0u64..1000, extra in prop::collection::vec(0usize..30, 1..10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_frames(&mut rng, 3, 30);
        let pred = random_frames(&mut rng, 3, 30);
        let small = RegionMask::new("a", [extra[0]], 30).unwrap();
        let big = RegionMask::new("b", extra.iter().copied().chain([5, 6]), 30).unwrap();
        let a = regional_metric(&gt, &pred, &small, false).unwrap();
        let b = regional_metric(&gt, &pred, &big, false).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a);
        prop_assert_eq!(regional_metric(&gt, &gt, &big, false).unwrap(), 0.0);
    }
}

#[test]
fn report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    emit_report(
        &[ReportRow {
            method: "ours".into(),
            dataset: "synth".into(),
            e_vl: 0.0,
            e_ve: Some(0.0),
            series: vec![],
        }],
        &path,
    )
    .unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "method,dataset,E_vl,E_ve\nours,synth,0.000,0.000\n");

    let rows = vec![
        ReportRow {
            method: "ours".into(),
            dataset: "synth".into(),
            e_vl: 0.123_456,
            e_ve: Some(4.5678),
            series: vec![("lips".into(), vec![0.1, 0.2]), ("eyes".into(), vec![1.0, 2.0])],
        },
        ReportRow {
            method: "baseline".into(),
            dataset: "synth".into(),
            e_vl: 12.0005,
            e_ve: None,
            series: vec![("lips".into(), vec![3.0])],
        },
    ];
    emit_report(&rows, &path).unwrap();
    let back = read_report(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (r, b) in rows.iter().zip(&back) {
        assert_eq!(r.method, b.0);
        assert!((r.e_vl - b.2).abs() <= 5e-4 + 1e-12);
        match (r.e_ve, b.3) {
            (Some(x), Some(y)) => assert!((x - y).abs() <= 5e-4 + 1e-12),
            (None, None) => {}
            other => panic!("{other:?}"),
        }
    }
    let series = std::fs::read_to_string(series_path(&path)).unwrap();
    assert_eq!(series.lines().count(), 1 + 2 + 2 + 1);
    assert!(series.contains("ours,eyes,1,2.000000"));
}
