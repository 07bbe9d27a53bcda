use hava_core::mesh::Vec3;
use hava_core::RotationVector;
use hava_model::loss::{pose_loss, reconstruction_loss, stage1_loss, stage1_objective, velocity_loss};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<Vec3>> {
    (0..t)
        .map(|_| (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect())
        .collect()
}

#[test]
fn hand_examples() {
    assert_eq!(reconstruction_loss(&[[0.0; 3]], &[[1.0, -2.0, 3.0]]).unwrap(), 6.0);
    assert_eq!(
        velocity_loss(&[[0.0; 3]], &[[1.0, 0.0, 0.0]], &[[0.0; 3]], &[[3.0, 0.0, 0.0]]).unwrap(),
        2.0
    );
    assert_eq!(stage1_objective(2.0, 0.3, 10.0), 5.0);
    let p = [RotationVector::ZERO];
    let q = [RotationVector([0.3, 0.4, 0.0])];
    assert!((pose_loss(&p, &q).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(pose_loss(&p, &p).unwrap(), 0.0);
    assert!(reconstruction_loss(&[[0.0; 3]], &[]).is_err());
    assert!(pose_loss(&p, &[]).is_err());
}

#[test]
fn direct_summation_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = frames(&mut rng, 6, 50);
    let y_hat = frames(&mut rng, 6, 50);
    let mut r = 0.0;
    for v in 0..50 {
        for k in 0..3 {
            r += (y[0][v][k] - y_hat[0][v][k]).abs();
        }
    }
    assert!((reconstruction_loss(&y[0], &y_hat[0]).unwrap() - r).abs() < 1e-12);

    let mut total = 0.0;
    for i in 0..6 {
        let mut lr = 0.0;
        let mut lv = 0.0;
        for v in 0..50 {
            for k in 0..3 {
                lr += (y[i][v][k] - y_hat[i][v][k]).abs();
                if i > 0 {
                    let dy = y[i][v][k] - y[i - 1][v][k];
                    let dh = y_hat[i][v][k] - y_hat[i - 1][v][k];
                    lv += (dy - dh).abs();
                }
            }
        }
        if i > 0 {
            let got = velocity_loss(&y[i - 1], &y[i], &y_hat[i - 1], &y_hat[i]).unwrap();
            assert!((got - lv).abs() < 1e-12);
        }
        total += lr + 10.0 * lv;
    }
    assert!((stage1_loss(&y, &y_hat, 10.0).unwrap() - total / 6.0).abs() < 1e-12);

    let p: Vec<RotationVector> = (0..40).map(|_| RotationVector(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))).collect();
    let q: Vec<RotationVector> = (0..40).map(|_| RotationVector(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))).collect();
    let oracle: f64 = p
        .iter()
        .zip(&q)
        .map(|(a, b)| (a.0[0] - b.0[0]).powi(2) + (a.0[1] - b.0[1]).powi(2) + (a.0[2] - b.0[2]).powi(2))
        .sum::<f64>()
        / 40.0;
    assert!((pose_loss(&p, &q).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn degenerate_weights_and_perfect_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = frames(&mut rng, 4, 10);
    let y_hat = frames(&mut rng, 4, 10);
    let mean_r: f64 = (0..4).map(|i| reconstruction_loss(&y[i], &y_hat[i]).unwrap()).sum::<f64>() / 4.0;
    assert!((stage1_loss(&y, &y_hat, 0.0).unwrap() - mean_r).abs() < 1e-12);
    assert_eq!(stage1_loss(&y, &y, 10.0).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn constant_offset_has_no_velocity_loss(seed in 0u64..500, c in prop::array::uniform3(-2.0f64..2.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = frames(&mut rng, 5, 8);
        let shifted: Vec<Vec<Vec3>> = y.iter().map(|f| f.iter().map(|p| std::array::from_fn(|k| p[k] + c[k])).collect()).collect();
        for i in 1..5 {
            prop_assert!(velocity_loss(&y[i - 1], &y[i], &shifted[i - 1], &shifted[i]).unwrap() < 1e-12);
        }
        prop_assert!(reconstruction_loss(&y[0], &shifted[0]).unwrap() >= 0.0);
    }

    #[test]
    fn monotone_in_lambda(seed in 0u64..500, a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = frames(&mut rng, 4, 6);
        let y_hat = frames(&mut rng, 4, 6);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(stage1_loss(&y, &y_hat, lo).unwrap() <= stage1_loss(&y, &y_hat, hi).unwrap());
    }

    #[test]
    fn pose_loss_symmetric(vals in prop::collection::vec(-1.0f64..1.0, 6..60)) {
        let t = vals.len() / 6;
        let p: Vec<RotationVector> = (0..t).map(|i| RotationVector([vals[6*i], vals[6*i+1], vals[6*i+2]])).collect();
        let q: Vec<RotationVector> = (0..t).map(|i| RotationVector([vals[6*i+3], vals[6*i+4], vals[6*i+5]])).collect();
        prop_assert_eq!(pose_loss(&p, &q).unwrap(), pose_loss(&q, &p).unwrap());
    }

    #[test]
    fn reconstruction_zero_iff_equal(seed in 0u64..500, v in 0usize..8, k in 0usize..3, d in 1e-9f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = frames(&mut rng, 1, 8).remove(0);
        prop_assert_eq!(reconstruction_loss(&y, &y).unwrap(), 0.0);
        let mut z = y.clone();
        z[v][k] += d;
        prop_assert!(reconstruction_loss(&y, &z).unwrap() > 0.0);
    }
}
