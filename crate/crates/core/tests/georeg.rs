mod common;

use common::{probe, ProbeTally};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_splat::geometry::{CameraIntrinsics, CameraPose};
use sparse_splat::georeg::{edge_aware_smoothness, extract_features, mpc_loss, topk_select, Metric, FEATURE_CHANNELS};
use sparse_splat::raster::{Mask, Raster};
use sparse_splat::warp::inverse_warp;

/// Exhaustive subset search: the size-`min(k, valid)` subset of valid views
/// with the least summed error, ties to the lexicographically smallest index set.
fn brute_force(errors: &[f64], valid: &[bool], k: usize) -> Vec<usize> {
    let n = errors.len();
    let usable = (0..n).filter(|&j| valid[j]).count();
    let size = k.min(usable);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != size {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|&j| bits & (1 << j) != 0).collect();
        if set.iter().any(|&j| !valid[j]) {
            continue;
        }
        let sum: f64 = set.iter().map(|&j| errors[j]).sum();
        let better = match &best {
            None => true,
            Some((s, b)) => sum < *s || (sum == *s && set < *b),
        };
        if better {
            best = Some((sum, set));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

fn one_pixel(errors: &[f64], valid: &[bool]) -> (Vec<Raster>, Vec<Mask>) {
    (
        errors.iter().map(|&e| Raster::filled(1, 1, 1, e)).collect(),
        valid.iter().map(|&v| Mask::new(1, 1, v)).collect(),
    )
}

proptest! {
    // errors on a 1/16 grid: sums are exact and ties are frequent
    #[test]
    fn topk_matches_exhaustive_search(
        grid in prop::collection::vec((0u8..9, any::<bool>()), 1..=5),
        k_seed in 0usize..100,
    ) {
        let errors: Vec<f64> = grid.iter().map(|(e, _)| *e as f64 / 16.0).collect();
        let valid: Vec<bool> = grid.iter().map(|(_, v)| *v).collect();
        let k = 1 + k_seed % errors.len();
        let (e, m) = one_pixel(&errors, &valid);
        let sel = topk_select(&e, &m, k).unwrap();
        let mut got = sel.indices(0).to_vec();
        got.sort_unstable();
        prop_assert_eq!(got, brute_force(&errors, &valid, k));
    }

    #[test]
    fn selected_errors_are_sorted_and_minimal(errors in prop::collection::vec(0.0f64..1.0, 2..=5)) {
        let valid = vec![true; errors.len()];
        let (e, m) = one_pixel(&errors, &valid);
        let sel = topk_select(&e, &m, errors.len() - 1).unwrap();
        let chosen = sel.errors(0);
        prop_assert!(chosen.windows(2).all(|w| w[0] <= w[1]));
        let worst = errors.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(chosen.iter().all(|&c| c <= worst));
        prop_assert_eq!(sel.count(0), errors.len() - 1);
    }
}

#[test]
fn topk_rejects_bad_arguments() {
    let (e, m) = one_pixel(&[0.1, 0.2], &[true, true]);
    assert!(topk_select(&e, &m, 0).is_err());
    assert!(topk_select(&e, &m, 3).is_err());
    assert!(topk_select(&[], &[], 1).is_err());
    assert!(topk_select(&e, &m[..1], 1).is_err());
}

#[test]
fn nan_errors_are_never_selected() {
    let (e, m) = one_pixel(&[f64::NAN, 0.3, 0.2], &[true; 3]);
    let sel = topk_select(&e, &m, 2).unwrap();
    assert_eq!(sel.indices(0), &[2, 1]);
}

fn k16() -> CameraIntrinsics {
    CameraIntrinsics::new(16.0, 16.0, 7.5, 7.5, 16, 16).unwrap()
}

fn texture(seed: f64, channels: usize) -> Raster {
    Raster::from_fn(16, 16, channels, |x, y, c| {
        let (x, y, c) = (x as f64, y as f64, c as f64);
        0.5 + 0.25 * (0.6 * x + seed + c).sin() + 0.2 * (0.45 * y - 0.3 * seed * c).cos()
    })
}

fn sources() -> Vec<CameraPose> {
    [(0.2, 0.0), (-0.15, 0.1), (0.05, -0.2)]
        .iter()
        .map(|&(x, y)| CameraPose::from_translation(Vector3::new(x, y, 0.0)))
        .collect()
}

fn mpc_value(depth: &Raster, reference: &Raster, maps: &[Raster], k: usize, metric: Metric) -> f64 {
    let warped: Vec<_> = maps.iter().zip(sources()).map(|(m, p)| inverse_warp(m, depth, &k16(), &p)).collect();
    mpc_loss(reference, &warped, None, k, metric).unwrap().value
}

#[test]
fn consistency_gradient_matches_differences() {
    let mut tally = ProbeTally::default();
    for (metric, channels) in [(Metric::Cosine, 4), (Metric::L1, 3)] {
        for k in [1, 2] {
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let depth = Raster::from_fn(16, 16, 1, |x, _, _| 2.0 + 0.02 * x as f64 + rng.random_range(0.0..0.1));
            let reference = texture(0.0, channels);
            let maps: Vec<Raster> = (1..=3).map(|s| texture(0.3 * s as f64, channels)).collect();
            let warped: Vec<_> = maps.iter().zip(sources()).map(|(m, p)| inverse_warp(m, &depth, &k16(), &p)).collect();
            let loss = mpc_loss(&reference, &warped, None, k, metric).unwrap();
            assert!((loss.value - mpc_value(&depth, &reference, &maps, k, metric)).abs() < 1e-15);
            for _ in 0..40 {
                let i = rng.random_range(0..256);
                let mut f = |h: f64| {
                    let mut d = depth.clone();
                    d.data_mut()[i] += h;
                    mpc_value(&d, &reference, &maps, k, metric)
                };
                probe(loss.d_depth.data()[i], 1e-6, &mut f, &mut tally, &format!("{metric:?} k={k} pixel {i}"));
            }
        }
    }
    assert_eq!(tally.failed, 0, "{tally:?}");
    assert!(tally.passed >= 100, "{tally:?}");
}

#[test]
fn consistency_loss_grows_with_k() {
    let depth = Raster::filled(16, 16, 1, 2.5);
    let reference = texture(0.0, 4);
    let maps: Vec<Raster> = (1..=3).map(|s| texture(0.5 * s as f64, 4)).collect();
    let values: Vec<f64> = (1..=3).map(|k| mpc_value(&depth, &reference, &maps, k, Metric::Cosine)).collect();
    assert!(values[0] <= values[1] && values[1] <= values[2], "{values:?}");
}

#[test]
fn consistent_views_give_zero_loss() {
    let depth = Raster::filled(16, 16, 1, 3.0);
    let reference = texture(0.0, 3);
    let warped = vec![inverse_warp(&reference, &depth, &k16(), &CameraPose::identity()); 2];
    let loss = mpc_loss(&reference, &warped, None, 1, Metric::L1).unwrap();
    assert!(loss.value.abs() < 1e-12);
    let empty = Mask::new(16, 16, false);
    let loss = mpc_loss(&reference, &warped, Some(&empty), 1, Metric::L1).unwrap();
    assert_eq!((loss.value, loss.pixels), (0.0, 0));
}

#[test]
fn smoothness_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tally = ProbeTally::default();
    for alpha in [0.0, 1.0, 10.0] {
        let depth = Raster::from_fn(16, 16, 1, |_, _, _| rng.random_range(1.0..3.0));
        let image = texture(1.0, 3);
        let mask = Mask::from_fn(16, 16, |x, y| (x * 7 + y * 3) % 11 != 0);
        let s = edge_aware_smoothness(&depth, &image, Some(&mask), alpha).unwrap();
        for _ in 0..50 {
            let i = rng.random_range(0..256);
            let mut f = |h: f64| {
                let mut d = depth.clone();
                d.data_mut()[i] += h;
                edge_aware_smoothness(&d, &image, Some(&mask), alpha).unwrap().value
            };
            probe(s.d_depth.data()[i], 1e-7, &mut f, &mut tally, &format!("alpha {alpha} pixel {i}"));
        }
    }
    assert_eq!(tally.failed, 0, "{tally:?}");
    assert!(tally.passed >= 100, "{tally:?}");
}

#[test]
fn smoothness_examples() {
    let image = Raster::filled(4, 4, 3, 0.5);
    let flat = Raster::filled(4, 4, 1, 2.0);
    assert_eq!(edge_aware_smoothness(&flat, &image, None, 1.0).unwrap().value, 0.0);
    // a unit step in x: 3 of 9 interior pixels see |∂x D| = 1
    let step = Raster::from_fn(4, 4, 1, |x, _, _| if x >= 2 { 3.0 } else { 2.0 });
    let s = edge_aware_smoothness(&step, &image, None, 1.0).unwrap();
    assert!((s.value - 3.0 / 9.0).abs() < 1e-15);
    // the same step on an image edge is attenuated by exp(−α·|∂x I|)
    let edge = Raster::from_fn(4, 4, 3, |x, _, _| if x >= 2 { 1.0 } else { 0.0 });
    let s = edge_aware_smoothness(&step, &edge, None, 1.0).unwrap();
    assert!((s.value - (-1.0f64).exp() / 3.0).abs() < 1e-15);
}

#[test]
fn features_ignore_brightness_offsets() {
    let img = texture(2.0, 3).map(|v| 0.8 * v);
    let shifted = img.map(|v| v + 0.1);
    let (a, b) = (extract_features(&img), extract_features(&shifted));
    assert_eq!(a.channels(), FEATURE_CHANNELS);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    for i in 0..a.pixel_count() {
        let n: f64 = a.at(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
