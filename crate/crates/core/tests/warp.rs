mod common;

use common::{probe, ProbeTally};
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_splat::geometry::{relative_transform, CameraIntrinsics, CameraPose};
use sparse_splat::harness::{covisibility_mask, generate, GenOptions, Preset};
use sparse_splat::raster::{Mask, Raster};
use sparse_splat::warp::{backward_reproject, forward_warp_pixels, inverse_warp, masked_l1, masked_l1_with_grad};

fn k16() -> CameraIntrinsics {
    CameraIntrinsics::new(18.0, 17.0, 7.5, 8.0, 16, 16).unwrap()
}

fn smooth_texture(w: usize, h: usize, c: usize) -> Raster {
    Raster::from_fn(w, h, c, |x, y, ch| {
        let (x, y, ch) = (x as f64, y as f64, ch as f64);
        0.5 + 0.3 * (0.7 * x + 0.3 * ch).sin() * (0.5 * y - 0.2 * ch).cos() + 0.1 * (0.23 * x * y / 4.0).sin()
    })
}

fn small_motion(rng: &mut ChaCha8Rng) -> CameraPose {
    let r = Rotation3::from_euler_angles(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    CameraPose::new(r.into_inner(), Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1))).unwrap()
}

#[test]
fn warped_values_differentiate_through_reference_depth() {
    let k = k16();
    let source = smooth_texture(16, 16, 3);
    let mut tally = ProbeTally::default();
    for seed in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rel = small_motion(&mut rng);
        let depth = Raster::from_fn(16, 16, 1, |x, y, _| 2.5 + 0.03 * x as f64 - 0.02 * y as f64 + rng.random_range(-0.05..0.05));
        let weights = Raster::from_fn(16, 16, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let base = inverse_warp(&source, &depth, &k, &rel);
        let grad = base.pullback(&weights);
        let functional = |d: &Raster| {
            let wm = inverse_warp(&source, d, &k, &rel);
            wm.values.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        for _ in 0..30 {
            let i = rng.random_range(0..256);
            if !base.mask.data()[i] {
                continue;
            }
            let mut f = |h: f64| {
                let mut d = depth.clone();
                d.data_mut()[i] += h;
                functional(&d)
            };
            probe(grad.data()[i], 1e-5, &mut f, &mut tally, &format!("seed {seed} pixel {i}"));
        }
    }
    assert_eq!(tally.failed, 0, "{tally:?}");
    assert!(tally.passed >= 100, "{tally:?}");
}

#[test]
fn masked_l1_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Raster::from_fn(8, 8, 3, |_, _, _| rng.random_range(0.0..1.0));
    let b = Raster::from_fn(8, 8, 3, |_, _, _| rng.random_range(0.0..1.0));
    let mask = Mask::from_fn(8, 8, |x, y| (x + y) % 3 != 0);
    let (loss, grad) = masked_l1_with_grad(&a, &b, &mask);
    assert_eq!(loss.value, masked_l1(&a, &b, &mask).value);
    let mut tally = ProbeTally::default();
    for i in 0..a.data().len() {
        let mut f = |h: f64| {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            masked_l1(&p, &b, &mask).value
        };
        probe(grad.data()[i], 1e-7, &mut f, &mut tally, &format!("element {i}"));
    }
    assert_eq!(tally.failed, 0);
    assert!(tally.passed >= 100, "{tally:?}");
}

#[test]
fn identity_warp_reproduces_source() {
    let k = k16();
    let source = smooth_texture(16, 16, 2);
    let depth = Raster::filled(16, 16, 1, 3.0);
    let wm = inverse_warp(&source, &depth, &k, &CameraPose::identity());
    assert!(wm.mask.data().iter().all(|&v| v));
    for (a, b) in wm.values.data().iter().zip(source.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    let r = backward_reproject(&depth, &depth, &k, &CameraPose::identity());
    for (i, p) in r.pixels.iter().enumerate() {
        assert!(r.valid.data()[i]);
        assert!((p.u - (i % 16) as f64).abs() < 1e-9 && (p.v - (i / 16) as f64).abs() < 1e-9);
        assert!((r.depth.data()[i] - 3.0).abs() < 1e-12);
    }
}

#[test]
fn invalid_depth_is_masked() {
    let k = k16();
    let mut depth = Raster::filled(16, 16, 1, 3.0);
    depth.set(4, 4, 0, 0.0);
    depth.set(5, 4, 0, -1.0);
    depth.set(6, 4, 0, f64::NAN);
    let warps = forward_warp_pixels(&depth, &k, &CameraPose::identity());
    assert!(!warps[4 * 16 + 4].valid && !warps[4 * 16 + 5].valid && !warps[4 * 16 + 6].valid);
    let wm = inverse_warp(&smooth_texture(16, 16, 1), &depth, &k, &CameraPose::identity());
    assert!(!wm.mask.get(4, 4));
    assert_eq!(wm.values.get(4, 4, 0), 0.0);
}

/// Cycle error on ground-truth depth stays at rounding level wherever the
/// ray tracer says the pixel is co-visible.
#[test]
fn ground_truth_cycle_is_exact_on_covisible_pixels() {
    for preset in [Preset::Plane3, Preset::Occluder] {
        let (ds, scene) = generate(preset, 3, 0, &GenOptions::default()).unwrap();
        let views = ds.train_views();
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let (vr, vs) = (views[a], views[b]);
            let rel = relative_transform(&vr.pose, &vs.pose);
            let exact = |v: &sparse_splat::dataset::View| sparse_splat::harness::raytrace_view(&scene, &v.k, &v.pose, None).depth;
            let (dr, dsrc) = (exact(vr), exact(vs));
            let covis = covisibility_mask(&scene, &vr.k, &vr.pose, &vs.pose);
            let r = backward_reproject(&dr, &dsrc, &vr.k, &rel);
            let mut checked = 0;
            for i in 0..dr.pixel_count() {
                if covis.data()[i] && r.valid.data()[i] {
                    let p = r.pixels[i];
                    let err = ((p.u - (i % 64) as f64).powi(2) + (p.v - (i / 64) as f64).powi(2)).sqrt();
                    assert!(err <= 1e-4, "{preset} {a}->{b} pixel {i}: {err}");
                    checked += 1;
                }
            }
            assert!(checked > 1000, "{preset}: only {checked} pixels checked");
        }
    }
}
