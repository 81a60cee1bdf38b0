#![allow(dead_code)]

//! Finite-difference oracle and random scenes shared by the gradient test suites.

use nalgebra::{Rotation3, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sparse_splat::geometry::{CameraIntrinsics, CameraPose};
use sparse_splat::renderer::{Gaussian, GaussianCloud, SH_PER_GAUSSIAN};

/// Outcome counts of a batch of gradient probes.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProbeTally {
    pub passed: usize,
    /// Probes where the finite difference itself is unreliable because the
    /// function is not smooth within ±h (kernel cut-off crossings, kinks).
    pub non_smooth: usize,
    pub failed: usize,
}

impl ProbeTally {
    pub fn merge(&mut self, other: ProbeTally) {
        self.passed += other.passed;
        self.non_smooth += other.non_smooth;
        self.failed += other.failed;
    }
}

pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_TOL || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

pub fn central_difference(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Compares `analytic` against the central difference of `f` (a function of
/// the perturbation) at step `h`. A mismatch only counts as a failure when
/// the difference quotient is stable under step refinement; otherwise the
/// probe straddles a discontinuity and is tallied as non-smooth.
pub fn probe(analytic: f64, h: f64, f: &mut dyn FnMut(f64) -> f64, tally: &mut ProbeTally, label: &str) {
    let fd = central_difference(f, h);
    if close(analytic, fd) {
        tally.passed += 1;
        return;
    }
    let fd_fine = central_difference(f, h * 0.1);
    let fd_finer = central_difference(f, h * 0.01);
    let smooth = close(fd_fine, fd_finer) && close(fd, fd_fine);
    if smooth {
        tally.failed += 1;
        eprintln!("gradient mismatch at {label}: analytic {analytic:e}, finite difference {fd:e}");
    } else {
        tally.non_smooth += 1;
    }
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    GaussianCloud::from_gaussians((0..n).map(|_| {
        let mut sh = [0.0; SH_PER_GAUSSIAN];
        sh.iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
        let q = Vector4::new(
            rng.random_range(0.3..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        Gaussian {
            position: Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(2.0..3.5)),
            rotation: q.normalize(),
            log_scale: Vector3::new(
                rng.random_range(0.04f64..0.25).ln(),
                rng.random_range(0.04f64..0.25).ln(),
                rng.random_range(0.04f64..0.25).ln(),
            ),
            opacity_logit: rng.random_range(-1.5..1.5),
            sh,
        }
    }))
}

pub fn random_camera(rng: &mut ChaCha8Rng) -> (CameraIntrinsics, CameraPose) {
    let k = CameraIntrinsics::new(24.0, 26.0, 11.5, 12.0, 24, 24).unwrap();
    let r = Rotation3::from_euler_angles(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.3..0.3));
    let pose = CameraPose::new(r.into_inner(), Vector3::new(rng.random_range(-0.1..0.1), 0.05, 0.1)).unwrap();
    (k, pose)
}
