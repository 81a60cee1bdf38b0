//! Forward and backward EWA splatting on the CPU.
//!
//! Splats are composited in camera-depth order by sweeping each splat's
//! screen-space bounding box over per-pixel accumulators, so the forward pass
//! needs no per-pixel lists. The backward pass sweeps the same splats in
//! reverse order, recovering each transmittance by division.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::cloud::{eval_sh, eval_sh_backward, quat_to_matrix, quat_to_matrix_backward, CloudGradients, GaussianCloud};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, Z_NEAR};
use crate::raster::Raster;

/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Upper bound on a single splat's blending weight.
pub const MAX_BLEND_WEIGHT: f64 = 0.999;
/// Kernel support in squared Mahalanobis distance (3σ).
pub const KERNEL_CUTOFF_SQ: f64 = 9.0;
/// 2D covariances with smaller determinant are skipped.
pub const MIN_COV_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Added to the diagonal of every screen-space covariance (pixels²).
    pub dilation: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { dilation: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderStats {
    pub rendered: usize,
    /// Behind the near plane or entirely off screen.
    pub culled: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Raster,
    pub depth: Raster,
    pub alpha: Raster,
    pub stats: RenderStats,
}

/// Upstream gradients `∂L/∂rgb`, `∂L/∂depth`, `∂L/∂alpha`; absent terms are zero.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub rgb: Option<Raster>,
    pub depth: Option<Raster>,
    pub alpha: Option<Raster>,
}

impl Upstream {
    pub fn rgb(rgb: Raster) -> Self {
        Self {
            rgb: Some(rgb),
            ..Self::default()
        }
    }

    pub fn depth(depth: Raster) -> Self {
        Self {
            depth: Some(depth),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    mean: [f64; 2],
    /// Inverse screen covariance `(a, b, c)` = [[a, b], [b, c]].
    conic: [f64; 3],
    cov: Matrix2<f64>,
    cam: Vector3<f64>,
    jac: Matrix2x3<f64>,
    world_rot: Matrix3<f64>,
    opacity: f64,
    color: [f64; 3],
    dir: Vector3<f64>,
    dist: f64,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Splat {
    #[inline]
    fn power(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 - self.mean[0];
        let dy = y as f64 - self.mean[1];
        let [a, b, c] = self.conic;
        a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    }

    /// Columns of row `y` inside the kernel cutoff ellipse, clipped to the bounding box.
    #[inline]
    fn row_span(&self, y: usize) -> Option<(usize, usize)> {
        let dy = y as f64 - self.mean[1];
        let [a, b, c] = self.conic;
        let disc = b * b * dy * dy - a * (c * dy * dy - KERNEL_CUTOFF_SQ);
        if disc < 0.0 {
            return None;
        }
        let root = disc.sqrt();
        // one pixel of slack absorbs rounding; the exact test runs per pixel
        let lo = (self.mean[0] + (-b * dy - root) / a - 1.0).ceil().max(self.x0 as f64);
        let hi = (self.mean[0] + (-b * dy + root) / a + 1.0).floor().min(self.x1 as f64);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct RenderTrace {
    k: CameraIntrinsics,
    pose: CameraPose,
    n_gaussians: usize,
    splats: Vec<Splat>,
    final_t: Vec<f64>,
    /// Pixels each splat contributed to, in compositing order; splat `r` owns
    /// `hits[hit_start[r]..hit_start[r + 1]]`.
    hits: Vec<Hit>,
    hit_start: Vec<usize>,
}

/// One splat-pixel contribution recorded by the forward pass.
#[derive(Debug, Clone, Copy)]
struct Hit {
    pixel: u32,
    x: u32,
    y: u32,
    /// Kernel value `exp(−½ d²)`.
    g: f64,
}

pub fn render(cloud: &GaussianCloud, k: &CameraIntrinsics, pose: &CameraPose) -> RenderOutput {
    render_with(cloud, k, pose, &RenderOptions::default())
}

pub fn render_with(cloud: &GaussianCloud, k: &CameraIntrinsics, pose: &CameraPose, options: &RenderOptions) -> RenderOutput {
    render_traced(cloud, k, pose, options).0
}

fn project_splats(
    cloud: &GaussianCloud,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    options: &RenderOptions,
    stats: &mut RenderStats,
) -> Vec<Splat> {
    let r_cam = *pose.rotation();
    let center = pose.center();
    let (w, h) = (k.width as f64, k.height as f64);
    let mut splats = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let mu = cloud.position(i);
        let cam = pose.transform_point(&mu);
        if !(cam.z > Z_NEAR) {
            stats.culled += 1;
            continue;
        }
        let jac = k.projection_jacobian(&cam);
        let world_rot = quat_to_matrix(&cloud.quaternion(i));
        let s = cloud.scale(i);
        let m = world_rot * Matrix3::from_diagonal(&s);
        let w_cov = r_cam * (m * m.transpose()) * r_cam.transpose();
        let mut cov = jac * w_cov * jac.transpose();
        cov[(0, 1)] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
        cov[(1, 0)] = cov[(0, 1)];
        cov[(0, 0)] += options.dilation;
        cov[(1, 1)] += options.dilation;
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
        if !(det >= MIN_COV_DET) || !det.is_finite() {
            stats.degenerate += 1;
            continue;
        }
        let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
        let u = k.fx * cam.x / cam.z + k.cx;
        let v = k.fy * cam.y / cam.z + k.cy;
        // the cutoff ellipse extends 3·sqrt(Σxx) horizontally and 3·sqrt(Σyy) vertically
        let (rx, ry) = ((KERNEL_CUTOFF_SQ * cov[(0, 0)]).sqrt(), (KERNEL_CUTOFF_SQ * cov[(1, 1)]).sqrt());
        let (lo_x, hi_x) = ((u - rx).ceil().max(0.0), (u + rx).floor().min(w - 1.0));
        let (lo_y, hi_y) = ((v - ry).ceil().max(0.0), (v + ry).floor().min(h - 1.0));
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            stats.culled += 1;
            continue;
        }
        let offset = mu - center;
        let dist = offset.norm();
        let dir = if dist > 0.0 { offset / dist } else { Vector3::z() };
        splats.push(Splat {
            index: i,
            mean: [u, v],
            conic,
            cov,
            cam,
            jac,
            world_rot,
            opacity: cloud.opacity(i),
            color: eval_sh(cloud.sh_coeffs(i), &dir),
            dir,
            dist,
            x0: lo_x as usize,
            x1: hi_x as usize,
            y0: lo_y as usize,
            y1: hi_y as usize,
        });
    }
    splats.sort_by(|a, b| a.cam.z.total_cmp(&b.cam.z).then(a.index.cmp(&b.index)));
    stats.rendered = splats.len();
    splats
}

/// Forward pass that also returns the state needed by [`backward`].
pub fn render_traced(
    cloud: &GaussianCloud,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    options: &RenderOptions,
) -> (RenderOutput, RenderTrace) {
    let (w, h) = (k.width, k.height);
    let mut stats = RenderStats::default();
    let splats = project_splats(cloud, k, pose, options, &mut stats);

    let n = w * h;
    let mut rgb = vec![0.0; 3 * n];
    let mut depth = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    let mut trans = vec![1.0f64; n];
    let mut done = vec![false; n];
    let mut hits = Vec::new();
    let mut hit_start = Vec::with_capacity(splats.len() + 1);

    for s in &splats {
        hit_start.push(hits.len());
        for y in s.y0..=s.y1 {
            let Some((x0, x1)) = s.row_span(y) else {
                continue;
            };
            let row = y * w;
            // Along a row the exponent is quadratic in x, so the kernel follows
            // g(x+1) = g(x)·r(x) with r(x+1) = r(x)·q; only three exp calls per row.
            let [a, b, _] = s.conic;
            let (dx0, dy) = (x0 as f64 - s.mean[0], y as f64 - s.mean[1]);
            let mut g = (-0.5 * s.power(x0, y)).exp();
            let mut ratio = (-0.5 * (a * (2.0 * dx0 + 1.0) + 2.0 * b * dy)).exp();
            let q = (-a).exp();
            for x in x0..=x1 {
                let p = row + x;
                let here = g;
                g *= ratio;
                ratio *= q;
                if done[p] || s.power(x, y) > KERNEL_CUTOFF_SQ {
                    continue;
                }
                let g = here;
                hits.push(Hit {
                    pixel: p as u32,
                    x: x as u32,
                    y: y as u32,
                    g,
                });
                let weight = (s.opacity * g).min(MAX_BLEND_WEIGHT);
                let t = trans[p];
                let contrib = weight * t;
                let px = &mut rgb[3 * p..3 * p + 3];
                px[0] += s.color[0] * contrib;
                px[1] += s.color[1] * contrib;
                px[2] += s.color[2] * contrib;
                depth[p] += s.cam.z * contrib;
                alpha[p] += contrib;
                let t_next = t * (1.0 - weight);
                trans[p] = t_next;
                done[p] = t_next < TRANSMITTANCE_CUTOFF;
            }
        }
    }
    hit_start.push(hits.len());

    let trace = RenderTrace {
        k: *k,
        pose: *pose,
        n_gaussians: cloud.len(),
        splats,
        final_t: trans,
        hits,
        hit_start,
    };
    (
        RenderOutput {
            rgb: Raster::from_vec(w, h, 3, rgb).expect("render size"),
            depth: Raster::from_vec(w, h, 1, depth).expect("render size"),
            alpha: Raster::from_vec(w, h, 1, alpha).expect("render size"),
            stats,
        },
        trace,
    )
}

impl RenderTrace {
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.k
    }

    pub fn pose(&self) -> &CameraPose {
        &self.pose
    }

    pub fn n_gaussians(&self) -> usize {
        self.n_gaussians
    }

    /// Final transmittance per pixel (`1 − alpha` up to rounding).
    pub fn final_transmittance(&self) -> &[f64] {
        &self.final_t
    }
}

fn check_upstream(r: &Option<Raster>, k: &CameraIntrinsics, channels: usize, what: &str) -> Result<()> {
    if let Some(r) = r {
        if r.width() != k.width || r.height() != k.height || r.channels() != channels {
            return Err(Error::Contract(format!(
                "upstream {what} gradient is {}x{}x{}, render is {}x{}x{}",
                r.width(),
                r.height(),
                r.channels(),
                k.width,
                k.height,
                channels
            )));
        }
    }
    Ok(())
}

/// Gradients of a scalar loss w.r.t. every cloud parameter, given the
/// upstream gradients of the images produced by the traced forward pass.
pub fn backward(cloud: &GaussianCloud, trace: &RenderTrace, upstream: &Upstream) -> Result<CloudGradients> {
    if cloud.len() != trace.n_gaussians {
        return Err(Error::Contract(format!(
            "cloud has {} gaussians but the trace was recorded with {}",
            cloud.len(),
            trace.n_gaussians
        )));
    }
    let k = &trace.k;
    check_upstream(&upstream.rgb, k, 3, "rgb")?;
    check_upstream(&upstream.depth, k, 1, "depth")?;
    check_upstream(&upstream.alpha, k, 1, "alpha")?;

    let mut grads = CloudGradients::zeros(cloud.len());
    if upstream.rgb.is_none() && upstream.depth.is_none() && upstream.alpha.is_none() {
        return Ok(grads);
    }
    let n = trace.final_t.len();
    let up_rgb: Vec<f64> = upstream.rgb.as_ref().map_or_else(|| vec![0.0; 3 * n], |r| r.data().to_vec());
    let up_depth: Vec<f64> = upstream.depth.as_ref().map_or_else(|| vec![0.0; n], |r| r.data().to_vec());
    let up_alpha: Vec<f64> = upstream.alpha.as_ref().map_or_else(|| vec![0.0; n], |r| r.data().to_vec());
    let mut trans = trace.final_t.clone();
    let mut suffix = vec![0.0f64; trans.len()];

    for (rank, s) in trace.splats.iter().enumerate().rev() {
        let mut d_color = [0.0; 3];
        let mut d_z = 0.0;
        let mut d_opacity = 0.0;
        let mut d_mean = [0.0; 2];
        let mut d_conic = [0.0; 3];
        for hit in &trace.hits[trace.hit_start[rank]..trace.hit_start[rank + 1]] {
            let p = hit.pixel as usize;
            let dx = hit.x as f64 - s.mean[0];
            let dy = hit.y as f64 - s.mean[1];
            let g = hit.g;
            let raw = s.opacity * g;
            let weight = raw.min(MAX_BLEND_WEIGHT);
            let t_before = trans[p] / (1.0 - weight);
            let g_rgb = &up_rgb[3 * p..3 * p + 3];
            let (g_depth, g_alpha) = (up_depth[p], up_alpha[p]);
            let shade = g_rgb[0] * s.color[0] + g_rgb[1] * s.color[1] + g_rgb[2] * s.color[2] + g_depth * s.cam.z + g_alpha;
            let d_weight = shade * t_before - suffix[p] / (1.0 - weight);
            let wt = weight * t_before;
            suffix[p] += shade * wt;
            trans[p] = t_before;
            for c in 0..3 {
                d_color[c] += g_rgb[c] * wt;
            }
            d_z += g_depth * wt;
            if raw < MAX_BLEND_WEIGHT {
                d_opacity += d_weight * g;
                let d_power = d_weight * s.opacity * g;
                // power = -½ (a dx² + 2b dx dy + c dy²), dx = x − u
                let [a, b, c] = s.conic;
                d_mean[0] += d_power * (a * dx + b * dy);
                d_mean[1] += d_power * (b * dx + c * dy);
                d_conic[0] += -0.5 * dx * dx * d_power;
                d_conic[1] += -dx * dy * d_power;
                d_conic[2] += -0.5 * dy * dy * d_power;
            }
        }
        splat_backward(cloud, trace, s, d_color, d_z, d_opacity, d_mean, d_conic, &mut grads);
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn splat_backward(
    cloud: &GaussianCloud,
    trace: &RenderTrace,
    s: &Splat,
    d_color: [f64; 3],
    d_z: f64,
    d_opacity: f64,
    d_mean: [f64; 2],
    d_conic: [f64; 3],
    grads: &mut CloudGradients,
) {
    let i = s.index;
    let k = &trace.k;
    let r_cam = trace.pose.rotation();

    let op = s.opacity;
    grads.opacity_logits[i] += d_opacity * op * (1.0 - op);
    grads.screen[i] += (d_mean[0] * d_mean[0] + d_mean[1] * d_mean[1]).sqrt();

    // colour → SH and view direction
    let sh = cloud.sh_coeffs(i);
    let d_sh = &mut grads.sh[i * sh.len()..(i + 1) * sh.len()];
    let d_dir = eval_sh_backward(sh, &s.dir, &d_color, d_sh);
    let mut d_mu = (d_dir - s.dir * s.dir.dot(&d_dir)) / s.dist;

    // conic → screen covariance
    let (a_, b_, c_) = (s.cov[(0, 0)], s.cov[(0, 1)], s.cov[(1, 1)]);
    let det = a_ * c_ - b_ * b_;
    let inv_det2 = 1.0 / (det * det);
    let [ga, gb, gc] = d_conic;
    let d_a = inv_det2 * (-c_ * c_ * ga + b_ * c_ * gb - b_ * b_ * gc);
    let d_b = inv_det2 * (2.0 * b_ * c_ * ga - (a_ * c_ + b_ * b_) * gb + 2.0 * a_ * b_ * gc);
    let d_c = inv_det2 * (-b_ * b_ * ga + a_ * b_ * gb - a_ * a_ * gc);
    let g2 = Matrix2::new(d_a, 0.5 * d_b, 0.5 * d_b, d_c);

    // Σ2 = J W Jᵀ, W = R_cam Σ R_camᵀ
    let sigma_world = {
        let m = s.world_rot * Matrix3::from_diagonal(&cloud.scale(i));
        m * m.transpose()
    };
    let w_cov = r_cam * sigma_world * r_cam.transpose();
    let d_w = s.jac.transpose() * g2 * s.jac;
    let d_jac = 2.0 * g2 * s.jac * w_cov;
    let d_sigma = r_cam.transpose() * d_w * r_cam;

    // Σ = M Mᵀ, M = R diag(s)
    let scale = cloud.scale(i);
    let m = s.world_rot * Matrix3::from_diagonal(&scale);
    let d_m = 2.0 * d_sigma * m;
    let mut d_rot = d_m;
    for col in 0..3 {
        let d_s: f64 = (0..3).map(|row| d_m[(row, col)] * s.world_rot[(row, col)]).sum();
        grads.log_scales[3 * i + col] += d_s * scale[col];
        for row in 0..3 {
            d_rot[(row, col)] = d_m[(row, col)] * scale[col];
        }
    }
    let d_q = quat_to_matrix_backward(&cloud.quaternion(i), &d_rot);
    for (g, d) in grads.rotations[4 * i..4 * i + 4].iter_mut().zip(d_q) {
        *g += d;
    }

    // camera-frame centre: projection, direct depth and the Jacobian's dependence on it
    let x = &s.cam;
    let iz = 1.0 / x.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_cam = s.jac.transpose() * nalgebra::Vector2::new(d_mean[0], d_mean[1]);
    d_cam.z += d_z;
    d_cam.x += d_jac[(0, 2)] * (-k.fx * iz2);
    d_cam.y += d_jac[(1, 2)] * (-k.fy * iz2);
    d_cam.z += d_jac[(0, 0)] * (-k.fx * iz2)
        + d_jac[(0, 2)] * (2.0 * k.fx * x.x * iz3)
        + d_jac[(1, 1)] * (-k.fy * iz2)
        + d_jac[(1, 2)] * (2.0 * k.fy * x.y * iz3);
    d_mu += r_cam.transpose() * d_cam;
    for (g, d) in grads.positions[3 * i..3 * i + 3].iter_mut().zip(d_mu.iter()) {
        *g += d;
    }
}

/// Convenience wrapper that re-runs the forward pass before back-propagating.
pub fn render_backward(
    cloud: &GaussianCloud,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    upstream: &Upstream,
) -> Result<CloudGradients> {
    let (_, trace) = render_traced(cloud, k, pose, &RenderOptions::default());
    backward(cloud, &trace, upstream)
}
