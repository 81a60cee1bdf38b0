//! Appearance supervision from unobserved viewpoints: a cycle-consistency
//! filter on rendered depth, virtual camera sampling, forward-splatted target
//! synthesis and the masked virtual-view loss.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, CameraPose, Pixel};
use crate::raster::{Mask, Raster};
use crate::warp::{backward_reproject, masked_l1_with_grad, MaskedL1};

/// Round-trip depth error against one source view.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthError {
    /// `|D_ref − D̃|`; 0 where invalid.
    pub error: Raster,
    pub valid: Mask,
}

pub fn depth_error(d_ref: &Raster, d_src: &Raster, k: &CameraIntrinsics, rel: &CameraPose) -> DepthError {
    let r = backward_reproject(d_ref, d_src, k, rel);
    let mut error = Raster::zeros(d_ref.width(), d_ref.height(), 1);
    for (i, e) in error.data_mut().iter_mut().enumerate() {
        if r.valid.data()[i] {
            *e = (d_ref.data()[i] - r.depth.data()[i]).abs();
        }
    }
    DepthError { error, valid: r.valid }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask {
    pub mask: Mask,
    /// Number of source views consistent at each pixel.
    pub counts: Vec<u8>,
    /// Absolute depth tolerance used.
    pub tau_d: f64,
}

/// Marks reference pixels whose depth agrees (error below
/// `τ_d = tau_factor · max D_ref`) with at least `m` source views. The maximum
/// runs over `support` pixels when given, else over all positive depths.
pub fn reliability_mask(errors: &[DepthError], d_ref: &Raster, support: Option<&Mask>, m: usize, tau_factor: f64) -> Result<ReliabilityMask> {
    if errors.is_empty() {
        return Err(Error::Contract("reliability filtering needs at least one source view".into()));
    }
    if m == 0 || m > errors.len() {
        return Err(Error::Contract(format!("m = {m} outside 1..={}", errors.len())));
    }
    let max_depth = d_ref
        .data()
        .iter()
        .enumerate()
        .filter(|&(i, d)| *d > 0.0 && support.is_none_or(|s| s.data()[i]))
        .map(|(_, d)| *d)
        .fold(0.0, f64::max);
    let tau_d = tau_factor * max_depth;
    let n = d_ref.pixel_count();
    let mut counts = vec![0u8; n];
    for e in errors {
        for (i, c) in counts.iter_mut().enumerate() {
            if e.valid.data()[i] && e.error.data()[i] < tau_d {
                *c += 1;
            }
        }
    }
    let mask = Mask::from_vec(d_ref.width(), d_ref.height(), counts.iter().map(|&c| c as usize >= m).collect())?;
    Ok(ReliabilityMask { mask, counts, tau_d })
}

/// Attempts per radius before the sampling radius is halved.
pub const POSE_ATTEMPTS: usize = 32;

/// Camera at a uniformly random point of the radius-`r` ball around a
/// uniformly chosen training camera, with that camera's orientation. The
/// `target` point (scene centre) must project inside the image.
pub fn sample_virtual_pose<R: Rng>(train: &[CameraPose], r: f64, target: &Vector3<f64>, k: &CameraIntrinsics, rng: &mut R) -> Result<CameraPose> {
    if train.is_empty() {
        return Err(Error::Contract("virtual pose sampling needs a training pose".into()));
    }
    let anchor = train[rng.random_range(0..train.len())];
    let mut radius = r.max(0.0);
    while radius > 1e-12 {
        for _ in 0..POSE_ATTEMPTS {
            let offset = loop {
                let o = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
                if o.norm_squared() <= 1.0 {
                    break o * radius;
                }
            };
            let pose = anchor.with_center(anchor.center() + offset);
            let proj = project(k, &pose.transform_point(target));
            if proj.valid && k.contains(proj.pixel) {
                return Ok(pose);
            }
        }
        radius *= 0.5;
    }
    Ok(anchor)
}

/// One training view feeding virtual-view synthesis.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisSource<'a> {
    pub k: &'a CameraIntrinsics,
    pub pose: &'a CameraPose,
    pub rgb: &'a Raster,
    pub depth: &'a Raster,
    /// Pixels allowed to splat (reliable and sufficiently opaque).
    pub mask: &'a Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualView {
    pub pose: CameraPose,
    /// Target colours; zero outside `mask`.
    pub image: Raster,
    pub mask: Mask,
    /// Depth of the winning splat; zero outside `mask`.
    pub zbuffer: Raster,
    /// Source view index of the winning splat, −1 where empty.
    pub source: Vec<i32>,
}

/// Depths closer than this count as a tie, resolved by lower view index.
pub const Z_TIE: f64 = 1e-6;

/// Forward-warps every masked source pixel into the virtual camera and keeps
/// the nearest splat per target pixel (nearest-pixel scatter).
pub fn synthesize_virtual_view(sources: &[SynthesisSource<'_>], pose: &CameraPose, k: &CameraIntrinsics) -> VirtualView {
    let (w, h) = (k.width, k.height);
    let mut image = Raster::zeros(w, h, 3);
    let mut zbuffer = Raster::zeros(w, h, 1);
    let mut source = vec![-1i32; w * h];
    for (j, s) in sources.iter().enumerate() {
        let rel = pose.compose(&s.pose.inverse());
        let sw = s.depth.width();
        for i in 0..s.depth.pixel_count() {
            let d = s.depth.data()[i];
            if !s.mask.data()[i] || !(d > 0.0) {
                continue;
            }
            let p = Pixel::new((i % sw) as f64, (i / sw) as f64);
            let proj = project(k, &rel.transform_point(&(s.k.ray(p) * d)));
            if !proj.valid {
                continue;
            }
            let (x, y) = (proj.pixel.u.round(), proj.pixel.v.round());
            if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                continue;
            }
            let t = y as usize * w + x as usize;
            if source[t] >= 0 && proj.depth >= zbuffer.data()[t] - Z_TIE {
                continue;
            }
            source[t] = j as i32;
            zbuffer.data_mut()[t] = proj.depth;
            image.at_mut(t).copy_from_slice(&s.rgb.at(i)[..3]);
        }
    }
    let mask = Mask::from_vec(w, h, source.iter().map(|&s| s >= 0).collect()).expect("mask size");
    VirtualView {
        pose: *pose,
        image,
        mask,
        zbuffer,
        source,
    }
}

/// Masked mean absolute difference between the synthesized target and the
/// render at the virtual pose, with its gradient on the render.
pub fn virtual_view_loss(target: &Raster, mask: &Mask, rendered: &Raster) -> (MaskedL1, Raster) {
    masked_l1_with_grad(rendered, target, mask)
}
