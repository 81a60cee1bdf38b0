//! Depth-based warping between views: reconstruct a reference view from a
//! source view, and round-trip reference pixels through the source depth.

use nalgebra::Vector3;

use crate::geometry::{project, sample_into, CameraIntrinsics, CameraPose, Pixel, Stencil};
use crate::raster::{Mask, Raster};

/// Where one reference pixel lands in the source view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelWarp {
    pub pixel: Pixel,
    /// Depth of the warped point in the source camera.
    pub depth: f64,
    pub valid: bool,
    /// `∂pixel/∂D_ref` as `(∂u/∂D, ∂v/∂D)`.
    pub d_pixel: [f64; 2],
}

impl PixelWarp {
    const INVALID: PixelWarp = PixelWarp {
        pixel: Pixel { u: f64::NAN, v: f64::NAN },
        depth: 0.0,
        valid: false,
        d_pixel: [0.0; 2],
    };
}

fn warp_one(k: &CameraIntrinsics, rel: &CameraPose, p: Pixel, depth: f64) -> PixelWarp {
    if !(depth > 0.0) || !depth.is_finite() {
        return PixelWarp::INVALID;
    }
    let ray = k.ray(p);
    let x = rel.transform_point(&(ray * depth));
    let proj = project(k, &x);
    if !proj.valid {
        return PixelWarp::INVALID;
    }
    let dx: Vector3<f64> = rel.rotation() * ray;
    let d = k.projection_jacobian(&x) * dx;
    PixelWarp {
        pixel: proj.pixel,
        depth: proj.depth,
        valid: true,
        d_pixel: [d.x, d.y],
    }
}

/// Warps every reference pixel with its depth into the source camera
/// (`rel` maps reference-camera to source-camera coordinates). Row-major.
pub fn forward_warp_pixels(d_ref: &Raster, k: &CameraIntrinsics, rel: &CameraPose) -> Vec<PixelWarp> {
    let w = d_ref.width();
    (0..d_ref.pixel_count())
        .map(|i| warp_one(k, rel, Pixel::new((i % w) as f64, (i / w) as f64), d_ref.data()[i]))
        .collect()
}

/// A source map resampled onto the reference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedMap {
    /// Zero wherever `mask` is false.
    pub values: Raster,
    pub mask: Mask,
    /// `∂values/∂D_ref`, per pixel and channel; zero outside the mask.
    pub d_depth: Raster,
}

impl WarpedMap {
    /// Chains an upstream gradient on `values` into a gradient on the
    /// reference depth. Masked-out pixels contribute nothing.
    pub fn pullback(&self, d_values: &Raster) -> Raster {
        let c = self.values.channels();
        let mut out = Raster::zeros(self.values.width(), self.values.height(), 1);
        for (i, g) in out.data_mut().iter_mut().enumerate() {
            if self.mask.data()[i] {
                let up = d_values.at(i);
                let dd = self.d_depth.at(i);
                *g = (0..c).map(|ch| up[ch] * dd[ch]).sum();
            }
        }
        out
    }
}

/// Reconstructs the reference view by bilinearly sampling `source` at the
/// positions the reference depth warps to.
pub fn inverse_warp(source: &Raster, d_ref: &Raster, k: &CameraIntrinsics, rel: &CameraPose) -> WarpedMap {
    let warps = forward_warp_pixels(d_ref, k, rel);
    inverse_warp_with(source, &warps, d_ref.width(), d_ref.height())
}

/// [`inverse_warp`] reusing precomputed pixel warps (e.g. to warp colour and
/// features with the same geometry).
pub fn inverse_warp_with(source: &Raster, warps: &[PixelWarp], width: usize, height: usize) -> WarpedMap {
    let c = source.channels();
    let mut values = Raster::zeros(width, height, c);
    let mut d_depth = Raster::zeros(width, height, c);
    let mut mask = Mask::new(width, height, false);
    let mut jac = vec![[0.0; 2]; c];
    for (i, w) in warps.iter().enumerate() {
        if !w.valid {
            continue;
        }
        let value = values.at_mut(i);
        if !sample_into(source, w.pixel, value, &mut jac) {
            continue;
        }
        mask.data_mut()[i] = true;
        let dd = d_depth.at_mut(i);
        for ch in 0..c {
            dd[ch] = jac[ch][0] * w.d_pixel[0] + jac[ch][1] * w.d_pixel[1];
        }
    }
    WarpedMap { values, mask, d_depth }
}

/// Reference pixels round-tripped through the source depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection {
    /// `p″`, NaN where invalid.
    pub pixels: Vec<Pixel>,
    /// Reprojected depth `D̃` in the reference camera; zero where invalid.
    pub depth: Raster,
    pub valid: Mask,
}

/// Samples a depth map at a continuous position by interpolating inverse
/// depth, which is exact for planar surfaces. Every stencil neighbour with
/// non-negligible weight must carry positive depth.
pub fn sample_depth(depth: &Raster, p: Pixel) -> Option<f64> {
    let s = Stencil::locate(depth.width(), depth.height(), p)?;
    let (mut inv, mut total, mut used, mut last) = (0.0, 0.0, 0, 0.0);
    for (wt, (x, y)) in s.weights().into_iter().zip(s.offsets()) {
        if wt <= 1e-9 {
            continue;
        }
        let d = depth.get(x, y, 0);
        if !(d > 0.0) {
            return None;
        }
        inv += wt / d;
        total += wt;
        used += 1;
        last = d;
    }
    // a single contributing texel is returned as is, so integer positions are exact
    match used {
        0 => None,
        1 => Some(last),
        _ => Some(total / inv),
    }
}

/// Forward-warps each reference pixel into the source, reads the source depth
/// there, and projects that source point back into the reference camera.
pub fn backward_reproject(d_ref: &Raster, d_src: &Raster, k: &CameraIntrinsics, rel: &CameraPose) -> Reprojection {
    let (w, h) = (d_ref.width(), d_ref.height());
    let back = rel.inverse();
    let mut pixels = vec![Pixel::new(f64::NAN, f64::NAN); w * h];
    let mut depth = Raster::zeros(w, h, 1);
    let mut valid = Mask::new(w, h, false);
    for (i, fw) in forward_warp_pixels(d_ref, k, rel).into_iter().enumerate() {
        if !fw.valid {
            continue;
        }
        let Some(ds) = sample_depth(d_src, fw.pixel) else {
            continue;
        };
        let x = back.transform_point(&(k.ray(fw.pixel) * ds));
        let proj = project(k, &x);
        if !proj.valid {
            continue;
        }
        pixels[i] = proj.pixel;
        depth.data_mut()[i] = proj.depth;
        valid.data_mut()[i] = true;
    }
    Reprojection { pixels, depth, valid }
}

/// Result of a masked mean absolute difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedL1 {
    pub value: f64,
    /// True when the mask selected no pixel (the value is then 0).
    pub empty: bool,
    pub count: usize,
}

/// Mean over valid pixels of the channel-mean absolute difference.
pub fn masked_l1(a: &Raster, b: &Raster, mask: &Mask) -> MaskedL1 {
    masked_l1_impl(a, b, mask, None)
}

/// [`masked_l1`] together with its gradient w.r.t. `a`.
pub fn masked_l1_with_grad(a: &Raster, b: &Raster, mask: &Mask) -> (MaskedL1, Raster) {
    let mut grad = Raster::zeros(a.width(), a.height(), a.channels());
    let l = masked_l1_impl(a, b, mask, Some(&mut grad));
    (l, grad)
}

fn masked_l1_impl(a: &Raster, b: &Raster, mask: &Mask, mut grad: Option<&mut Raster>) -> MaskedL1 {
    assert!(a.same_shape(b), "masked_l1 shape mismatch");
    let c = a.channels();
    let count = mask.count();
    if count == 0 {
        return MaskedL1 {
            value: 0.0,
            empty: true,
            count,
        };
    }
    let norm = 1.0 / (count * c) as f64;
    let mut sum = 0.0;
    for i in 0..a.pixel_count() {
        if !mask.data()[i] {
            continue;
        }
        let (pa, pb) = (a.at(i), b.at(i));
        for ch in 0..c {
            let d = pa[ch] - pb[ch];
            sum += d.abs();
            if let Some(g) = grad.as_deref_mut() {
                g.at_mut(i)[ch] = sign(d) * norm;
            }
        }
    }
    MaskedL1 {
        value: sum * norm,
        empty: false,
        count,
    }
}

/// Sign with `sign(0) = 0`, the subgradient used for all L1 terms.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
