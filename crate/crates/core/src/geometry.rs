//! Pinhole cameras, rigid transforms and bilinear sampling.
//!
//! Pixel coordinates are continuous with the origin at the centre of pixel
//! `(0, 0)`: integer coordinates address pixel centres exactly.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Points at or closer than this (camera-frame z, scene units) do not project.
pub const Z_NEAR: f64 = 1e-4;

/// Sample positions this far outside the pixel grid (rounding noise from a
/// projection round trip) are snapped onto the border.
pub const BORDER_SLACK: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Camera(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Camera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Unit-depth ray through `p`: `K⁻¹ p`.
    #[inline]
    pub fn ray(&self, p: Pixel) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    /// Jacobian of the perspective projection w.r.t. the camera-frame point.
    #[inline]
    pub fn projection_jacobian(&self, x: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / x.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * x.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * x.y * iz2,
        )
    }

    #[inline]
    pub fn contains(&self, p: Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(Error::Camera(format!(
                "rotation is not orthonormal (|RᵀR − I|max = {err:e})"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::Camera("rotation has negative determinant".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Camera("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Camera at `center` with the given world-to-camera rotation.
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        Self::new(rotation, -(rotation * center))
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear towards decreasing image v.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Camera("look_at target equals eye".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Camera("look_at up is parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::from_center(rotation, eye)
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Max absolute deviation from the identity transform.
    pub fn identity_error(&self) -> f64 {
        (self.rotation - Matrix3::identity())
            .amax()
            .max(self.translation.amax())
    }

    /// Same orientation, camera centre moved to `center`.
    pub fn with_center(&self, center: Vector3<f64>) -> CameraPose {
        CameraPose {
            rotation: self.rotation,
            translation: -(self.rotation * center),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    pub depth: f64,
    pub valid: bool,
}

/// `d · K⁻¹ p` in the camera frame.
pub fn backproject(k: &CameraIntrinsics, p: Pixel, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("back-projection depth must be positive, got {depth}")));
    }
    if !p.is_finite() {
        return Err(Error::Domain("back-projection pixel is not finite".into()));
    }
    Ok(k.ray(p) * depth)
}

/// Perspective projection; `valid` is false at or behind the near plane.
pub fn project(k: &CameraIntrinsics, x: &Vector3<f64>) -> Projection {
    if !(x.z > Z_NEAR) {
        return Projection {
            pixel: Pixel::new(f64::NAN, f64::NAN),
            depth: x.z,
            valid: false,
        };
    }
    let pixel = Pixel::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy);
    Projection {
        pixel,
        depth: x.z,
        valid: pixel.is_finite(),
    }
}

/// Transform mapping reference-camera coordinates to source-camera coordinates.
pub fn relative_transform(pose_ref: &CameraPose, pose_src: &CameraPose) -> CameraPose {
    pose_src.compose(&pose_ref.inverse())
}

/// Bilinear stencil for a continuous pixel position: top-left neighbour and
/// fractional offsets. `None` when any of the four neighbours is off-grid.
///
/// At the last row/column the stencil is shifted inwards so an exactly
/// integer coordinate on the border still samples.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub x0: usize,
    pub y0: usize,
    pub ax: f64,
    pub ay: f64,
}

impl Stencil {
    #[inline]
    pub fn locate(width: usize, height: usize, p: Pixel) -> Option<Stencil> {
        if !p.is_finite() || width < 2 || height < 2 {
            return None;
        }
        let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
        if p.u < -BORDER_SLACK || p.v < -BORDER_SLACK || p.u > wmax + BORDER_SLACK || p.v > hmax + BORDER_SLACK {
            return None;
        }
        let p = Pixel::new(p.u.clamp(0.0, wmax), p.v.clamp(0.0, hmax));
        let x0 = (p.u.floor() as usize).min(width - 2);
        let y0 = (p.v.floor() as usize).min(height - 2);
        Some(Stencil {
            x0,
            y0,
            ax: p.u - x0 as f64,
            ay: p.v - y0 as f64,
        })
    }

    /// Weights for (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1).
    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (ax, ay) = (self.ax, self.ay);
        [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay]
    }

    #[inline]
    pub fn offsets(&self) -> [(usize, usize); 4] {
        let (x, y) = (self.x0, self.y0);
        [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSample {
    pub value: Vec<f64>,
    pub in_bounds: bool,
    /// Row `c` holds `(∂value_c/∂u, ∂value_c/∂v)`.
    pub jacobian: Vec<[f64; 2]>,
}

/// Samples every channel of `map` at `p`. Out-of-bounds samples return zeros
/// with `in_bounds = false`; there is no edge clamping.
pub fn bilinear_sample(map: &Raster, p: Pixel) -> BilinearSample {
    let c = map.channels();
    let mut value = vec![0.0; c];
    let mut jacobian = vec![[0.0; 2]; c];
    let in_bounds = sample_into(map, p, &mut value, &mut jacobian);
    BilinearSample {
        value,
        in_bounds,
        jacobian,
    }
}

/// Allocation-free form of [`bilinear_sample`]. Returns `in_bounds`.
#[inline]
pub fn sample_into(map: &Raster, p: Pixel, value: &mut [f64], jacobian: &mut [[f64; 2]]) -> bool {
    let Some(s) = Stencil::locate(map.width(), map.height(), p) else {
        value.iter_mut().for_each(|v| *v = 0.0);
        jacobian.iter_mut().for_each(|j| *j = [0.0; 2]);
        return false;
    };
    let v00 = map.pixel(s.x0, s.y0);
    let v10 = map.pixel(s.x0 + 1, s.y0);
    let v01 = map.pixel(s.x0, s.y0 + 1);
    let v11 = map.pixel(s.x0 + 1, s.y0 + 1);
    let (ax, ay) = (s.ax, s.ay);
    for ch in 0..value.len() {
        let (a, b, c, d) = (v00[ch], v10[ch], v01[ch], v11[ch]);
        value[ch] = (1.0 - ax) * (1.0 - ay) * a + ax * (1.0 - ay) * b + (1.0 - ax) * ay * c + ax * ay * d;
        jacobian[ch] = [(1.0 - ay) * (b - a) + ay * (d - c), (1.0 - ax) * (c - a) + ax * (d - b)];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn k64() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn random_pose(rx: f64, ry: f64, rz: f64, t: [f64; 3]) -> CameraPose {
        let r = Rotation3::from_euler_angles(rx, ry, rz).into_inner();
        CameraPose::new(r, Vector3::from(t)).unwrap()
    }

    #[test]
    fn backproject_examples() {
        let k = k64();
        assert_eq!(backproject(&k, Pixel::new(32.0, 32.0), 2.0).unwrap(), Vector3::new(0.0, 0.0, 2.0));
        let x = backproject(&k, Pixel::new(37.0, 32.0), 2.0).unwrap();
        assert!((x - Vector3::new(0.1, 0.0, 2.0)).amax() < 1e-15);
        assert!(matches!(backproject(&k, Pixel::new(1.0, 1.0), 0.0), Err(Error::Domain(_))));
        assert!(backproject(&k, Pixel::new(1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn project_examples() {
        let k = k64();
        let p = project(&k, &Vector3::new(0.0, 0.0, 2.0));
        assert!(p.valid);
        assert_eq!((p.pixel.u, p.pixel.v, p.depth), (32.0, 32.0, 2.0));
        let p = project(&k, &Vector3::new(0.1, 0.0, 2.0));
        assert!((p.pixel.u - 37.0).abs() < 1e-12 && p.pixel.v == 32.0);
        assert!(!project(&k, &Vector3::new(0.0, 0.0, -1.0)).valid);
        assert!(!project(&k, &Vector3::new(0.0, 0.0, Z_NEAR)).valid);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2).is_ok());
    }

    #[test]
    fn pose_rejects_non_rotations() {
        assert!(CameraPose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
        assert!(CameraPose::new(-Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn relative_transform_examples() {
        let a = random_pose(0.3, -0.2, 0.9, [0.5, -1.0, 2.0]);
        assert!(relative_transform(&a, &a).identity_error() < 1e-12);

        let src = CameraPose::from_translation(Vector3::new(0.1, 0.2, 0.3));
        let t = relative_transform(&CameraPose::identity(), &src);
        assert!((t.rotation() - Matrix3::identity()).amax() < 1e-15);
        assert!((t.translation() - Vector3::new(0.1, 0.2, 0.3)).amax() < 1e-15);
    }

    #[test]
    fn relative_transform_matches_direct_composition() {
        let r = random_pose(0.4, 0.1, -0.7, [1.0, 0.3, -0.2]);
        let s = random_pose(-0.2, 0.8, 0.25, [-0.4, 0.9, 1.5]);
        let t = relative_transform(&r, &s);
        for w in [Vector3::new(0.3, -1.2, 4.0), Vector3::new(-2.0, 0.5, 1.0)] {
            let via_ref = t.transform_point(&r.transform_point(&w));
            let direct = s.transform_point(&w);
            assert!((via_ref - direct).amax() < 1e-12);
        }
    }

    #[test]
    fn look_at_identity_orientation() {
        let p = CameraPose::look_at(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert!(p.identity_error() < 1e-15);
    }

    #[test]
    fn bilinear_examples() {
        let map = Raster::from_vec(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = bilinear_sample(&map, Pixel::new(0.5, 0.0));
        assert!(s.in_bounds);
        assert_eq!(s.value, vec![0.5]);
        assert_eq!(s.jacobian, vec![[1.0, 0.0]]);

        let map = Raster::from_fn(4, 3, 2, |x, y, c| (x * 7 + y * 3 + c) as f64);
        for (x, y) in [(0, 0), (3, 2), (2, 1)] {
            let s = bilinear_sample(&map, Pixel::new(x as f64, y as f64));
            assert!(s.in_bounds);
            assert_eq!(s.value, map.pixel(x, y));
        }
        assert!(!bilinear_sample(&map, Pixel::new(-0.6, 0.0)).in_bounds);
        assert!(!bilinear_sample(&map, Pixel::new(3.0001, 0.0)).in_bounds);
        assert!(!bilinear_sample(&map, Pixel::new(f64::NAN, 0.0)).in_bounds);
    }

    proptest! {
        #[test]
        fn project_backproject_round_trip(u in 0.0f64..63.0, v in 0.0f64..63.0, d in 1.1e-4f64..1e3) {
            let k = k64();
            let x = backproject(&k, Pixel::new(u, v), d).unwrap();
            let p = project(&k, &x);
            prop_assert!(p.valid);
            prop_assert!((p.pixel.u - u).abs() <= 1e-9);
            prop_assert!((p.pixel.v - v).abs() <= 1e-9);
            prop_assert!((p.depth - d).abs() <= 1e-12 * d);
        }

        #[test]
        fn relative_transforms_cancel(
            a in prop::array::uniform3(-3.0f64..3.0), b in prop::array::uniform3(-3.0f64..3.0),
            ta in prop::array::uniform3(-5.0f64..5.0), tb in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let pa = random_pose(a[0], a[1], a[2], ta);
            let pb = random_pose(b[0], b[1], b[2], tb);
            let ab = relative_transform(&pa, &pb);
            let ba = relative_transform(&pb, &pa);
            prop_assert!(ab.compose(&ba).identity_error() <= 1e-9);
            prop_assert!(pa.compose(&pa.inverse()).identity_error() <= 1e-9);
        }

        #[test]
        fn bilinear_jacobian_matches_finite_differences(
            seed in 0u64..1000, u in 0.05f64..6.95, v in 0.05f64..4.95,
        ) {
            // Avoid cell boundaries where the bilinear derivative jumps.
            let h = 1e-4;
            prop_assume!((u.fract() - 0.5).abs() < 0.5 - 2.0 * h && (v.fract() - 0.5).abs() < 0.5 - 2.0 * h);
            let s = seed as f64;
            let map = Raster::from_fn(8, 6, 3, |x, y, c| {
                ((x as f64 * 0.7 + s).sin() + (y as f64 * 0.45 - c as f64).cos()) * 0.5
            });
            let base = bilinear_sample(&map, Pixel::new(u, v));
            let pu = bilinear_sample(&map, Pixel::new(u + h, v));
            let mu = bilinear_sample(&map, Pixel::new(u - h, v));
            let pv = bilinear_sample(&map, Pixel::new(u, v + h));
            let mv = bilinear_sample(&map, Pixel::new(u, v - h));
            for c in 0..3 {
                let du = (pu.value[c] - mu.value[c]) / (2.0 * h);
                let dv = (pv.value[c] - mv.value[c]) / (2.0 * h);
                prop_assert!((du - base.jacobian[c][0]).abs() <= 1e-5);
                prop_assert!((dv - base.jacobian[c][1]).abs() <= 1e-5);
            }
        }
    }
}
