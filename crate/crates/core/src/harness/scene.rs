use nalgebra::Vector3;

use crate::geometry::{project, CameraIntrinsics, CameraPose, Pixel};
use crate::raster::{Mask, Raster};

pub type Rgb = [f64; 3];

/// Procedural surface colour as a function of 2D surface coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Checker { colors: [Rgb; 2], period: f64 },
    /// Smooth value noise around `base` with per-channel amplitude.
    Noise { base: Rgb, amplitude: f64, period: f64, seed: u64 },
    /// Triangle-wave blend between two colours along the first coordinate.
    Ramp { from: Rgb, to: Rgb, period: f64 },
}

/// Low-contrast checker around mid gray, the weakly textured surface case.
pub fn weak_checker(contrast: f64, period: f64) -> Texture {
    let (lo, hi) = (0.5 - contrast / 2.0, 0.5 + contrast / 2.0);
    Texture::Checker {
        colors: [[lo, lo, lo * 0.96], [hi, hi * 0.98, hi]],
        period,
    }
}

fn hash(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, channel: u64) -> f64 {
    let h = hash(seed ^ hash((i as u64).wrapping_mul(0x1000_0000_01b3) ^ hash(j as u64 ^ (channel << 56))));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, s: f64, t: f64, channel: u64) -> f64 {
    let (i, j) = (s.floor(), t.floor());
    let smooth = |f: f64| f * f * (3.0 - 2.0 * f);
    let (fx, fy) = (smooth(s - i), smooth(t - j));
    let (i, j) = (i as i64, j as i64);
    let v00 = lattice(seed, i, j, channel);
    let v10 = lattice(seed, i + 1, j, channel);
    let v01 = lattice(seed, i, j + 1, channel);
    let v11 = lattice(seed, i + 1, j + 1, channel);
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

impl Texture {
    pub fn eval(&self, s: f64, t: f64) -> Rgb {
        match self {
            Texture::Checker { colors, period } => {
                let parity = ((s / period).floor() + (t / period).floor()).rem_euclid(2.0);
                colors[parity as usize]
            }
            Texture::Noise {
                base,
                amplitude,
                period,
                seed,
            } => {
                let (s, t) = (s / period, t / period);
                // two octaves
                std::array::from_fn(|c| {
                    let n = value_noise(*seed, s, t, c as u64) * 0.7 + value_noise(*seed ^ 0x55, 2.0 * s, 2.0 * t, c as u64) * 0.3;
                    (base[c] + amplitude * n).clamp(0.0, 1.0)
                })
            }
            Texture::Ramp { from, to, period } => {
                let f = (s / period).rem_euclid(2.0);
                let a = if f > 1.0 { 2.0 - f } else { f };
                std::array::from_fn(|c| from[c] * (1.0 - a) + to[c] * a)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Rectangle through `center` spanned by unit axes `u` and `v`.
    Rect {
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        half_extents: [f64; 2],
    },
    Sphere { center: Vector3<f64>, radius: f64 },
    AxisBox { min: Vector3<f64>, max: Vector3<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

/// Surface hit along a camera ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera-frame depth for rays with unit z.
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub primitive: usize,
    pub uv: [f64; 2],
}

const T_MIN: f64 = 1e-9;

impl Shape {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>, [f64; 2])> {
        match self {
            Shape::Rect {
                center,
                u,
                v,
                half_extents,
            } => {
                let n = u.cross(v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = n.dot(&(center - origin)) / denom;
                if t <= T_MIN {
                    return None;
                }
                let local = origin + dir * t - center;
                let (a, b) = (local.dot(u), local.dot(v));
                if a.abs() > half_extents[0] || b.abs() > half_extents[1] {
                    return None;
                }
                let normal = if denom < 0.0 { n } else { -n };
                Some((t, normal, [a, b]))
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let hb = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = hb * hb - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-hb - sq) / a, (-hb + sq) / a].into_iter().find(|&t| t > T_MIN)?;
                let normal = (origin + dir * t - center) / *radius;
                let uv = [normal.x.atan2(normal.z) * radius, normal.y.clamp(-1.0, 1.0).asin() * radius];
                Some((t, normal, uv))
            }
            Shape::AxisBox { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis0 = 0;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut lo, mut hi) = ((min[a] - origin[a]) / dir[a], (max[a] - origin[a]) / dir[a]);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    if lo > t0 {
                        t0 = lo;
                        axis0 = a;
                    }
                    t1 = t1.min(hi);
                }
                if t0 > t1 || t0 <= T_MIN {
                    return None;
                }
                let p = origin + dir * t0;
                let mut normal = Vector3::zeros();
                normal[axis0] = -dir[axis0].signum();
                let (i, j) = ((axis0 + 1) % 3, (axis0 + 2) % 3);
                Some((t0, normal, [p[i], p[j]]))
            }
        }
    }

    fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        match self {
            Shape::Rect {
                center,
                half_extents,
                ..
            } => (*center, half_extents[0].hypot(half_extents[1])),
            Shape::Sphere { center, radius } => (*center, *radius),
            Shape::AxisBox { min, max } => ((min + max) / 2.0, (max - min).norm() / 2.0),
        }
    }
}

/// Per-view illumination applied on top of surface albedo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lighting {
    /// Direction towards the light, world frame.
    pub direction: Vector3<f64>,
    pub ambient: f64,
    pub diffuse: f64,
    /// Additive exposure offset.
    pub offset: f64,
}

impl Lighting {
    fn shade(&self, albedo: Rgb, normal: &Vector3<f64>) -> Rgb {
        let l = self.direction.normalize();
        let f = self.ambient + self.diffuse * normal.dot(&l).max(0.0);
        albedo.map(|a| (a * f + self.offset).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: Rgb,
}

/// Exact per-pixel rendering of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthView {
    pub rgb: Raster,
    /// Camera-frame z of the first hit; 0 where nothing is hit.
    pub depth: Raster,
    /// Index of the hit primitive, −1 for background.
    pub ids: Vec<i32>,
}

impl SceneSpec {
    /// Smallest sphere around the primitives' centroid enclosing all of them.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        if self.primitives.is_empty() {
            return (Vector3::zeros(), 0.0);
        }
        let spheres: Vec<_> = self.primitives.iter().map(|p| p.shape.bounding_sphere()).collect();
        let center = spheres.iter().map(|s| s.0).sum::<Vector3<f64>>() / spheres.len() as f64;
        let radius = spheres.iter().map(|(c, r)| (c - center).norm() + r).fold(0.0, f64::max);
        (center, radius)
    }

    /// Nearest hit along `origin + t·dir`.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal, uv)) = p.shape.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: origin + dir * t,
                        normal,
                        primitive: i,
                        uv,
                    });
                }
            }
        }
        best
    }

    /// First hit of the camera ray through continuous pixel `p`.
    pub fn trace_pixel(&self, k: &CameraIntrinsics, pose: &CameraPose, p: Pixel) -> Option<Hit> {
        let dir = pose.rotation().transpose() * k.ray(p);
        self.trace(&pose.center(), &dir)
    }

    pub fn albedo(&self, hit: &Hit) -> Rgb {
        self.primitives[hit.primitive].texture.eval(hit.uv[0], hit.uv[1])
    }
}

/// Ray-traces every pixel centre. Without lighting the colour is the flat
/// surface albedo, identical from every viewpoint.
pub fn raytrace_view(scene: &SceneSpec, k: &CameraIntrinsics, pose: &CameraPose, lighting: Option<&Lighting>) -> GroundTruthView {
    let (w, h) = (k.width, k.height);
    let mut rgb = Raster::zeros(w, h, 3);
    let mut depth = Raster::zeros(w, h, 1);
    let mut ids = vec![-1; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let color = match scene.trace_pixel(k, pose, Pixel::new(x as f64, y as f64)) {
                Some(hit) => {
                    depth.data_mut()[i] = hit.t;
                    ids[i] = hit.primitive as i32;
                    let albedo = scene.albedo(&hit);
                    lighting.map_or(albedo, |l| l.shade(albedo, &hit.normal))
                }
                None => scene.background,
            };
            rgb.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
    GroundTruthView { rgb, depth, ids }
}

/// Distance below which two hits count as the same surface point.
pub const COVISIBILITY_TOL: f64 = 1e-6;

/// Reference pixels whose surface point is visible, unoccluded and inside the
/// image in the source camera.
pub fn covisibility_mask(scene: &SceneSpec, k: &CameraIntrinsics, pose_ref: &CameraPose, pose_src: &CameraPose) -> Mask {
    Mask::from_fn(k.width, k.height, |x, y| {
        let Some(hit) = scene.trace_pixel(k, pose_ref, Pixel::new(x as f64, y as f64)) else {
            return false;
        };
        let proj = project(k, &pose_src.transform_point(&hit.point));
        if !proj.valid || !k.contains(proj.pixel) {
            return false;
        }
        scene
            .trace_pixel(k, pose_src, proj.pixel)
            .is_some_and(|h| (h.point - hit.point).norm() <= COVISIBILITY_TOL)
    })
}
