use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Spherical-harmonic coefficients per colour channel (degree 0 + degree 1).
pub const SH_COEFFS: usize = 4;
pub const SH_PER_GAUSSIAN: usize = 3 * SH_COEFFS;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SCALE: f64 = 1e3;

/// Parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Position,
        ParamClass::Rotation,
        ParamClass::Scale,
        ParamClass::Opacity,
        ParamClass::Color,
    ];

    pub fn width(self) -> usize {
        match self {
            ParamClass::Position | ParamClass::Scale => 3,
            ParamClass::Rotation => 4,
            ParamClass::Opacity => 1,
            ParamClass::Color => SH_PER_GAUSSIAN,
        }
    }
}

/// Structure-of-arrays scene representation.
///
/// Quaternions are `(w, x, y, z)`; colour holds `SH_COEFFS` coefficients for
/// red, then green, then blue.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

/// A single Gaussian in unpacked form, used for construction and edits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: [f64; SH_PER_GAUSSIAN],
}

impl Gaussian {
    /// Isotropic Gaussian with view-independent colour `rgb` and opacity in (0, 1).
    pub fn isotropic(position: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh = [0.0; SH_PER_GAUSSIAN];
        for (c, &v) in rgb.iter().enumerate() {
            sh[c * SH_COEFFS] = rgb_to_sh0(v);
        }
        Self {
            position,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Degree-0 coefficient that evaluates to `value` (colours carry a +0.5 offset).
pub fn rgb_to_sh0(value: f64) -> f64 {
    (value - 0.5) / SH_C0
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gaussians: impl IntoIterator<Item = Gaussian>) -> Self {
        let mut cloud = Self::new();
        for g in gaussians {
            cloud.push(&g);
        }
        cloud
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn push(&mut self, g: &Gaussian) {
        self.positions.extend_from_slice(g.position.as_slice());
        self.rotations.extend_from_slice(g.rotation.as_slice());
        self.log_scales.extend_from_slice(g.log_scale.as_slice());
        self.opacity_logits.push(g.opacity_logit);
        self.sh.extend_from_slice(&g.sh);
    }

    pub fn gaussian(&self, i: usize) -> Gaussian {
        let mut sh = [0.0; SH_PER_GAUSSIAN];
        sh.copy_from_slice(&self.sh[i * SH_PER_GAUSSIAN..(i + 1) * SH_PER_GAUSSIAN]);
        Gaussian {
            position: self.position(i),
            rotation: Vector4::from_column_slice(&self.rotations[4 * i..4 * i + 4]),
            log_scale: Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3]),
            opacity_logit: self.opacity_logits[i],
            sh,
        }
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    #[inline]
    pub fn scale(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3]).map(f64::exp)
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn sh_coeffs(&self, i: usize) -> &[f64] {
        &self.sh[i * SH_PER_GAUSSIAN..(i + 1) * SH_PER_GAUSSIAN]
    }

    #[inline]
    pub fn quaternion(&self, i: usize) -> [f64; 4] {
        [
            self.rotations[4 * i],
            self.rotations[4 * i + 1],
            self.rotations[4 * i + 2],
            self.rotations[4 * i + 3],
        ]
    }

    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        covariance_3d(&Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3]), &self.quaternion(i))
    }

    pub fn params(&self, class: ParamClass) -> &[f64] {
        match class {
            ParamClass::Position => &self.positions,
            ParamClass::Rotation => &self.rotations,
            ParamClass::Scale => &self.log_scales,
            ParamClass::Opacity => &self.opacity_logits,
            ParamClass::Color => &self.sh,
        }
    }

    pub fn params_mut(&mut self, class: ParamClass) -> &mut [f64] {
        match class {
            ParamClass::Position => &mut self.positions,
            ParamClass::Rotation => &mut self.rotations,
            ParamClass::Scale => &mut self.log_scales,
            ParamClass::Opacity => &mut self.opacity_logits,
            ParamClass::Color => &mut self.sh,
        }
    }

    /// Checks that every parameter array describes the same number of Gaussians.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for class in ParamClass::ALL {
            if self.params(class).len() != n * class.width() {
                return Err(Error::Contract(format!(
                    "{class:?} array has {} values for {n} gaussians",
                    self.params(class).len()
                )));
            }
        }
        Ok(())
    }

    /// Unit quaternions and clamped scales; applied after every optimizer step.
    pub fn normalize(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 && norm.is_finite() {
                q.iter_mut().for_each(|v| *v /= norm);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
        let (lo, hi) = (MIN_SCALE.ln(), MAX_SCALE.ln());
        for s in &mut self.log_scales {
            *s = s.clamp(lo, hi);
        }
    }

    /// Keeps the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        GaussianCloud::from_gaussians(indices.iter().map(|&i| self.gaussian(i)))
    }

    /// Rounds every parameter through `f32`, matching what a checkpoint stores.
    pub fn quantized(&self) -> GaussianCloud {
        let q = |v: &Vec<f64>| v.iter().map(|&x| x as f32 as f64).collect();
        GaussianCloud {
            positions: q(&self.positions),
            rotations: q(&self.rotations),
            log_scales: q(&self.log_scales),
            opacity_logits: q(&self.opacity_logits),
            sh: q(&self.sh),
        }
    }
}

/// Gradient buffers mirroring [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudGradients {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    /// Norm of the loss gradient w.r.t. each projected 2D mean, summed over
    /// every backward pass accumulated into this buffer (densification statistic).
    pub screen: Vec<f64>,
}

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            log_scales: vec![0.0; 3 * n],
            opacity_logits: vec![0.0; n],
            sh: vec![0.0; SH_PER_GAUSSIAN * n],
            screen: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn params(&self, class: ParamClass) -> &[f64] {
        match class {
            ParamClass::Position => &self.positions,
            ParamClass::Rotation => &self.rotations,
            ParamClass::Scale => &self.log_scales,
            ParamClass::Opacity => &self.opacity_logits,
            ParamClass::Color => &self.sh,
        }
    }

    pub fn params_mut(&mut self, class: ParamClass) -> &mut [f64] {
        match class {
            ParamClass::Position => &mut self.positions,
            ParamClass::Rotation => &mut self.rotations,
            ParamClass::Scale => &mut self.log_scales,
            ParamClass::Opacity => &mut self.opacity_logits,
            ParamClass::Color => &mut self.sh,
        }
    }

    /// `self += weight · other`.
    pub fn add_scaled(&mut self, other: &CloudGradients, weight: f64) {
        assert_eq!(self.len(), other.len(), "gradient buffers for different clouds");
        for class in ParamClass::ALL {
            for (a, b) in self.params_mut(class).iter_mut().zip(other.params(class)) {
                *a += weight * b;
            }
        }
        for (a, b) in self.screen.iter_mut().zip(&other.screen) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        ParamClass::ALL
            .iter()
            .flat_map(|&c| self.params(c).iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Back-propagates `∂L/∂R` through [`quat_to_matrix`], including the normalization.
pub fn quat_to_matrix_backward(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = d_r;
    // ∂L/∂(w, x, y, z) of the unit quaternion
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let dq = [dw, dx, dy, dz];
    let unit = [w, x, y, z];
    let dot: f64 = dq.iter().zip(&unit).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (dq[k] - dot * unit[k]) / n;
    }
    out
}

/// `Σ = R diag(s²) Rᵀ` with `s = exp(log_scale)`.
pub fn covariance_3d(log_scale: &Vector3<f64>, q: &[f64; 4]) -> Matrix3<f64> {
    let r = quat_to_matrix(q);
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();
    // exact symmetry
    (sigma + sigma.transpose()) * 0.5
}

/// Colour of one Gaussian seen along unit direction `dir` (from camera to Gaussian).
#[inline]
pub fn eval_sh(sh: &[f64], dir: &Vector3<f64>) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let k = &sh[c * SH_COEFFS..(c + 1) * SH_COEFFS];
        *out = 0.5 + SH_C0 * k[0] + SH_C1 * (-dir.y * k[1] + dir.z * k[2] - dir.x * k[3]);
    }
    rgb
}

/// Given `∂L/∂rgb`, returns `∂L/∂dir` and accumulates `∂L/∂sh`.
#[inline]
pub fn eval_sh_backward(sh: &[f64], dir: &Vector3<f64>, d_rgb: &[f64; 3], d_sh: &mut [f64]) -> Vector3<f64> {
    let mut d_dir = Vector3::zeros();
    for c in 0..3 {
        let g = d_rgb[c];
        let k = &sh[c * SH_COEFFS..(c + 1) * SH_COEFFS];
        let d = &mut d_sh[c * SH_COEFFS..(c + 1) * SH_COEFFS];
        d[0] += g * SH_C0;
        d[1] += -g * SH_C1 * dir.y;
        d[2] += g * SH_C1 * dir.z;
        d[3] += -g * SH_C1 * dir.x;
        d_dir.x += -g * SH_C1 * k[3];
        d_dir.y += -g * SH_C1 * k[1];
        d_dir.z += g * SH_C1 * k[2];
    }
    d_dir
}
