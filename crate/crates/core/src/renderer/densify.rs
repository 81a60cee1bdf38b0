use nalgebra::Vector3;

use super::cloud::{quat_to_matrix, CloudGradients, GaussianCloud};

/// Split children shrink their parent's scale by this factor.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyThresholds {
    /// Mean screen-space positional gradient above which a Gaussian is cloned.
    pub grad: f64,
    /// Largest axis scale above which a Gaussian is split.
    pub scale: f64,
    /// Gaussians less opaque than this are removed.
    pub min_opacity: f64,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self {
            grad: 2e-4,
            scale: 0.1,
            min_opacity: 0.005,
        }
    }
}

/// Running mean of the screen-space positional gradient per Gaussian.
#[derive(Debug, Clone, Default)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one iteration of screen gradients; Gaussians with zero gradient
    /// (not visible) are not counted.
    pub fn record(&mut self, grads: &CloudGradients) {
        for (i, &g) in grads.screen.iter().enumerate() {
            if g > 0.0 {
                self.accum[i] += g;
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

/// Result of one densification round. `parents[j]` is the index in the input
/// cloud that Gaussian `j` of the output derives from.
#[derive(Debug, Clone)]
pub struct Densified {
    pub cloud: GaussianCloud,
    pub parents: Vec<usize>,
}

/// Clone small high-gradient Gaussians, split oversized ones into two
/// children along their major axis, and prune nearly transparent ones.
pub fn densify_and_prune(cloud: &GaussianCloud, stats: &GradStats, thresholds: &DensifyThresholds) -> Densified {
    let mut out = GaussianCloud::new();
    let mut parents = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        if cloud.opacity(i) < thresholds.min_opacity {
            continue;
        }
        let g = cloud.gaussian(i);
        let scale = cloud.scale(i);
        let (axis, max_scale) = scale
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (a, &s)| if s > best.1 { (a, s) } else { best });
        if max_scale > thresholds.scale {
            let rot = quat_to_matrix(&cloud.quaternion(i));
            let offset: Vector3<f64> = rot.column(axis) * (0.5 * max_scale);
            for sign in [-1.0, 1.0] {
                let mut child = g;
                child.position = g.position + offset * sign;
                child.log_scale = g.log_scale.map(|l| l - SPLIT_SCALE_DIVISOR.ln());
                out.push(&child);
                parents.push(i);
            }
        } else {
            out.push(&g);
            parents.push(i);
            if stats.mean(i) > thresholds.grad {
                out.push(&g);
                parents.push(i);
            }
        }
    }
    Densified { cloud: out, parents }
}
