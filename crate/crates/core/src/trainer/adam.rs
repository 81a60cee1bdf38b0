use crate::renderer::{CloudGradients, GaussianCloud, ParamClass};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First and second moments for every parameter of a cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    m: [Vec<f64>; 5],
    v: [Vec<f64>; 5],
}

fn slot(class: ParamClass) -> usize {
    ParamClass::ALL.iter().position(|&c| c == class).expect("known class")
}

impl AdamState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let zeros = |c: ParamClass| vec![0.0; cloud.params(c).len()];
        Self {
            step: 0,
            m: ParamClass::ALL.map(zeros),
            v: ParamClass::ALL.map(zeros),
        }
    }

    /// Rebuilds moments after densification; child `j` inherits from `parents[j]`.
    pub fn remap(&self, parents: &[usize]) -> Self {
        let pick = |class: ParamClass, src: &Vec<f64>| {
            let w = class.width();
            parents.iter().flat_map(|&p| src[p * w..(p + 1) * w].iter().copied()).collect()
        };
        Self {
            step: self.step,
            m: ParamClass::ALL.map(|c| pick(c, &self.m[slot(c)])),
            v: ParamClass::ALL.map(|c| pick(c, &self.v[slot(c)])),
        }
    }
}

/// One bias-corrected Adam step with a learning rate per parameter class,
/// followed by quaternion normalization and scale clamping.
pub fn adam_step(cloud: &mut GaussianCloud, grads: &CloudGradients, state: &mut AdamState, lr: impl Fn(ParamClass) -> f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for class in ParamClass::ALL {
        let rate = lr(class);
        let s = slot(class);
        let params = cloud.params_mut(class);
        let g = grads.params(class);
        let (m, v) = (&mut state.m[s], &mut state.v[s]);
        for i in 0..params.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= rate * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    cloud.normalize();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::Gaussian;
    use nalgebra::Vector3;

    fn one() -> GaussianCloud {
        GaussianCloud::from_gaussians([Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, [0.5; 3])])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut c = one();
        let before = c.clone();
        let mut s = AdamState::new(&c);
        adam_step(&mut c, &CloudGradients::zeros(1), &mut s, |_| 0.1);
        assert_eq!(c, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut c = one();
        let mut s = AdamState::new(&c);
        let mut g = CloudGradients::zeros(1);
        g.positions[0] = 1.0;
        adam_step(&mut c, &g, &mut s, |_| 0.01);
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + ε)
        assert!((c.positions[0] + 0.01 / (1.0 + EPSILON)).abs() < 1e-15);
        assert_eq!(c.positions[1], 0.0);
    }

    #[test]
    fn quaternions_stay_unit() {
        let mut c = one();
        let mut s = AdamState::new(&c);
        let mut g = CloudGradients::zeros(1);
        g.rotations = vec![-1.0, 3.0, -2.0, 0.5];
        for _ in 0..20 {
            adam_step(&mut c, &g, &mut s, |_| 0.1);
            let n: f64 = c.rotations.iter().map(|q| q * q).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
