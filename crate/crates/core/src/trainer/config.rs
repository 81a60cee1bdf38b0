use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene radius.
    pub position: f64,
    /// Position rate reached at the last iteration (exponential decay).
    pub position_final: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            color: 2.5e-3,
        }
    }
}

/// What the multi-view consistency term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcSignal {
    /// Cosine distance of feature descriptors.
    Feature,
    /// Mean absolute colour difference.
    Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_mpc: f64,
    pub lambda_smooth: f64,
    pub lambda_app: f64,
    /// Weight of the SSIM term inside the base photometric loss.
    pub lambda_dssim: f64,
    pub total_iters: usize,
    /// First iteration of the geometric terms.
    pub stage2_start: usize,
    /// First iteration of the virtual-view term.
    pub stage3_start: usize,
    /// Views kept by the top-k selection; `⌈(n−1)/2⌉` when unset.
    pub k: Option<usize>,
    /// Consistent views required by the reliability filter; `⌈(n−1)/2⌉` when unset.
    pub m: Option<usize>,
    pub tau_factor: f64,
    pub alpha_edge: f64,
    /// Virtual camera sampling radius; 0.15 × scene radius when unset.
    pub virtual_radius: Option<f64>,
    /// Virtual views per iteration.
    pub n_virtual: usize,
    pub mpc_signal: MpcSignal,
    /// Ablation: skip the cycle-consistency filter (every pixel reliable).
    pub force_reliable: bool,
    pub lr: LearningRates,
    pub seed: u64,
    pub deterministic: bool,
    pub init_points: usize,
    /// Standard deviation of the position jitter applied at initialization.
    pub init_noise: f64,
    pub densify: bool,
    pub densify_every: usize,
    pub densify_until: usize,
    pub densify_grad: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_mpc: 0.1,
            lambda_smooth: 0.01,
            lambda_app: 1.0,
            lambda_dssim: 0.2,
            total_iters: 2000,
            stage2_start: 800,
            stage3_start: 1200,
            k: None,
            m: None,
            tau_factor: 0.01,
            alpha_edge: 1.0,
            virtual_radius: None,
            n_virtual: 1,
            mpc_signal: MpcSignal::Feature,
            force_reliable: false,
            lr: LearningRates::default(),
            seed: 0,
            deterministic: false,
            init_points: 2000,
            init_noise: 0.0,
            densify: false,
            densify_every: 100,
            densify_until: 1500,
            densify_grad: 2e-4,
            log_every: 100,
        }
    }
}

/// Loss terms active at an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveLosses {
    pub base: bool,
    pub geometric: bool,
    pub appearance: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_mpc", self.lambda_mpc),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_app", self.lambda_app),
            ("tau_factor", self.tau_factor),
            ("alpha_edge", self.alpha_edge),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {w}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::Config(format!("lambda_dssim must lie in [0, 1], got {}", self.lambda_dssim)));
        }
        if self.stage2_start > self.stage3_start {
            return Err(Error::Config(format!(
                "stage2_start ({}) must not exceed stage3_start ({})",
                self.stage2_start, self.stage3_start
            )));
        }
        if self.k == Some(0) || self.m == Some(0) {
            return Err(Error::Config("k and m must be at least 1".into()));
        }
        if self.virtual_radius.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::Config("virtual_radius must be non-negative".into()));
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::Config("init_noise must be non-negative".into()));
        }
        if self.log_every == 0 || self.densify_every == 0 {
            return Err(Error::Config("log_every and densify_every must be positive".into()));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("lr.position", lr.position),
            ("lr.position_final", lr.position_final),
            ("lr.opacity", lr.opacity),
            ("lr.scale", lr.scale),
            ("lr.rotation", lr.rotation),
            ("lr.color", lr.color),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self, iter: usize) -> ActiveLosses {
        ActiveLosses {
            base: true,
            geometric: iter >= self.stage2_start,
            appearance: iter >= self.stage3_start,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let c = TrainConfig {
            total_iters: 30_000,
            stage2_start: 20_000,
            stage3_start: 25_000,
            ..Default::default()
        };
        assert_eq!(
            c.schedule(19_999),
            ActiveLosses {
                base: true,
                geometric: false,
                appearance: false
            }
        );
        assert!(c.schedule(20_000).geometric && !c.schedule(20_000).appearance);
        assert!(c.schedule(25_000).appearance);
        let zero = TrainConfig {
            stage2_start: 0,
            ..Default::default()
        };
        assert!(zero.schedule(0).geometric);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            stage2_start: 10,
            stage3_start: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda_app: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, TrainConfig::default());
        let c: TrainConfig = serde_json::from_str(r#"{"mpc_signal": "rgb", "lr": {"color": 0.01}}"#).unwrap();
        assert_eq!(c.mpc_signal, MpcSignal::Rgb);
        assert_eq!(c.lr.color, 0.01);
        assert_eq!(c.lr.opacity, 5e-2);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda_app": 1}"#).is_err());
    }
}
