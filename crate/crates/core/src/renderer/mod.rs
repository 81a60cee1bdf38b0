//! Differentiable Gaussian splatting: scene representation, forward
//! rendering of colour/depth/alpha, analytic backward pass and a simple
//! densification rule.

mod cloud;
mod densify;
mod render;

pub use cloud::{
    covariance_3d, eval_sh, logit, quat_to_matrix, rgb_to_sh0, sigmoid, CloudGradients, Gaussian, GaussianCloud,
    ParamClass, MAX_SCALE, MIN_SCALE, SH_C0, SH_C1, SH_COEFFS, SH_PER_GAUSSIAN,
};
pub use densify::{densify_and_prune, Densified, DensifyThresholds, GradStats, SPLIT_SCALE_DIVISOR};
pub use render::{
    backward, render, render_backward, render_traced, render_with, RenderOptions, RenderOutput, RenderStats,
    RenderTrace, Upstream, KERNEL_CUTOFF_SQ, MAX_BLEND_WEIGHT, MIN_COV_DET, TRANSMITTANCE_CUTOFF,
};
