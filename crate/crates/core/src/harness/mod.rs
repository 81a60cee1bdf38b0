//! Synthetic ground truth: analytic scenes and their exact renders, scene
//! presets, and point-cloud initialization from depth.

mod init;
mod presets;
mod scene;

pub use init::{init_cloud, INIT_OPACITY};
pub use presets::{
    generate, preset_cameras, preset_intrinsics, preset_scene, view_lighting, GenOptions, Preset, BACK_DEPTH,
    BASELINE, FRONT_DEPTH, WEAK_CONTRAST,
};
pub use scene::{
    covisibility_mask, raytrace_view, weak_checker, GroundTruthView, Hit, Lighting, Primitive, Rgb, SceneSpec, Shape,
    Texture, COVISIBILITY_TOL,
};
