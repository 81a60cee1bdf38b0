use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use super::scene::{raytrace_view, weak_checker, Lighting, Primitive, SceneSpec, Shape, Texture};
use crate::dataset::{quantize_view, Dataset, Split, View};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose};

/// Camera spacing of the forward-facing rigs. With focal length equal to the
/// image width, the back plane (z = 4) moves 4 px per `BASELINE` at 64 px.
pub const BASELINE: f64 = 0.25;

pub const BACK_DEPTH: f64 = 4.0;
pub const FRONT_DEPTH: f64 = 2.0;

/// Contrast of the weakly textured preset.
pub const WEAK_CONTRAST: f64 = 0.05;

/// Training-camera lattice in units of `2·BASELINE` (forward-facing presets).
const TRAIN_LATTICE: [(f64, f64); 9] = [
    (0.0, 0.0),
    (1.0, 0.0),
    (0.0, 1.0),
    (-1.0, -1.0),
    (1.0, 1.0),
    (-1.0, 0.0),
    (0.0, -1.0),
    (-1.0, 1.0),
    (1.0, -1.0),
];

/// Held-out cameras between training cameras, in units of `BASELINE`.
const TEST_OFFSETS: [(f64, f64); 3] = [(1.0, 0.0), (0.0, 1.0), (-1.0, -1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// One richly textured plane.
    Plane3,
    /// Textured back plane with a smaller textured square in front of it.
    Occluder,
    /// The occluder geometry with low-contrast checkers.
    WeakTexture,
    /// Sphere and box on a floor, cameras on an arc around them.
    Orbit8,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Plane3, Preset::Occluder, Preset::WeakTexture, Preset::Orbit8];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Plane3 => "plane3",
            Preset::Occluder => "occluder",
            Preset::WeakTexture => "weak-texture",
            Preset::Orbit8 => "orbit8",
        }
    }

    pub fn max_views(self) -> usize {
        match self {
            Preset::Orbit8 => 16,
            _ => TRAIN_LATTICE.len(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown preset '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

fn rect_z(center: Vector3<f64>, half: f64) -> Shape {
    Shape::Rect {
        center,
        u: Vector3::x(),
        v: Vector3::y(),
        half_extents: [half, half],
    }
}

fn noise(seed: u64, base: [f64; 3], amplitude: f64, period: f64) -> Texture {
    Texture::Noise {
        base,
        amplitude,
        period,
        seed,
    }
}

pub fn preset_scene(preset: Preset, seed: u64) -> SceneSpec {
    let back = rect_z(Vector3::new(0.0, 0.0, BACK_DEPTH), 3.5);
    let front = rect_z(Vector3::new(0.07, 0.11, FRONT_DEPTH), 0.3);
    let primitives = match preset {
        Preset::Plane3 => vec![Primitive {
            shape: back,
            texture: noise(seed, [0.5, 0.45, 0.4], 0.45, 0.23),
        }],
        Preset::Occluder => vec![
            Primitive {
                shape: back,
                texture: noise(seed, [0.45, 0.5, 0.45], 0.45, 0.23),
            },
            Primitive {
                shape: front,
                texture: Texture::Checker {
                    colors: [[0.9, 0.2, 0.15], [0.15, 0.25, 0.85]],
                    period: 0.083,
                },
            },
        ],
        Preset::WeakTexture => vec![
            Primitive {
                shape: back,
                texture: weak_checker(WEAK_CONTRAST, 0.31),
            },
            Primitive {
                shape: front,
                texture: match weak_checker(WEAK_CONTRAST, 0.13) {
                    Texture::Checker { colors, period } => Texture::Checker {
                        colors: colors.map(|c| c.map(|v| v + 0.15)),
                        period,
                    },
                    t => t,
                },
            },
        ],
        Preset::Orbit8 => vec![
            Primitive {
                shape: Shape::Rect {
                    center: Vector3::new(0.0, 1.0, 4.0),
                    u: Vector3::x(),
                    v: Vector3::z(),
                    half_extents: [3.0, 3.0],
                },
                texture: Texture::Checker {
                    colors: [[0.8, 0.78, 0.7], [0.35, 0.35, 0.4]],
                    period: 0.37,
                },
            },
            Primitive {
                shape: Shape::Sphere {
                    center: Vector3::new(-0.5, 0.3, 4.2),
                    radius: 0.7,
                },
                texture: noise(seed, [0.6, 0.35, 0.3], 0.35, 0.15),
            },
            Primitive {
                shape: Shape::AxisBox {
                    min: Vector3::new(0.4, 0.2, 3.4),
                    max: Vector3::new(1.2, 1.0, 4.2),
                },
                texture: Texture::Ramp {
                    from: [0.2, 0.5, 0.8],
                    to: [0.9, 0.9, 0.3],
                    period: 0.2,
                },
            },
        ],
    };
    SceneSpec {
        primitives,
        background: [0.0; 3],
    }
}

/// Focal length equal to the width keeps the rig disparities integral.
pub fn preset_intrinsics(size: usize) -> Result<CameraIntrinsics> {
    CameraIntrinsics::new(size as f64, size as f64, (size as f64 - 1.0) / 2.0, (size as f64 - 1.0) / 2.0, size, size)
}

/// Training and held-out camera poses.
pub fn preset_cameras(preset: Preset, n_views: usize) -> Result<(Vec<CameraPose>, Vec<CameraPose>)> {
    if n_views < 2 {
        return Err(Error::Config(format!("need at least 2 training views, got {n_views}")));
    }
    if n_views > preset.max_views() {
        return Err(Error::Config(format!("preset {preset} supports at most {} views", preset.max_views())));
    }
    match preset {
        Preset::Orbit8 => {
            let target = Vector3::new(0.0, 0.4, 4.0);
            let up = Vector3::new(0.0, -1.0, 0.0);
            let spread = 0.9;
            let at = |a: f64| {
                let eye = target + Vector3::new(a.sin() * 3.6, -1.2, -a.cos() * 3.6);
                CameraPose::look_at(eye, target, up)
            };
            let step = spread / (n_views - 1) as f64;
            let train = (0..n_views).map(|i| at(-spread / 2.0 + i as f64 * step)).collect::<Result<Vec<_>>>()?;
            let test = [0.5, n_views as f64 / 2.0 - 0.5, n_views as f64 - 1.5]
                .into_iter()
                .map(|f| at(-spread / 2.0 + f * step))
                .collect::<Result<Vec<_>>>()?;
            Ok((train, test))
        }
        _ => {
            let cam = |x: f64, y: f64| CameraPose::from_center(Matrix3::identity(), Vector3::new(x, y, 0.0));
            let train = TRAIN_LATTICE[..n_views]
                .iter()
                .map(|&(x, y)| cam(2.0 * BASELINE * x, 2.0 * BASELINE * y))
                .collect::<Result<Vec<_>>>()?;
            let test = TEST_OFFSETS
                .iter()
                .map(|&(x, y)| cam(BASELINE * x, BASELINE * y))
                .collect::<Result<Vec<_>>>()?;
            Ok((train, test))
        }
    }
}

/// Illumination that differs per view: the light swings around the optical
/// axis and the exposure offset alternates.
pub fn view_lighting(index: usize) -> Lighting {
    let a = index as f64 * 2.1;
    Lighting {
        direction: Vector3::new(0.6 * a.cos(), 0.6 * a.sin(), -1.0),
        ambient: 0.35,
        diffuse: 0.75,
        offset: [0.0, 0.12, -0.08][index % 3],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    pub size: usize,
    pub lighting: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            size: 64,
            lighting: false,
        }
    }
}

/// Ray-traces a dataset: training views get ids `0..n_views`, held-out views
/// follow. Values are quantized exactly as saving would.
pub fn generate(preset: Preset, n_views: usize, seed: u64, opts: &GenOptions) -> Result<(Dataset, SceneSpec)> {
    let scene = preset_scene(preset, seed);
    let k = preset_intrinsics(opts.size)?;
    let (train, test) = preset_cameras(preset, n_views)?;
    let mut views = Vec::new();
    for (id, pose) in train.iter().chain(&test).enumerate() {
        let light = opts.lighting.then(|| view_lighting(id));
        let gt = raytrace_view(&scene, &k, pose, light.as_ref());
        let mut view = View {
            id,
            k,
            pose: *pose,
            rgb: gt.rgb,
            depth: Some(gt.depth),
        };
        quantize_view(&mut view);
        views.push(view);
    }
    let split = Split {
        train: (0..train.len()).collect(),
        test: (train.len()..train.len() + test.len()).collect(),
    };
    Ok((Dataset::new(views, split)?, scene))
}
