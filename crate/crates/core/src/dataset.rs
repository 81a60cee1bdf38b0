//! Posed images on disk: `cameras.json`, `images/view_{id}.png`,
//! optional `depth/view_{id}.icod`, and `split.json`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_depth, read_png_rgb, write_depth, write_png_rgb};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: usize,
    pub k: CameraIntrinsics,
    pub pose: CameraPose,
    /// RGB in [0, 1].
    pub rgb: Raster,
    /// Ground-truth depth (0 = no surface), when known.
    pub depth: Option<Raster>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    id: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub split: Split,
}

impl Dataset {
    pub fn new(views: Vec<View>, split: Split) -> Result<Self> {
        let ds = Self { views, split };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for (i, v) in self.views.iter().enumerate() {
            if self.views[..i].iter().any(|o| o.id == v.id) {
                return Err(Error::Config(format!("duplicate view id {}", v.id)));
            }
            if v.rgb.width() != v.k.width || v.rgb.height() != v.k.height || v.rgb.channels() != 3 {
                return Err(Error::Config(format!("view {}: image does not match its camera", v.id)));
            }
            if let Some(d) = &v.depth {
                if !d.same_size(&v.rgb) {
                    return Err(Error::Config(format!("view {}: depth size does not match image", v.id)));
                }
            }
        }
        for id in self.split.train.iter().chain(&self.split.test) {
            if self.view(*id).is_none() {
                return Err(Error::Config(format!("split refers to unknown view {id}")));
            }
        }
        Ok(())
    }

    pub fn view(&self, id: usize) -> Option<&View> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn train_views(&self) -> Vec<&View> {
        self.split.train.iter().filter_map(|&id| self.view(id)).collect()
    }

    pub fn test_views(&self) -> Vec<&View> {
        self.split.test.iter().filter_map(|&id| self.view(id)).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
        }
        let cameras: Vec<CameraRecord> = read_json(&dir.join("cameras.json"))?;
        let split: Split = read_json(&dir.join("split.json"))?;
        let mut views = Vec::with_capacity(cameras.len());
        for c in cameras {
            let k = CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)?;
            let pose = CameraPose::new(Matrix3::from_row_slice(&c.r), Vector3::from(c.t))?;
            let rgb = read_png_rgb(&dir.join(format!("images/view_{}.png", c.id)))?;
            let depth_path = dir.join(format!("depth/view_{}.icod", c.id));
            let depth = if depth_path.exists() { Some(read_depth(&depth_path)?) } else { None };
            views.push(View {
                id: c.id,
                k,
                pose,
                rgb,
                depth,
            });
        }
        Self::new(views, split)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cameras: Vec<CameraRecord> = self
            .views
            .iter()
            .map(|v| {
                let r = v.pose.rotation();
                CameraRecord {
                    id: v.id,
                    fx: v.k.fx,
                    fy: v.k.fy,
                    cx: v.k.cx,
                    cy: v.k.cy,
                    width: v.k.width,
                    height: v.k.height,
                    r: std::array::from_fn(|i| r[(i / 3, i % 3)]),
                    t: (*v.pose.translation()).into(),
                }
            })
            .collect();
        write_json(&dir.join("cameras.json"), &cameras)?;
        write_json(&dir.join("split.json"), &self.split)?;
        for v in &self.views {
            write_png_rgb(&dir.join(format!("images/view_{}.png", v.id)), &v.rgb)?;
            if let Some(d) = &v.depth {
                write_depth(&dir.join(format!("depth/view_{}.icod", v.id)), d)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rounds colours to 8 bits and depths to `f32`, exactly what a save/load
/// round trip produces.
pub fn quantize_view(view: &mut View) {
    view.rgb = view.rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    if let Some(d) = &mut view.depth {
        *d = d.map(|v| v as f32 as f64);
    }
}
