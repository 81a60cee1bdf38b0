//! Command implementations behind the `sparse-splat` binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::appearance::{depth_error as cycle_error, reliability_mask};
use crate::dataset::{write_json, Dataset, View};
use crate::error::{Error, Result};
use crate::formats::{read_checkpoint, write_checkpoint, write_depth, write_png_gray, write_png_mask, write_png_rgb};
use crate::geometry::relative_transform;
use crate::harness::{generate, GenOptions, Preset};
use crate::metrics::{depth_error, psnr, ssim};
use crate::raster::{Mask, Raster};
use crate::renderer::{render, GaussianCloud};
use crate::trainer::{metrics_csv, train, TrainConfig, TrainOutcome, ALPHA_THRESHOLD};
use crate::warp::{forward_warp_pixels, inverse_warp_with};

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running a valid command.
pub const EXIT_FAILURE: i32 = 1;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// A training run: where the data lives, where results go, and the trainer
/// settings, all in one flat JSON document.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Expected image side length; checked against the dataset when set.
    pub image_size: Option<usize>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("run"),
            image_size: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_json(&self) -> Value {
        let mut doc = serde_json::to_value(&self.train).expect("config serializes");
        let map = doc.as_object_mut().expect("config is an object");
        map.insert("dataset".into(), Value::String(self.dataset.display().to_string()));
        map.insert("output".into(), Value::String(self.output.display().to_string()));
        map.insert("image_size".into(), self.image_size.map_or(Value::Null, Value::from));
        doc
    }

    /// Builds a config from a JSON document, rejecting unknown keys by name.
    pub fn from_json(doc: Value) -> Result<Self> {
        let Value::Object(mut map) = doc else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let unknown = unknown_keys(&map, &Self::default().to_json());
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let mut run = Self::default();
        if let Some(v) = map.remove("dataset") {
            run.dataset = path_value(v, "dataset")?;
        }
        if let Some(v) = map.remove("output") {
            run.output = path_value(v, "output")?;
        }
        if let Some(v) = map.remove("image_size") {
            run.image_size = serde_json::from_value(v).map_err(|e| Error::Config(format!("image_size: {e}")))?;
        }
        run.train = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        run.train.validate()?;
        Ok(run)
    }

    /// Reads a config file (or starts from defaults) and applies `key=value`
    /// overrides; dotted keys reach nested tables, values parse as JSON and
    /// fall back to strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_json(doc)
    }
}

fn path_value(v: Value, key: &str) -> Result<PathBuf> {
    match v {
        Value::String(s) => Ok(PathBuf::from(s)),
        other => Err(Error::Config(format!("{key} must be a string path, got {other}"))),
    }
}

/// Dotted names of keys in `doc` that do not exist in `reference`.
fn unknown_keys(doc: &Map<String, Value>, reference: &Value) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in doc {
        match reference.get(k) {
            None => out.push(k.clone()),
            Some(Value::Object(_)) => {
                if let Value::Object(inner) = v {
                    out.extend(unknown_keys(inner, &reference[k]).into_iter().map(|s| format!("{k}.{s}")));
                }
            }
            Some(_) => {}
        }
    }
    out
}

pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key} does not address a table entry")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Generates a preset dataset into `out_dir`.
pub fn cmd_gen(preset: Preset, n_views: usize, out_dir: &Path, seed: u64, opts: &GenOptions) -> Result<Dataset> {
    if n_views < 2 {
        return Err(Error::Config(format!("need at least 2 training views, got {n_views}")));
    }
    let (dataset, _) = generate(preset, n_views, seed, opts)?;
    dataset.save(out_dir)?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub id: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute depth error over ground-truth surface pixels.
    pub depth_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub depth_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_view: Vec<ViewMetrics>,
    pub mean: MeanMetrics,
}

/// Renders `views` and scores them against their images and depths.
pub fn evaluate(cloud: &GaussianCloud, views: &[&View]) -> EvalReport {
    let mut per_view = Vec::with_capacity(views.len());
    for v in views {
        let out = render(cloud, &v.k, &v.pose);
        let rgb = out.rgb.clamped(0.0, 1.0);
        per_view.push(ViewMetrics {
            id: v.id,
            psnr: psnr(&rgb, &v.rgb),
            ssim: ssim(&rgb, &v.rgb),
            depth_error: v.depth.as_ref().map(|d| depth_error(&out.depth, d)),
        });
    }
    let n = per_view.len().max(1) as f64;
    let depths: Vec<f64> = per_view.iter().filter_map(|m| m.depth_error).collect();
    let mean = MeanMetrics {
        psnr: per_view.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: per_view.iter().map(|m| m.ssim).sum::<f64>() / n,
        depth_error: (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64),
    };
    EvalReport { per_view, mean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub per_view: Vec<ViewMetrics>,
    pub mean: MeanMetrics,
    pub psnr_train: f64,
    pub iterations: usize,
    pub n_gaussians: usize,
}

fn check_image_size(dataset: &Dataset, size: Option<usize>) -> Result<()> {
    let Some(size) = size else { return Ok(()) };
    match dataset.views.iter().find(|v| v.k.width != size || v.k.height != size) {
        Some(v) => Err(Error::Config(format!(
            "image_size is {size} but view {} is {}x{}",
            v.id, v.k.width, v.k.height
        ))),
        None => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains on the configured dataset and writes every run artifact.
pub fn cmd_train(config: &RunConfig) -> Result<(TrainOutcome, TrainSummary)> {
    config.train.validate()?;
    let dataset = Dataset::load(&config.dataset)?;
    check_image_size(&dataset, config.image_size)?;
    let outcome = train(&dataset, &config.train)?;

    let out = &config.output;
    ensure_dir(&out.join("renders"))?;
    ensure_dir(&out.join("depth"))?;
    let model = out.join("model.icogs");
    write_checkpoint(&model, &outcome.cloud)?;
    write_json(&out.join("config.json"), &config.to_json())?;
    let csv = out.join("metrics.csv");
    fs::write(&csv, metrics_csv(&outcome.log)).map_err(|e| Error::io(&csv, e))?;

    // score what was saved, so evaluating the checkpoint later reproduces the summary
    let cloud = read_checkpoint(&model)?;
    let test = dataset.test_views();
    for v in &test {
        let r = render(&cloud, &v.k, &v.pose);
        write_png_rgb(&out.join(format!("renders/test_{}.png", v.id)), &r.rgb)?;
        write_depth(&out.join(format!("depth/test_{}.icod", v.id)), &r.depth)?;
    }
    let report = evaluate(&cloud, &test);
    let summary = TrainSummary {
        per_view: report.per_view,
        mean: report.mean,
        psnr_train: evaluate(&cloud, &dataset.train_views()).mean.psnr,
        iterations: config.train.total_iters,
        n_gaussians: cloud.len(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok((outcome, summary))
}

pub fn cmd_eval(checkpoint: &Path, dataset_dir: &Path) -> Result<EvalReport> {
    let cloud = read_checkpoint(checkpoint)?;
    let dataset = Dataset::load(dataset_dir)?;
    Ok(evaluate(&cloud, &dataset.test_views()))
}

/// Which depth maps the warp diagnostics use.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthSource {
    GroundTruth,
    Checkpoint(PathBuf),
}

/// Products of [`cmd_warp_debug`], also written to disk as images.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpDebug {
    /// Source image resampled into the reference view.
    pub warped: Raster,
    pub valid: Mask,
    /// Round-trip depth error per reference pixel (0 where invalid).
    pub cycle_error: Raster,
    pub reliable: Mask,
    pub tau_d: f64,
}

/// Writes `warped.png`, `mask.png`, `cycle_error.png` (white at 2·τ_d and
/// above), `cycle_error.icod` and `reliable.png` into `out_dir`.
pub fn cmd_warp_debug(dataset_dir: &Path, ref_id: usize, src_id: usize, source: &DepthSource, tau_factor: f64, out_dir: &Path) -> Result<WarpDebug> {
    let dataset = Dataset::load(dataset_dir)?;
    let view = |id: usize| dataset.view(id).ok_or_else(|| Error::Config(format!("no view with id {id} in {}", dataset_dir.display())));
    let (vr, vs) = (view(ref_id)?, view(src_id)?);
    let (d_ref, d_src, support) = match source {
        DepthSource::GroundTruth => {
            let gt = |v: &View| v.depth.clone().ok_or_else(|| Error::Config(format!("view {} has no ground-truth depth", v.id)));
            let d_ref = gt(vr)?;
            let support = Mask::threshold(&d_ref, 0.0);
            (d_ref, gt(vs)?, support)
        }
        DepthSource::Checkpoint(path) => {
            let cloud = read_checkpoint(path)?;
            let r = render(&cloud, &vr.k, &vr.pose);
            let s = render(&cloud, &vs.k, &vs.pose);
            (r.depth, s.depth, Mask::threshold(&r.alpha, ALPHA_THRESHOLD))
        }
    };
    let rel = relative_transform(&vr.pose, &vs.pose);
    let warps = forward_warp_pixels(&d_ref, &vr.k, &rel);
    let warped = inverse_warp_with(&vs.rgb, &warps, vr.k.width, vr.k.height);
    let errors = cycle_error(&d_ref, &d_src, &vr.k, &rel);
    let rel_mask = reliability_mask(std::slice::from_ref(&errors), &d_ref, Some(&support), 1, tau_factor)?;
    let reliable = rel_mask.mask.and(&support);

    ensure_dir(out_dir)?;
    write_png_rgb(&out_dir.join("warped.png"), &warped.values)?;
    write_png_mask(&out_dir.join("mask.png"), &warped.mask)?;
    write_png_gray(&out_dir.join("cycle_error.png"), &errors.error, 2.0 * rel_mask.tau_d)?;
    write_depth(&out_dir.join("cycle_error.icod"), &errors.error)?;
    write_png_mask(&out_dir.join("reliable.png"), &reliable)?;
    Ok(WarpDebug {
        warped: warped.values,
        valid: warped.mask,
        cycle_error: errors.error,
        reliable,
        tau_d: rel_mask.tau_d,
    })
}
