//! Curriculum training: base photometric fitting, then geometric
//! regularization of rendered depth, then virtual-view supervision.

mod adam;
mod config;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::{ActiveLosses, LearningRates, MpcSignal, TrainConfig};

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::appearance::{
    depth_error, reliability_mask, sample_virtual_pose, synthesize_virtual_view, virtual_view_loss, SynthesisSource,
};
use crate::dataset::{Dataset, View};
use crate::error::{Error, Result};
use crate::geometry::relative_transform;
use crate::georeg::{default_k, edge_aware_smoothness, extract_features, mpc_loss, Metric};
use crate::harness::init_cloud;
use crate::metrics::{photometric_loss, psnr};
use crate::raster::{Mask, Raster};
use crate::renderer::{
    backward, densify_and_prune, render, render_traced, CloudGradients, DensifyThresholds, GaussianCloud, GradStats,
    ParamClass, RenderOptions, Upstream,
};
use crate::rng::stream;
use crate::warp::{forward_warp_pixels, inverse_warp_with};

/// Rendered pixels at least this opaque carry usable depth.
pub const ALPHA_THRESHOLD: f64 = 0.5;

/// Virtual sampling radius relative to the scene radius.
pub const VIRTUAL_RADIUS_FACTOR: f64 = 0.15;

/// Per-term losses of one iteration. `l_consis` is a fixed zero stand-in for
/// the binocular term, which is not modelled.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct LossBreakdown {
    pub l_3dgs: f64,
    pub l_mpc: f64,
    pub l_smooth: f64,
    pub l_app: f64,
    pub l_consis: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum of the terms under `config`.
    pub fn combine(&self, config: &TrainConfig) -> f64 {
        self.l_3dgs + config.lambda_mpc * self.l_mpc + config.lambda_smooth * self.l_smooth + config.lambda_app * self.l_app
    }
}

/// Everything about the training views that stays fixed during optimization.
#[derive(Debug, Clone)]
pub struct TrainContext<'a> {
    pub views: Vec<&'a View>,
    /// Frozen descriptors of each training image.
    pub features: Vec<Raster>,
    pub k: usize,
    pub m: usize,
    pub scene_center: Vector3<f64>,
    pub scene_radius: f64,
    pub render_options: RenderOptions,
}

impl<'a> TrainContext<'a> {
    /// `features` defaults to descriptors extracted from the training images.
    pub fn new(dataset: &'a Dataset, config: &TrainConfig, cloud: &GaussianCloud, features: Option<Vec<Raster>>) -> Result<Self> {
        config.validate()?;
        let views = dataset.train_views();
        if views.len() < 2 {
            return Err(Error::Config(format!("need at least 2 training views, found {}", views.len())));
        }
        let features = match features {
            Some(f) => {
                if f.len() != views.len() || f.iter().zip(&views).any(|(f, v)| !f.same_size(&v.rgb)) {
                    return Err(Error::Config("feature maps do not match the training views".into()));
                }
                f
            }
            None => views.par_iter().map(|v| extract_features(&v.rgb)).collect(),
        };
        let sources = views.len() - 1;
        let k = config.k.unwrap_or(default_k(views.len())).min(sources);
        let m = config.m.unwrap_or(default_k(views.len())).min(sources);
        let (scene_center, scene_radius) = scene_sphere(cloud, &views);
        Ok(Self {
            views,
            features,
            k,
            m,
            scene_center,
            scene_radius,
            render_options: RenderOptions::default(),
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

/// Centre and radius (95th percentile distance) of the cloud, falling back to
/// the camera centres for an empty cloud.
fn scene_sphere(cloud: &GaussianCloud, views: &[&View]) -> (Vector3<f64>, f64) {
    let points: Vec<Vector3<f64>> = if cloud.is_empty() {
        views.iter().map(|v| v.pose.center()).collect()
    } else {
        (0..cloud.len()).map(|i| cloud.position(i)).collect()
    };
    let center = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut d: Vec<f64> = points.iter().map(|p| (p - center).norm()).collect();
    d.sort_by(f64::total_cmp);
    let radius = d[((d.len() - 1) as f64 * 0.95) as usize];
    (center, radius.max(1e-3))
}

fn check(iter: usize, term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { iter, term })
    }
}

/// Losses of one iteration and the gradient of their weighted sum.
///
/// The reference view is `iter mod n`; every other training view is a source.
/// Consistency and smoothness reach the cloud through the rendered reference
/// depth, the virtual-view term through a render at a sampled pose.
pub fn total_loss_and_gradients<R: Rng>(
    cloud: &GaussianCloud,
    ctx: &TrainContext<'_>,
    config: &TrainConfig,
    iter: usize,
    rng: &mut R,
) -> Result<(LossBreakdown, CloudGradients)> {
    let active = config.schedule(iter);
    let n = ctx.n_views();
    let r = iter % n;
    let view = ctx.views[r];
    let (out, trace) = render_traced(cloud, &view.k, &view.pose, &ctx.render_options);
    let (l_3dgs, d_rgb) = photometric_loss(&out.rgb, &view.rgb, config.lambda_dssim);
    let mut losses = LossBreakdown {
        l_3dgs: check(iter, "l_3dgs", l_3dgs)?,
        ..Default::default()
    };
    let mut upstream = Upstream::rgb(d_rgb);

    if active.geometric && (config.lambda_mpc > 0.0 || config.lambda_smooth > 0.0) {
        let support = Mask::threshold(&out.alpha, ALPHA_THRESHOLD);
        let mut d_depth = Raster::zeros(view.k.width, view.k.height, 1);
        if config.lambda_mpc > 0.0 {
            let (reference, metric) = match config.mpc_signal {
                MpcSignal::Feature => (&ctx.features[r], Metric::Cosine),
                MpcSignal::Rgb => (&view.rgb, Metric::L1),
            };
            let warped: Vec<_> = (0..n)
                .filter(|&j| j != r)
                .map(|j| {
                    let src = ctx.views[j];
                    let warps = forward_warp_pixels(&out.depth, &view.k, &relative_transform(&view.pose, &src.pose));
                    let map = match config.mpc_signal {
                        MpcSignal::Feature => &ctx.features[j],
                        MpcSignal::Rgb => &src.rgb,
                    };
                    inverse_warp_with(map, &warps, view.k.width, view.k.height)
                })
                .collect();
            let mpc = mpc_loss(reference, &warped, Some(&support), ctx.k, metric)?;
            losses.l_mpc = check(iter, "l_mpc", mpc.value)?;
            accumulate(&mut d_depth, &mpc.d_depth, config.lambda_mpc);
        }
        if config.lambda_smooth > 0.0 {
            let s = edge_aware_smoothness(&out.depth, &view.rgb, Some(&support), config.alpha_edge)?;
            losses.l_smooth = check(iter, "l_smooth", s.value)?;
            accumulate(&mut d_depth, &s.d_depth, config.lambda_smooth);
        }
        upstream.depth = Some(d_depth);
    }
    let mut grads = backward(cloud, &trace, &upstream)?;

    if active.appearance && config.lambda_app > 0.0 && config.n_virtual > 0 {
        let (l_app, g) = appearance_term(cloud, ctx, config, &out.depth, &out.alpha, r, rng)?;
        losses.l_app = check(iter, "l_app", l_app)?;
        grads.add_scaled(&g, config.lambda_app);
    }
    losses.total = check(iter, "total", losses.combine(config))?;
    Ok((losses, grads))
}

fn accumulate(into: &mut Raster, from: &Raster, weight: f64) {
    for (a, b) in into.data_mut().iter_mut().zip(from.data()) {
        *a += weight * b;
    }
}

/// Per-view masks of pixels allowed to synthesize virtual targets: opaque
/// enough and (unless the filter is disabled) cycle-consistent.
pub fn synthesis_masks(depths: &[Raster], alphas: &[Raster], ctx: &TrainContext<'_>, config: &TrainConfig) -> Result<Vec<Mask>> {
    let n = ctx.n_views();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let support = Mask::threshold(&alphas[i], ALPHA_THRESHOLD);
            if config.force_reliable {
                return Ok(support);
            }
            let vi = ctx.views[i];
            let errors: Vec<_> = (0..n)
                .filter(|&j| j != i)
                .map(|j| depth_error(&depths[i], &depths[j], &vi.k, &relative_transform(&vi.pose, &ctx.views[j].pose)))
                .collect();
            let rel = reliability_mask(&errors, &depths[i], Some(&support), ctx.m, config.tau_factor)?;
            Ok(rel.mask.and(&support))
        })
        .collect()
}

/// Mean virtual-view loss and its (unweighted) gradient.
fn appearance_term<R: Rng>(
    cloud: &GaussianCloud,
    ctx: &TrainContext<'_>,
    config: &TrainConfig,
    ref_depth: &Raster,
    ref_alpha: &Raster,
    r: usize,
    rng: &mut R,
) -> Result<(f64, CloudGradients)> {
    let renders: Vec<(Raster, Raster)> = ctx
        .views
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            if i == r {
                (ref_depth.clone(), ref_alpha.clone())
            } else {
                let o = render(cloud, &v.k, &v.pose);
                (o.depth, o.alpha)
            }
        })
        .collect();
    let (depths, alphas): (Vec<_>, Vec<_>) = renders.into_iter().unzip();
    let masks = synthesis_masks(&depths, &alphas, ctx, config)?;
    let sources: Vec<SynthesisSource<'_>> = ctx
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| SynthesisSource {
            k: &v.k,
            pose: &v.pose,
            rgb: &v.rgb,
            depth: &depths[i],
            mask: &masks[i],
        })
        .collect();
    let poses: Vec<_> = ctx.views.iter().map(|v| v.pose).collect();
    let radius = config.virtual_radius.unwrap_or(VIRTUAL_RADIUS_FACTOR * ctx.scene_radius);
    let k = ctx.views[0].k;
    let mut total = 0.0;
    let mut grads = CloudGradients::zeros(cloud.len());
    let share = 1.0 / config.n_virtual as f64;
    for _ in 0..config.n_virtual {
        let pose = sample_virtual_pose(&poses, radius, &ctx.scene_center, &k, rng)?;
        let target = synthesize_virtual_view(&sources, &pose, &k);
        if target.mask.is_empty() {
            continue;
        }
        let (out, trace) = render_traced(cloud, &k, &pose, &ctx.render_options);
        let (loss, d_rgb) = virtual_view_loss(&target.image, &target.mask, &out.rgb);
        total += loss.value * share;
        let g = backward(cloud, &trace, &Upstream::rgb(d_rgb))?;
        grads.add_scaled(&g, share);
    }
    Ok((total, grads))
}

/// One logged point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub losses: LossBreakdown,
    pub psnr_train: f64,
    pub psnr_test: f64,
    pub n_gaussians: usize,
}

pub const METRICS_HEADER: &str = "iter,l_3dgs,l_mpc,l_smooth,l_app,total,psnr_train,psnr_test,n_gaussians";

impl LogRow {
    pub fn csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter, l.l_3dgs, l.l_mpc, l.l_smooth, l.l_app, l.total, self.psnr_train, self.psnr_test, self.n_gaussians
        )
    }
}

pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    pub log: Vec<LogRow>,
    /// Loss breakdown of every iteration.
    pub history: Vec<LossBreakdown>,
}

/// Mean PSNR of the renders of `views` (colours clamped to [0, 1]).
pub fn mean_psnr(cloud: &GaussianCloud, views: &[&View]) -> f64 {
    if views.is_empty() {
        return 0.0;
    }
    let p: Vec<f64> = views
        .par_iter()
        .map(|v| psnr(&render(cloud, &v.k, &v.pose).rgb.clamped(0.0, 1.0), &v.rgb))
        .collect();
    p.iter().sum::<f64>() / p.len() as f64
}

/// Initial cloud lifted from the training views' ground-truth depth.
pub fn initial_cloud(dataset: &Dataset, config: &TrainConfig) -> Result<GaussianCloud> {
    let views = dataset.train_views();
    let depths: Vec<&Raster> = views
        .iter()
        .map(|v| {
            v.depth
                .as_ref()
                .ok_or_else(|| Error::Config(format!("training view {} has no depth to initialize from", v.id)))
        })
        .collect::<Result<_>>()?;
    init_cloud(&views, &depths, config.init_points, config.init_noise, &mut stream(config.seed, "init"))
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let cloud = initial_cloud(dataset, config)?;
    train_from(dataset, config, cloud, None)
}

/// Runs the full schedule starting from `cloud`.
pub fn train_from(dataset: &Dataset, config: &TrainConfig, mut cloud: GaussianCloud, features: Option<Vec<Raster>>) -> Result<TrainOutcome> {
    cloud.validate()?;
    let ctx = TrainContext::new(dataset, config, &cloud, features)?;
    let test_views = dataset.test_views();
    let mut adam = AdamState::new(&cloud);
    let mut stats = GradStats::new(cloud.len());
    let mut rng = stream(config.seed, "virtual");
    let mut log = Vec::new();
    let mut history = Vec::with_capacity(config.total_iters);
    let total = config.total_iters;
    for iter in 0..total {
        let (losses, grads) = total_loss_and_gradients(&cloud, &ctx, config, iter, &mut rng)?;
        if !grads.max_abs().is_finite() {
            return Err(Error::NonFinite { iter, term: "gradient" });
        }
        history.push(losses);
        if iter % config.log_every == 0 || iter + 1 == total {
            log.push(LogRow {
                iter,
                losses,
                psnr_train: mean_psnr(&cloud, &ctx.views),
                psnr_test: mean_psnr(&cloud, &test_views),
                n_gaussians: cloud.len(),
            });
        }
        let lr = learning_rates(config, iter, ctx.scene_radius);
        adam_step(&mut cloud, &grads, &mut adam, &lr);
        if config.densify {
            stats.record(&grads);
            if iter > 0 && iter < config.densify_until && (iter + 1) % config.densify_every == 0 {
                let thresholds = DensifyThresholds {
                    grad: config.densify_grad,
                    scale: 0.05 * ctx.scene_radius,
                    ..Default::default()
                };
                let d = densify_and_prune(&cloud, &stats, &thresholds);
                adam = adam.remap(&d.parents);
                cloud = d.cloud;
                stats = GradStats::new(cloud.len());
            }
        }
    }
    Ok(TrainOutcome { cloud, log, history })
}

/// Per-class learning rates at `iter`; the position rate decays
/// exponentially and is scaled by the scene radius.
pub fn learning_rates(config: &TrainConfig, iter: usize, scene_radius: f64) -> impl Fn(ParamClass) -> f64 {
    let lr = config.lr;
    let t = if config.total_iters > 1 {
        iter as f64 / (config.total_iters - 1) as f64
    } else {
        0.0
    };
    let position = if lr.position > 0.0 && lr.position_final > 0.0 {
        (lr.position.ln() * (1.0 - t) + lr.position_final.ln() * t).exp()
    } else {
        lr.position
    } * scene_radius;
    move |class| match class {
        ParamClass::Position => position,
        ParamClass::Rotation => lr.rotation,
        ParamClass::Scale => lr.scale,
        ParamClass::Opacity => lr.opacity,
        ParamClass::Color => lr.color,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_combines_with_weights() {
        let l = LossBreakdown {
            l_3dgs: 0.5,
            l_mpc: 0.2,
            l_smooth: 0.3,
            l_app: 0.1,
            l_consis: 0.0,
            total: 0.0,
        };
        assert!((l.combine(&TrainConfig::default()) - (0.5 + 0.02 + 0.003 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn position_rate_decays_to_final() {
        let c = TrainConfig::default();
        let first = learning_rates(&c, 0, 2.0)(ParamClass::Position);
        let last = learning_rates(&c, c.total_iters - 1, 2.0)(ParamClass::Position);
        assert!((first - 3.2e-4).abs() < 1e-15);
        assert!((last - 3.2e-6).abs() < 1e-15);
        assert_eq!(learning_rates(&c, 5, 2.0)(ParamClass::Color), 2.5e-3);
    }

    #[test]
    fn csv_header() {
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }
}
