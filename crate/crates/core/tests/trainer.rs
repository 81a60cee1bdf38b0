mod common;

use common::{probe, ProbeTally};
use sparse_splat::dataset::Dataset;
use sparse_splat::harness::{generate, GenOptions, Preset};
use sparse_splat::renderer::{CloudGradients, GaussianCloud, ParamClass};
use sparse_splat::rng::stream;
use sparse_splat::trainer::{initial_cloud, total_loss_and_gradients, train, train_from, TrainConfig, TrainContext};

fn small_dataset(preset: Preset) -> Dataset {
    generate(preset, 3, 0, &GenOptions { size: 24, lighting: false }).unwrap().0
}

fn config(total: usize) -> TrainConfig {
    TrainConfig {
        total_iters: total,
        stage2_start: total / 3,
        stage3_start: 2 * total / 3,
        init_points: 300,
        init_noise: 0.1,
        log_every: 10,
        ..Default::default()
    }
}

fn grads_at(cloud: &GaussianCloud, ds: &Dataset, cfg: &TrainConfig, iter: usize) -> (f64, CloudGradients) {
    let ctx = TrainContext::new(ds, cfg, cloud, None).unwrap();
    let (l, g) = total_loss_and_gradients(cloud, &ctx, cfg, iter, &mut stream(cfg.seed, "virtual")).unwrap();
    (l.total, g)
}

#[test]
fn logged_totals_recombine_from_terms() {
    let ds = small_dataset(Preset::Occluder);
    let cfg = config(60);
    let out = train(&ds, &cfg).unwrap();
    assert_eq!(out.history.len(), 60);
    for (i, l) in out.history.iter().enumerate() {
        let manual = l.l_3dgs + 0.1 * l.l_mpc + 0.01 * l.l_smooth + 1.0 * l.l_app;
        assert!((l.total - manual).abs() <= 1e-12, "iteration {i}");
        assert_eq!(l.l_consis, 0.0);
    }
    assert!(out.history[45].l_app > 0.0 && out.history[25].l_mpc > 0.0);
    assert_eq!(out.history[5].l_mpc, 0.0);
    let logged: Vec<usize> = out.log.iter().map(|r| r.iter).collect();
    assert_eq!(logged, vec![0, 10, 20, 30, 40, 50, 59]);
}

/// The gradient is affine in the loss weights.
#[test]
fn gradient_is_linear_in_the_weights() {
    let ds = small_dataset(Preset::Occluder);
    let base = config(30);
    let cloud = initial_cloud(&ds, &base).unwrap();
    let at = |s: f64| {
        let cfg = TrainConfig {
            lambda_mpc: 0.1 * s,
            lambda_smooth: 0.01 * s,
            lambda_app: s,
            ..base.clone()
        };
        grads_at(&cloud, &ds, &cfg, 25).1
    };
    let (g0, g1, g2) = (at(0.0), at(1.0), at(2.0));
    let stage1 = TrainConfig {
        stage2_start: 1000,
        stage3_start: 1000,
        ..base.clone()
    };
    let gb = grads_at(&cloud, &ds, &stage1, 25).1;
    for class in ParamClass::ALL {
        assert_eq!(g0.params(class), gb.params(class));
        for ((a, b), c) in g0.params(class).iter().zip(g1.params(class)).zip(g2.params(class)) {
            let expect = 2.0 * (b - a);
            assert!(((c - a) - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }
}

#[test]
fn total_gradient_matches_differences() {
    let ds = small_dataset(Preset::Plane3);
    let cfg = TrainConfig {
        stage2_start: 0,
        stage3_start: 0,
        lambda_dssim: 0.0,
        init_points: 40,
        ..config(10)
    };
    let cloud = initial_cloud(&ds, &cfg).unwrap();
    let (_, g) = grads_at(&cloud, &ds, &cfg, 1);
    let mut tally = ProbeTally::default();
    for class in [ParamClass::Position, ParamClass::Opacity, ParamClass::Color] {
        for idx in (0..cloud.params(class).len()).step_by(7) {
            let mut f = |h: f64| {
                let mut c = cloud.clone();
                c.params_mut(class)[idx] += h;
                grads_at(&c, &ds, &cfg, 1).0
            };
            probe(g.params(class)[idx], 1e-6, &mut f, &mut tally, &format!("{class:?}[{idx}]"));
        }
    }
    assert_eq!(tally.failed, 0, "{tally:?}");
    assert!(tally.passed >= 20, "{tally:?}");
}

#[test]
fn training_reduces_the_photometric_loss() {
    let ds = small_dataset(Preset::Plane3);
    let out = train(&ds, &config(90)).unwrap();
    let first: f64 = out.history[..3].iter().map(|l| l.l_3dgs).sum();
    let last: f64 = out.history[87..].iter().map(|l| l.l_3dgs).sum();
    assert!(last < 0.7 * first, "{first} -> {last}");
    assert!(out.log.last().unwrap().psnr_train > out.log[0].psnr_train);
}

#[test]
fn runs_are_deterministic() {
    let ds = small_dataset(Preset::Occluder);
    let cfg = TrainConfig {
        deterministic: true,
        ..config(40)
    };
    let (a, b) = (train(&ds, &cfg).unwrap(), train(&ds, &cfg).unwrap());
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.history, b.history);
    let other = train(&ds, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.cloud, other.cloud);
}

#[test]
fn zero_iterations_return_the_initial_cloud() {
    let ds = small_dataset(Preset::Plane3);
    let cfg = config(0);
    let out = train(&ds, &cfg).unwrap();
    assert_eq!(out.cloud, initial_cloud(&ds, &cfg).unwrap());
    assert!(out.log.is_empty() && out.history.is_empty());
}

/// With a zero threshold no pixel passes the cycle check, so no virtual
/// target exists and training follows the run without the virtual term.
#[test]
fn empty_synthesis_masks_leave_the_trajectory_unchanged() {
    let ds = small_dataset(Preset::Occluder);
    let cfg = TrainConfig {
        tau_factor: 0.0,
        ..config(30)
    };
    let cloud = initial_cloud(&ds, &cfg).unwrap();
    let a = train_from(&ds, &cfg, cloud.clone(), None).unwrap();
    let b = train_from(&ds, &TrainConfig { lambda_app: 0.0, ..cfg }, cloud, None).unwrap();
    assert_eq!(a.cloud, b.cloud);
    assert!(a.history.iter().all(|l| l.l_app == 0.0));
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = small_dataset(Preset::Plane3);
    let bad = TrainConfig {
        stage2_start: 20,
        stage3_start: 10,
        ..config(30)
    };
    assert!(train(&ds, &bad).is_err());
    let one_view = Dataset::new(vec![ds.views[0].clone()], sparse_splat::dataset::Split { train: vec![ds.views[0].id], test: vec![] }).unwrap();
    assert!(train(&one_view, &config(5)).is_err());
}
