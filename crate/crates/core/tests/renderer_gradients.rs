mod common;

use common::{probe, random_camera as camera, random_cloud, ProbeTally};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_splat::raster::Raster;
use sparse_splat::renderer::{backward, render, render_traced, ParamClass, RenderOptions, RenderOutput, Upstream};

const H: f64 = 1e-4;

struct Weights {
    rgb: Raster,
    depth: Raster,
    alpha: Raster,
}

fn loss(out: &RenderOutput, w: &Weights) -> f64 {
    let dot = |a: &Raster, b: &Raster| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.rgb, &w.rgb) + dot(&out.depth, &w.depth) + dot(&out.alpha, &w.alpha)
}

/// Random linear functional of rgb, depth and alpha against every parameter.
fn check_scene(seed: u64, use_rgb: bool, use_depth: bool, use_alpha: bool) -> [(ParamClass, ProbeTally); 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, 5);
    let (k, pose) = camera(&mut rng);
    let mut pick = |on: bool, c: usize| {
        if on {
            Raster::from_fn(k.width, k.height, c, |_, _, _| rng.random_range(-1.0..1.0))
        } else {
            Raster::zeros(k.width, k.height, c)
        }
    };
    let w = Weights {
        rgb: pick(use_rgb, 3),
        depth: pick(use_depth, 1),
        alpha: pick(use_alpha, 1),
    };
    let opts = RenderOptions::default();
    let (_, trace) = render_traced(&cloud, &k, &pose, &opts);
    let up = Upstream {
        rgb: Some(w.rgb.clone()),
        depth: Some(w.depth.clone()),
        alpha: Some(w.alpha.clone()),
    };
    let grads = backward(&cloud, &trace, &up).unwrap();

    ParamClass::ALL.map(|class| {
        let mut tally = ProbeTally::default();
        for idx in 0..cloud.params(class).len() {
            let analytic = grads.params(class)[idx];
            let mut f = |delta: f64| {
                let mut c = cloud.clone();
                c.params_mut(class)[idx] += delta;
                loss(&render(&c, &k, &pose), &w)
            };
            probe(analytic, H, &mut f, &mut tally, &format!("seed {seed} {class:?}[{idx}]"));
        }
        (class, tally)
    })
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let mut totals: Vec<(ParamClass, ProbeTally)> = ParamClass::ALL.iter().map(|&c| (c, ProbeTally::default())).collect();
    for seed in 0..20 {
        for (i, (_, t)) in check_scene(seed, true, true, true).into_iter().enumerate() {
            totals[i].1.merge(t);
        }
    }
    for (class, t) in &totals {
        println!("{class:?}: {t:?}");
        assert_eq!(t.failed, 0, "{class:?}");
        assert!(t.passed >= 100, "{class:?}: {t:?}");
    }
}

#[test]
fn sum_rgb_gradients_match_finite_differences() {
    let mut total = ProbeTally::default();
    for seed in 100..104 {
        for (_, t) in check_scene(seed, true, false, false) {
            total.merge(t);
        }
    }
    println!("sum(rgb) probes: {total:?}");
    assert_eq!(total.failed, 0);
}

#[test]
fn depth_gradients_on_positions_match_finite_differences() {
    let mut total = ProbeTally::default();
    for seed in 200..212 {
        for (class, t) in check_scene(seed, false, true, false) {
            if class == ParamClass::Position {
                total.merge(t);
            }
        }
    }
    println!("sum(depth) position probes: {total:?}");
    assert_eq!(total.failed, 0);
    assert!(total.passed >= 100);
}
