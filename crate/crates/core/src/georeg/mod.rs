//! Geometric regularization of rendered depth: multi-view consistency with
//! per-pixel top-k view selection, and edge-aware depth smoothness.

mod features;

pub use features::{extract_features, FEATURE_BIAS, FEATURE_CHANNELS};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};
use crate::warp::{sign, WarpedMap};

/// Default number of selected views (and of consistent views required by the
/// reliability filter) for `n` views in total: `⌈(n−1)/2⌉`.
pub fn default_k(n_views: usize) -> usize {
    n_views.saturating_sub(1).div_ceil(2).max(1)
}

/// `½(1 − cos)` between two descriptors, in [0, 1]. A zero vector is
/// maximally inconsistent with anything.
pub fn cosine_distance(f1: &[f64], f2: &[f64]) -> f64 {
    let (n1, n2) = (norm(f1), norm(f2));
    if n1 == 0.0 || n2 == 0.0 {
        return 1.0;
    }
    (0.5 * (1.0 - dot(f1, f2) / (n1 * n2))).clamp(0.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Per-pixel discrepancy between a reference value and a warped source value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Cosine distance between feature descriptors.
    Cosine,
    /// Mean absolute difference over channels (plain colour consistency).
    L1,
}

impl Metric {
    pub fn error(self, reference: &[f64], warped: &[f64]) -> f64 {
        match self {
            Metric::Cosine => cosine_distance(reference, warped),
            Metric::L1 => reference.iter().zip(warped).map(|(a, b)| (a - b).abs()).sum::<f64>() / reference.len() as f64,
        }
    }

    /// Writes `∂error/∂warped` into `grad`.
    pub fn error_grad(self, reference: &[f64], warped: &[f64], grad: &mut [f64]) {
        match self {
            Metric::Cosine => {
                let (n1, n2) = (norm(reference), norm(warped));
                if n1 == 0.0 || n2 == 0.0 {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return;
                }
                let cos = dot(reference, warped) / (n1 * n2);
                for ((g, r), w) in grad.iter_mut().zip(reference).zip(warped) {
                    *g = -0.5 * (r / n1 - cos * w / n2) / n2;
                }
            }
            Metric::L1 => {
                let c = reference.len() as f64;
                for ((g, r), w) in grad.iter_mut().zip(reference).zip(warped) {
                    *g = sign(w - r) / c;
                }
            }
        }
    }
}

/// Per-view error maps (single channel) between a reference map and its
/// warped sources. Values outside each source's mask are 0 and meaningless.
pub fn per_view_errors(reference: &Raster, warped: &[WarpedMap], metric: Metric) -> Vec<Raster> {
    warped
        .iter()
        .map(|wm| {
            let mut e = Raster::zeros(reference.width(), reference.height(), 1);
            for (i, v) in e.data_mut().iter_mut().enumerate() {
                if wm.mask.data()[i] {
                    *v = metric.error(reference.at(i), wm.values.at(i));
                }
            }
            e
        })
        .collect()
}

/// Indices of the `k` smallest errors among valid entries, ordered by
/// (error, index). Fewer than `k` valid entries selects all of them.
pub fn select_k(errors: &[f64], valid: &[bool], k: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..errors.len()).filter(|&j| valid[j] && !errors[j].is_nan()));
    // stable sort keeps lower indices first among equal errors
    out.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]));
    out.truncate(k);
}

/// Per-pixel choice of the most consistent source views.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    indices: Vec<usize>,
    counts: Vec<usize>,
    errors: Vec<f64>,
}

impl TopKSelection {
    /// Selected source indices at pixel `i` (row-major), ascending by error.
    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..i * self.k + self.counts[i]]
    }

    pub fn errors(&self, i: usize) -> &[f64] {
        &self.errors[i * self.k..i * self.k + self.counts[i]]
    }

    /// Number of selected views at pixel `i` (less than `k` on a deficit).
    pub fn count(&self, i: usize) -> usize {
        self.counts[i]
    }
}

/// Selects, per pixel, the `k` valid source views with the smallest error.
pub fn topk_select(errors: &[Raster], masks: &[Mask], k: usize) -> Result<TopKSelection> {
    let n_src = errors.len();
    if n_src == 0 {
        return Err(Error::Contract("top-k selection needs at least two views".into()));
    }
    if k == 0 || k > n_src {
        return Err(Error::Contract(format!("k = {k} outside 1..={n_src}")));
    }
    if masks.len() != n_src {
        return Err(Error::Contract(format!("{} masks for {n_src} error maps", masks.len())));
    }
    let (w, h) = (errors[0].width(), errors[0].height());
    let mut sel = TopKSelection {
        k,
        width: w,
        height: h,
        indices: vec![0; w * h * k],
        counts: vec![0; w * h],
        errors: vec![0.0; w * h * k],
    };
    let mut e = vec![0.0; n_src];
    let mut v = vec![false; n_src];
    let mut chosen = Vec::with_capacity(n_src);
    for i in 0..w * h {
        for j in 0..n_src {
            e[j] = errors[j].data()[i];
            v[j] = masks[j].data()[i];
        }
        select_k(&e, &v, k, &mut chosen);
        sel.counts[i] = chosen.len();
        for (slot, &j) in chosen.iter().enumerate() {
            sel.indices[i * k + slot] = j;
            sel.errors[i * k + slot] = e[j];
        }
    }
    Ok(sel)
}

/// Top-k multi-view consistency loss and its gradient on the reference depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub value: f64,
    /// Pixels that had at least one valid source view.
    pub pixels: usize,
    /// `∂value/∂D_ref`.
    pub d_depth: Raster,
    pub selection: TopKSelection,
}

/// Mean over reference pixels of the mean error over the `k` most consistent
/// source views. `reference_mask` excludes reference pixels (e.g. low alpha).
///
/// View selection and masks are held fixed; the gradient flows through the
/// warped sample positions into the reference depth.
pub fn mpc_loss(
    reference: &Raster,
    warped: &[WarpedMap],
    reference_mask: Option<&Mask>,
    k: usize,
    metric: Metric,
) -> Result<ConsistencyLoss> {
    let (w, h) = (reference.width(), reference.height());
    for wm in warped {
        reference.ensure_shape(&wm.values, "warped source")?;
    }
    let errors = per_view_errors(reference, warped, metric);
    let masks: Vec<Mask> = warped
        .iter()
        .map(|wm| match reference_mask {
            Some(m) => wm.mask.and(m),
            None => wm.mask.clone(),
        })
        .collect();
    let selection = topk_select(&errors, &masks, k)?;

    let pixels = (0..w * h).filter(|&i| selection.count(i) > 0).count();
    let mut d_depth = Raster::zeros(w, h, 1);
    if pixels == 0 {
        return Ok(ConsistencyLoss {
            value: 0.0,
            pixels,
            d_depth,
            selection,
        });
    }
    let scale = 1.0 / pixels as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; reference.channels()];
    for i in 0..w * h {
        let n = selection.count(i);
        if n == 0 {
            continue;
        }
        let per = scale / n as f64;
        value += selection.errors(i).iter().sum::<f64>() * per;
        let mut g = 0.0;
        for &j in selection.indices(i) {
            metric.error_grad(reference.at(i), warped[j].values.at(i), &mut grad);
            g += dot(&grad, warped[j].d_depth.at(i));
        }
        d_depth.data_mut()[i] = g * per;
    }
    Ok(ConsistencyLoss {
        value,
        pixels,
        d_depth,
        selection,
    })
}

/// Edge-aware smoothness of depth and its gradient on the depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessLoss {
    pub value: f64,
    pub pixels: usize,
    pub d_depth: Raster,
}

/// Mean over interior pixels of `‖∇D‖₁ · exp(−α ‖∇I‖₁)` with forward
/// differences; `∇I` is taken on the channel mean. With a mask, a pixel
/// counts only if it and its right and lower neighbours are all set.
pub fn edge_aware_smoothness(depth: &Raster, image: &Raster, mask: Option<&Mask>, alpha: f64) -> Result<SmoothnessLoss> {
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(Error::Contract("smoothness: depth and image sizes differ".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let gray = image.channel_mean();
    let ok = |x: usize, y: usize| mask.is_none_or(|m| m.get(x, y));
    let mut terms = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if ok(x, y) && ok(x + 1, y) && ok(x, y + 1) {
                terms.push((x, y));
            }
        }
    }
    let mut d_depth = Raster::zeros(w, h, 1);
    if terms.is_empty() {
        return Ok(SmoothnessLoss {
            value: 0.0,
            pixels: 0,
            d_depth,
        });
    }
    let scale = 1.0 / terms.len() as f64;
    let mut value = 0.0;
    for &(x, y) in &terms {
        let i0 = gray.get(x, y, 0);
        let weight = (-alpha * ((gray.get(x + 1, y, 0) - i0).abs() + (gray.get(x, y + 1, 0) - i0).abs())).exp();
        let d0 = depth.get(x, y, 0);
        let dx = depth.get(x + 1, y, 0) - d0;
        let dy = depth.get(x, y + 1, 0) - d0;
        value += (dx.abs() + dy.abs()) * weight * scale;
        let (sx, sy) = (sign(dx) * weight * scale, sign(dy) * weight * scale);
        let g = d_depth.data_mut();
        g[y * w + x + 1] += sx;
        g[(y + 1) * w + x] += sy;
        g[y * w + x] -= sx + sy;
    }
    Ok(SmoothnessLoss {
        value,
        pixels: terms.len(),
        d_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_k_values() {
        assert_eq!(default_k(2), 1);
        assert_eq!(default_k(3), 1);
        assert_eq!(default_k(4), 2);
        assert_eq!(default_k(7), 3);
    }

    #[test]
    fn cosine_examples() {
        let a = [0.6, 0.8, 0.0];
        assert_eq!(cosine_distance(&a, &a), 0.0);
        assert_eq!(cosine_distance(&a, &[-0.6, -0.8, 0.0]), 1.0);
        assert!((cosine_distance(&a, &[0.8, -0.6, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(cosine_distance(&a, &[0.0; 3]), 1.0);
    }

    #[test]
    fn topk_example_picks_two_smallest() {
        let mut out = Vec::new();
        select_k(&[0.4, 0.1, 0.3], &[true; 3], 2, &mut out);
        assert_eq!(out, vec![1, 2]);
        select_k(&[0.2, 0.2, 0.1], &[true; 3], 2, &mut out);
        assert_eq!(out, vec![2, 0]);
        select_k(&[0.4, 0.1, 0.3], &[true, false, false], 2, &mut out);
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn topk_rejects_bad_k() {
        let e = vec![Raster::zeros(2, 2, 1)];
        let m = vec![Mask::new(2, 2, true)];
        assert!(topk_select(&e, &m, 2).is_err());
        assert!(topk_select(&e, &m, 0).is_err());
        assert!(topk_select(&[], &[], 1).is_err());
        let sel = topk_select(&e, &m, 1).unwrap();
        assert_eq!(sel.indices(3), &[0]);
    }

    #[test]
    fn smoothness_examples() {
        let flat = Raster::zeros(6, 5, 3);
        let ramp = Raster::from_fn(6, 5, 1, |x, _, _| x as f64);
        let s = edge_aware_smoothness(&Raster::filled(6, 5, 1, 2.0), &flat, None, 1.0).unwrap();
        assert_eq!(s.value, 0.0);
        let s = edge_aware_smoothness(&ramp, &flat, None, 1.0).unwrap();
        assert!((s.value - 1.0).abs() < 1e-15);
        assert_eq!(s.pixels, 20);
        // image rising by 1 per column in every channel
        let img = Raster::from_fn(6, 5, 3, |x, _, _| x as f64);
        let s = edge_aware_smoothness(&ramp, &img, None, 1.0).unwrap();
        assert!((s.value - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn features_of_constant_image_are_bias_dominated() {
        let f = extract_features(&Raster::filled(5, 4, 3, 0.3));
        for i in 0..20 {
            let px = f.at(i);
            assert_eq!(&px[..7], &[0.0; 7]);
            assert_eq!(px[7], 1.0);
        }
    }

    #[test]
    fn sobel_x_peaks_on_vertical_edge() {
        let img = Raster::from_fn(5, 5, 3, |x, _, _| if x >= 3 { 1.0 } else { 0.0 });
        let f = extract_features(&img);
        let row: Vec<f64> = (0..5).map(|x| f.get(x, 2, 1)).collect();
        // edge between columns 2 and 3: Sobel responds on both, nowhere else
        assert_eq!(row[0], 0.0);
        assert_eq!(row[1], 0.0);
        assert!(row[2] > 0.0 && row[3] > 0.0);
        assert_eq!(row[4], 0.0);
        let mirrored = extract_features(&Raster::from_fn(5, 5, 3, |x, _, _| if x >= 3 { 0.0 } else { 1.0 }));
        assert!(mirrored.get(2, 2, 1) < 0.0);
    }
}
