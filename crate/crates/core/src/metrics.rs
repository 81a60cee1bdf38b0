//! Image quality metrics and the base photometric loss.

use crate::raster::Raster;
use crate::warp::sign;

pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Raster, b: &Raster) -> f64 {
    assert!(a.same_shape(b), "mse shape mismatch");
    let n = a.data().len().max(1) as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at 99 dB.
pub fn psnr(a: &Raster, b: &Raster) -> f64 {
    let m = mse(a, b);
    if m < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

/// Mean absolute depth error over pixels where the ground truth has a hit.
pub fn depth_error(rendered: &Raster, truth: &Raster) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, t) in rendered.data().iter().zip(truth.data()) {
        if *t > 0.0 {
            sum += (r - t).abs();
            n += 1;
        }
    }
    if n == 0 { 0.0 } else { sum / n as f64 }
}

fn gaussian_window(radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Window radius actually used: the standard 11×11 window, shrunk so that at
/// least one full window fits in small images.
pub fn ssim_radius(width: usize, height: usize) -> usize {
    SSIM_WINDOW_RADIUS.min((width.min(height).max(1) - 1) / 2)
}

/// Mean structural similarity over all fully contained windows and channels.
pub fn ssim(a: &Raster, b: &Raster) -> f64 {
    ssim_impl(a, b, None)
}

/// [`ssim`] and its gradient w.r.t. `a`.
pub fn ssim_with_grad(a: &Raster, b: &Raster) -> (f64, Raster) {
    let mut g = Raster::zeros(a.width(), a.height(), a.channels());
    let s = ssim_impl(a, b, Some(&mut g));
    (s, g)
}

/// Separable valid-mode filter of a `w × h` plane: output is `(w − 2r) × (h − 2r)`.
fn blur_valid(src: &[f64], w: usize, h: usize, win: &[f64]) -> Vec<f64> {
    let r = win.len() / 2;
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = win.iter().zip(&line[x..x + win.len()]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (j, k) in win.iter().enumerate() {
            let line = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += k * v;
            }
        }
    }
    out
}

/// Adjoint of [`blur_valid`]: scatters a valid-size plane back to `w × h`.
fn blur_adjoint(src: &[f64], w: usize, h: usize, win: &[f64]) -> Vec<f64> {
    let r = win.len() / 2;
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for (j, k) in win.iter().enumerate() {
            let line = &src[y * ow..(y + 1) * ow];
            for (o, v) in rows[(y + j) * ow..(y + j + 1) * ow].iter_mut().zip(line) {
                *o += k * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (i, k) in win.iter().enumerate() {
                out[y * w + x + i] += k * v;
            }
        }
    }
    out
}

fn ssim_impl(a: &Raster, b: &Raster, mut grad: Option<&mut Raster>) -> f64 {
    assert!(a.same_shape(b), "ssim shape mismatch");
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let r = ssim_radius(w, h);
    let win = gaussian_window(r);
    let n_windows = (w - 2 * r) * (h - 2 * r) * c;
    let scale = 1.0 / n_windows as f64;
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.data().iter().skip(ch).step_by(c).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(ch).step_by(c).copied().collect();
        let blur = |f: &dyn Fn(f64, f64) -> f64| {
            let plane: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| f(*x, *y)).collect();
            blur_valid(&plane, w, h, &win)
        };
        let ma = blur(&|x, _| x);
        let mb = blur(&|_, y| y);
        let saa = blur(&|x, _| x * x);
        let sbb = blur(&|_, y| y * y);
        let sab = blur(&|x, y| x * y);
        let m = ma.len();
        let (mut g_mu, mut g_var, mut g_cov) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            let (ma, mb) = (ma[i], mb[i]);
            let (va, vb, cov) = (saa[i] - ma * ma, sbb[i] - mb * mb, sab[i] - ma * mb);
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = va + vb + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            // ∂s/∂a_x = w·(d_mu + 2·d_var·(a_x − μa) + d_cov·(b_x − μb))
            let d_mu = (2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1) * scale;
            let d_var = -s / b2 * scale;
            let d_cov = 2.0 * a1 / (b1 * b2) * scale;
            g_mu[i] = d_mu - 2.0 * d_var * ma - d_cov * mb;
            g_var[i] = 2.0 * d_var;
            g_cov[i] = d_cov;
        }
        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        let (g_mu, g_var, g_cov) = (blur_adjoint(&g_mu, w, h, &win), blur_adjoint(&g_var, w, h, &win), blur_adjoint(&g_cov, w, h, &win));
        for (p, out) in g.data_mut().iter_mut().skip(ch).step_by(c).enumerate() {
            *out += g_mu[p] + g_var[p] * pa[p] + g_cov[p] * pb[p];
        }
    }
    total * scale
}

pub fn mean_l1(a: &Raster, b: &Raster) -> f64 {
    assert!(a.same_shape(b), "l1 shape mismatch");
    let n = a.data().len().max(1) as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)/2` and its gradient w.r.t. `rendered`.
pub fn photometric_loss(rendered: &Raster, target: &Raster, lambda_dssim: f64) -> (f64, Raster) {
    let n = rendered.data().len().max(1) as f64;
    let l1 = mean_l1(rendered, target);
    let mut grad = Raster::zeros(rendered.width(), rendered.height(), rendered.channels());
    for ((g, r), t) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        *g = (1.0 - lambda_dssim) * sign(r - t) / n;
    }
    if lambda_dssim == 0.0 {
        return (l1, grad);
    }
    let (s, sg) = ssim_with_grad(rendered, target);
    for (g, d) in grad.data_mut().iter_mut().zip(sg.data()) {
        *g -= 0.5 * lambda_dssim * d;
    }
    ((1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s) * 0.5, grad)
}
