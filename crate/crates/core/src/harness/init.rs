use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::View;
use crate::error::{Error, Result};
use crate::geometry::Pixel;
use crate::raster::Raster;
use crate::renderer::{logit, rgb_to_sh0, Gaussian, GaussianCloud, SH_COEFFS, SH_PER_GAUSSIAN};

pub const INIT_OPACITY: f64 = 0.1;

/// Neighbours averaged for the initial isotropic scale.
const SCALE_NEIGHBOURS: usize = 3;

/// Lifts randomly chosen depth pixels to 3D Gaussians.
///
/// `depths[i]` pairs with `views[i]`. Pixels are drawn uniformly from all
/// pixels with positive depth, positions are jittered by isotropic Gaussian
/// noise of standard deviation `noise_sigma`, colour comes from the pixel.
pub fn init_cloud<R: Rng>(views: &[&View], depths: &[&Raster], n_points: usize, noise_sigma: f64, rng: &mut R) -> Result<GaussianCloud> {
    if views.len() != depths.len() {
        return Err(Error::Contract(format!("{} views but {} depth maps", views.len(), depths.len())));
    }
    let candidates: Vec<(usize, usize)> = depths
        .iter()
        .enumerate()
        .flat_map(|(v, d)| d.data().iter().enumerate().filter(|(_, z)| **z > 0.0).map(move |(i, _)| (v, i)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Domain("no pixel with valid depth to initialize from".into()));
    }
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let mut points = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let (v, i) = candidates[rng.random_range(0..candidates.len())];
        let view = views[v];
        let w = view.k.width;
        let p = Pixel::new((i % w) as f64, (i / w) as f64);
        let cam = view.k.ray(p) * depths[v].data()[i];
        let world = view.pose.inverse().transform_point(&cam);
        let jitter = if noise_sigma > 0.0 {
            Vector3::from_fn(|_, _| normal.sample(rng))
        } else {
            Vector3::zeros()
        };
        points.push(world + jitter);
        colors.push([0, 1, 2].map(|c| view.rgb.at(i)[c]));
    }
    let scales = neighbour_scales(&points);
    Ok(GaussianCloud::from_gaussians(points.iter().zip(&colors).zip(&scales).map(|((p, c), s)| {
        let mut sh = [0.0; SH_PER_GAUSSIAN];
        for ch in 0..3 {
            sh[ch * SH_COEFFS] = rgb_to_sh0(c[ch]);
        }
        Gaussian {
            position: *p,
            rotation: nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::repeat(s.ln()),
            opacity_logit: logit(INIT_OPACITY),
            sh,
        }
    })))
}

/// Mean distance from each point to its nearest neighbours (brute force).
fn neighbour_scales(points: &[Vector3<f64>]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; SCALE_NEIGHBOURS];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[SCALE_NEIGHBOURS - 1] {
                    best[SCALE_NEIGHBOURS - 1] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
            if found.is_empty() {
                0.01
            } else {
                (found.iter().sum::<f64>() / found.len() as f64).max(1e-4)
            }
        })
        .collect()
}
