use crate::raster::Raster;

pub const FEATURE_CHANNELS: usize = 8;

/// Constant channel appended before normalization so flat regions still get a
/// well-defined unit descriptor.
pub const FEATURE_BIAS: f64 = 0.1;

/// Regularizer in the local normalizations `(x − mean) / (std + ε)`.
const LOCAL_EPS: f64 = 0.05;

/// Replicate-padded single-channel plane.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    /// 3×3 mean and standard deviation at (x, y).
    fn local_stats(&self, x: isize, y: isize) -> (f64, f64) {
        let mut window = [0.0; 9];
        for (i, v) in window.iter_mut().enumerate() {
            *v = self.at(x + i as isize % 3 - 1, y + i as isize / 3 - 1);
        }
        let mean = window.iter().sum::<f64>() / 9.0;
        let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
        (mean, var.sqrt())
    }

    fn normalized(&self, x: isize, y: isize) -> f64 {
        let (mean, std) = self.local_stats(x, y);
        (self.at(x, y) - mean) / (std + LOCAL_EPS)
    }
}

/// Deterministic 8-channel descriptor of an RGB image, L2-normalized per pixel.
///
/// Channels: locally normalized gray, Sobel x and y, Laplacian, locally
/// normalized red-green and blue-yellow opponents, local gray std, bias. Every
/// channel is unchanged by adding a constant to all colour channels.
pub fn extract_features(image: &Raster) -> Raster {
    let (w, h) = (image.width(), image.height());
    let plane = |f: &dyn Fn(&[f64]) -> f64| Plane {
        w,
        h,
        v: (0..w * h).map(|i| f(image.at(i))).collect(),
    };
    let gray = plane(&|p| (p[0] + p[1] + p[2]) / 3.0);
    let rg = plane(&|p| p[0] - p[1]);
    let by = plane(&|p| p[2] - 0.5 * (p[0] + p[1]));

    let mut out = Raster::zeros(w, h, FEATURE_CHANNELS);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let g = |dx: isize, dy: isize| gray.at(x + dx, y + dy);
            // written as differences so constant regions give exact zeros
            let sobel_x = ((g(1, -1) - g(-1, -1)) + 2.0 * (g(1, 0) - g(-1, 0)) + (g(1, 1) - g(-1, 1))) / 8.0;
            let sobel_y = ((g(-1, 1) - g(-1, -1)) + 2.0 * (g(0, 1) - g(0, -1)) + (g(1, 1) - g(1, -1))) / 8.0;
            let c = g(0, 0);
            let laplacian = (g(1, 0) - c) + (g(-1, 0) - c) + (g(0, 1) - c) + (g(0, -1) - c);
            let f = [
                gray.normalized(x, y),
                sobel_x,
                sobel_y,
                laplacian,
                rg.normalized(x, y),
                by.normalized(x, y),
                gray.local_stats(x, y).1,
                FEATURE_BIAS,
            ];
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let px = out.pixel_mut(x as usize, y as usize);
            if norm > 0.0 {
                for (o, v) in px.iter_mut().zip(f) {
                    *o = v / norm;
                }
            }
        }
    }
    out
}
