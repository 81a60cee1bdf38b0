//! Binary checkpoint, depth and feature files, plus 8-bit PNG export.
//!
//! All binary formats are an 8-byte magic, little-endian `u32` header words and
//! little-endian `f32` payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};
use crate::renderer::{Gaussian, GaussianCloud, SH_COEFFS, SH_PER_GAUSSIAN};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICOGS01\0";
pub const DEPTH_MAGIC: &[u8; 8] = b"ICODPTH\0";
pub const FEATURE_MAGIC: &[u8; 8] = b"ICOFEAT\0";

/// Floats per Gaussian record: position, quaternion, log-scale, opacity logit, SH.
const RECORD_LEN: usize = 3 + 4 + 3 + 1 + SH_PER_GAUSSIAN;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 8], kind: &'static str, path: &'a Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(Error::format(kind, path, "bad magic"));
        }
        Ok(Self { bytes, pos: 8, kind, path })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.kind, self.path, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::format(self.kind, self.path, "size overflow"))?;
        let b = self.take(len)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.kind, self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_checkpoint(cloud: &GaussianCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(16 + n * RECORD_LEN * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, n);
    put_u32(&mut out, SH_COEFFS);
    for i in 0..n {
        let g = cloud.gaussian(i);
        put_f32s(&mut out, g.position.iter().copied());
        put_f32s(&mut out, g.rotation.iter().copied());
        put_f32s(&mut out, g.log_scale.iter().copied());
        put_f32s(&mut out, [g.opacity_logit]);
        put_f32s(&mut out, g.sh);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<GaussianCloud> {
    let mut r = Reader::new(bytes, CHECKPOINT_MAGIC, "checkpoint", path)?;
    let n = r.u32()?;
    let coeffs = r.u32()?;
    if coeffs != SH_COEFFS {
        return Err(Error::format("checkpoint", path, format!("expected {SH_COEFFS} SH coefficients, found {coeffs}")));
    }
    let mut cloud = GaussianCloud::new();
    for _ in 0..n {
        let v = r.f32s(RECORD_LEN)?;
        let mut sh = [0.0; SH_PER_GAUSSIAN];
        sh.copy_from_slice(&v[11..]);
        cloud.push(&Gaussian {
            position: nalgebra::Vector3::new(v[0], v[1], v[2]),
            rotation: nalgebra::Vector4::new(v[3], v[4], v[5], v[6]),
            log_scale: nalgebra::Vector3::new(v[7], v[8], v[9]),
            opacity_logit: v[10],
            sh,
        });
    }
    r.finish()?;
    Ok(cloud)
}

pub fn write_checkpoint(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    write_file(path, &encode_checkpoint(cloud))
}

pub fn read_checkpoint(path: &Path) -> Result<GaussianCloud> {
    decode_checkpoint(&read_file(path)?, path)
}

pub fn encode_depth(depth: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + depth.pixel_count() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    put_u32(&mut out, depth.width());
    put_u32(&mut out, depth.height());
    put_f32s(&mut out, depth.channel_mean().data().iter().copied());
    out
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<Raster> {
    let mut r = Reader::new(bytes, DEPTH_MAGIC, "depth", path)?;
    let (w, h) = (r.u32()?, r.u32()?);
    let data = r.f32s(w * h)?;
    r.finish()?;
    Raster::from_vec(w, h, 1, data)
}

/// Writes a single-channel depth map (a multi-channel raster is averaged first).
pub fn write_depth(path: &Path, depth: &Raster) -> Result<()> {
    write_file(path, &encode_depth(depth))
}

pub fn read_depth(path: &Path) -> Result<Raster> {
    decode_depth(&read_file(path)?, path)
}

pub fn encode_features(features: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + features.data().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, features.width());
    put_u32(&mut out, features.height());
    put_u32(&mut out, features.channels());
    put_f32s(&mut out, features.data().iter().copied());
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Raster> {
    let mut r = Reader::new(bytes, FEATURE_MAGIC, "feature", path)?;
    let (w, h, c) = (r.u32()?, r.u32()?, r.u32()?);
    if c == 0 {
        return Err(Error::format("feature", path, "zero channels"));
    }
    let data = r.f32s(w * h * c)?;
    r.finish()?;
    Raster::from_vec(w, h, c, data)
}

pub fn write_features(path: &Path, features: &Raster) -> Result<()> {
    write_file(path, &encode_features(features))
}

pub fn read_features(path: &Path) -> Result<Raster> {
    decode_features(&read_file(path)?, path)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves an RGB raster, clamped to [0, 1], as 8-bit PNG.
pub fn write_png_rgb(path: &Path, rgb: &Raster) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::Contract(format!("PNG export needs 3 channels, got {}", rgb.channels())));
    }
    let buf: Vec<u8> = rgb.data().iter().map(|&v| to_u8(v)).collect();
    save(path, image::RgbImage::from_raw(rgb.width() as u32, rgb.height() as u32, buf).expect("buffer size"))
}

/// Saves a single-channel raster as 8-bit grayscale, mapping `[0, max]` to `[0, 255]`.
pub fn write_png_gray(path: &Path, values: &Raster, max: f64) -> Result<()> {
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let buf: Vec<u8> = values.channel_mean().data().iter().map(|&v| to_u8(v * scale)).collect();
    save(path, image::GrayImage::from_raw(values.width() as u32, values.height() as u32, buf).expect("buffer size"))
}

pub fn write_png_mask(path: &Path, mask: &Mask) -> Result<()> {
    let buf: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save(path, image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, buf).expect("buffer size"))
}

fn save<P: image::PixelWithColorType>(path: &Path, img: image::ImageBuffer<P, Vec<P::Subpixel>>) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.into(), source })
}

/// Loads an 8-bit PNG as RGB in [0, 1].
pub fn read_png_rgb(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.into(), source })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Raster::from_vec(w as usize, h as usize, 3, data)
}
