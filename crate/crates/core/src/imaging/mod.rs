//! Image, depth and mask rasters plus the PNG/PFM codecs.
//!
//! All rasters are row-major with the top row first. Sampling uses
//! pixel-index coordinates: `(i as f64, j as f64)` is the center of pixel
//! `(i, j)`; continuous pixel coordinates `u` used by the camera model
//! convert with `x = u - 0.5`.

mod pfm;
mod png;

use rayon::prelude::*;
use thiserror::Error;

pub use self::pfm::{decode_depth, decode_pfm, encode_depth, encode_pfm, read_depth, write_depth, PfmImage};
pub use self::png::{decode_png, decode_png_mask, encode_png, encode_png_gray, read_image, read_mask, write_image, write_mask};

/// Depth value marking an unknown pixel.
pub const DEPTH_SENTINEL: f32 = 0.0;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("size error: {0}")]
    Size(String),
    #[error("invalid depth value {value} at pixel ({x}, {y})")]
    InvalidDepth { x: u32, y: u32, value: f32 },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ImagingError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        ImagingError::Parse { offset, message: message.into() }
    }
}

fn check_len(width: u32, height: u32, channels: usize, len: usize) -> Result<(), ImagingError> {
    let expected = width as usize * height as usize * channels;
    if expected != len {
        return Err(ImagingError::Size(format!("{width}x{height}x{channels} raster needs {expected} values, got {len}")));
    }
    Ok(())
}

/// RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ImageRGB {
    /// Values are clamped into `[0, 1]`; non-finite values are rejected.
    pub fn new(width: u32, height: u32, mut data: Vec<f32>) -> Result<Self, ImagingError> {
        check_len(width, height, 3, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImagingError::Size(format!("non-finite color at index {pos}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let rgb = rgb.map(|c| c.clamp(0.0, 1.0));
        let data = (0..width as usize * height as usize).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [f32; 3] + Sync) -> Self {
        let data: Vec<f32> = (0..height)
            .into_par_iter()
            .flat_map_iter(|y| {
                let f = &f;
                (0..width).flat_map(move |x| f(x, y).map(|c| if c.is_finite() { c.clamp(0.0, 1.0) } else { 0.0 }))
            })
            .collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect()
    }

    /// Bilinear sample in pixel-index coordinates; `None` when out of bounds.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f32; 3]> {
        let taps = bilinear_taps(x, y, self.width, self.height)?;
        let mut out = [0.0f64; 3];
        for (idx, w) in taps {
            for c in 0..3 {
                out[c] += w * self.data[idx * 3 + c] as f64;
            }
        }
        Some(out.map(|v| v as f32))
    }

    /// 2×2 box average; output dims are `floor(dims / 2)`.
    pub fn resize_half(&self) -> Result<ImageRGB, ImagingError> {
        let data = box_downsample(&self.data, self.width, self.height, 3)?;
        Ok(ImageRGB { width: self.width / 2, height: self.height / 2, data })
    }

    /// Nearest 8-bit quantization, as stored by the PNG codec.
    pub fn quantized(&self) -> ImageRGB {
        let data = self.data.iter().map(|&v| quantize_u8(v) as f32 / 255.0).collect();
        ImageRGB { width: self.width, height: self.height, data }
    }

    pub fn flip_horizontal(&self) -> ImageRGB {
        ImageRGB::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }
}

#[inline]
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Depth map in scene units; [`DEPTH_SENTINEL`] marks unknown pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, ImagingError> {
        check_len(width, height, 1, data.len())?;
        for (i, &v) in data.iter().enumerate() {
            if v != DEPTH_SENTINEL && !(v > 0.0 && v.is_finite()) {
                let i = i as u32;
                return Err(ImagingError::InvalidDepth { x: i % width, y: i / width, value: v });
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, depth: f32) -> Self {
        let depth = if depth > 0.0 && depth.is_finite() { depth } else { DEPTH_SENTINEL };
        Self { width, height, data: vec![depth; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn is_known(&self, x: u32, y: u32) -> bool {
        self.get(x, y) != DEPTH_SENTINEL
    }

    pub fn is_complete(&self) -> bool {
        self.data.iter().all(|&v| v != DEPTH_SENTINEL)
    }

    /// Validity mask (`true` where the depth is known).
    pub fn known_mask(&self) -> Mask {
        Mask { width: self.width, height: self.height, data: self.data.iter().map(|&v| v != DEPTH_SENTINEL).collect() }
    }

    /// Bilinear sample; `None` when out of bounds or when any contributing
    /// neighbor is unknown.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        let taps = bilinear_taps(x, y, self.width, self.height)?;
        let mut out = 0.0f64;
        for (idx, w) in taps {
            let d = self.data[idx];
            if d == DEPTH_SENTINEL && w > 0.0 {
                return None;
            }
            out += w * d as f64;
        }
        Some(out as f32)
    }

    /// Box average over `factor × factor` blocks ignoring unknown pixels;
    /// blocks with no known pixel stay unknown.
    pub fn downsample(&self, factor: u32) -> Result<DepthMap, ImagingError> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(ImagingError::Size(format!("{}x{} depth map is not divisible by {factor}", self.width, self.height)));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for by in 0..h {
            for bx in 0..w {
                let (mut sum, mut n) = (0.0f64, 0u32);
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        let d = self.get(x, y);
                        if d != DEPTH_SENTINEL {
                            sum += d as f64;
                            n += 1;
                        }
                    }
                }
                data.push(if n == 0 { DEPTH_SENTINEL } else { (sum / n as f64) as f32 });
            }
        }
        Ok(DepthMap { width: w, height: h, data })
    }

    pub(crate) fn from_raw_unchecked(width: u32, height: u32, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width as usize * height as usize);
        Self { width, height, data }
    }
}

/// Boolean raster, `true` = known/valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self, ImagingError> {
        check_len(width, height, 1, data.len())?;
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_size(&self, width: u32, height: u32) -> bool {
        self.width == width && self.height == height
    }
}

/// Per-pixel scalar in `[0, 1]` (confidence, coverage); non-finite values become 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ScalarMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, ImagingError> {
        check_len(width, height, 1, data.len())?;
        Ok(Self { width, height, data: data.into_iter().map(|c| if c.is_finite() { c.clamp(0.0, 1.0) } else { 0.0 }).collect() })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self { width, height, data: vec![value.clamp(0.0, 1.0); width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

pub(crate) const SNAP_EPS: f64 = 1e-9;

/// Indices and weights of the bilinear taps at pixel-index coordinate
/// `(x, y)`. Taps with zero weight are not required to be in bounds, so
/// sampling exactly on the last row/column center succeeds.
pub(crate) fn bilinear_taps(x: f64, y: f64, width: u32, height: u32) -> Option<[(usize, f64); 4]> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    // Round-off in reprojection must not push exact border samples outside.
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < SNAP_EPS {
            r
        } else {
            v
        }
    };
    let (x, y) = (snap(x), snap(y));
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (x - x0, y - y0);
    let (w, h) = (width as i64, height as i64);
    let (i0, j0) = (x0 as i64, y0 as i64);
    if i0 < 0 || j0 < 0 || i0 >= w || j0 >= h {
        return None;
    }
    let i1 = if tx > 0.0 { i0 + 1 } else { i0 };
    let j1 = if ty > 0.0 { j0 + 1 } else { j0 };
    if i1 >= w || j1 >= h {
        return None;
    }
    let idx = |i: i64, j: i64| (j * w + i) as usize;
    Some([(idx(i0, j0), (1.0 - tx) * (1.0 - ty)), (idx(i1, j0), tx * (1.0 - ty)), (idx(i0, j1), (1.0 - tx) * ty), (idx(i1, j1), tx * ty)])
}

/// 2×2 box downsample of an interleaved raster.
pub(crate) fn box_downsample(data: &[f32], width: u32, height: u32, channels: usize) -> Result<Vec<f32>, ImagingError> {
    if width < 2 || height < 2 {
        return Err(ImagingError::Size(format!("cannot halve a {width}x{height} raster")));
    }
    let (w, h) = (width as usize / 2, height as usize / 2);
    let src_w = width as usize;
    let mut out = Vec::with_capacity(w * h * channels);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let at = |xx: usize, yy: usize| data[(yy * src_w + xx) * channels + c];
                let s = at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1);
                out.push(s * 0.25);
            }
        }
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64, ImagingError> {
    if a.width != b.width || a.height != b.height {
        return Err(ImagingError::Size(format!("psnr of {}x{} against {}x{}", a.width, a.height, b.width, b.height)));
    }
    let mse = a.data.iter().zip(&b.data).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, seed: u64) -> ImageRGB {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageRGB::new(w, h, (0..w * h * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn sample_at_pixel_center_is_exact() {
        let img = random_image(5, 4, 1);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(img.sample(x as f64, y as f64).unwrap(), img.get(x, y));
            }
        }
    }

    #[test]
    fn sample_midpoint_and_bounds() {
        let img = ImageRGB::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(img.sample(0.5, 0.0).unwrap(), [0.5; 3]);
        assert!(img.sample(-0.5, 0.0).is_none());
        assert!(img.sample(1.5, 0.0).is_none());
        assert!(img.sample(f64::NAN, 0.0).is_none());
    }

    #[test]
    fn sample_is_linear_along_axis() {
        let img = ImageRGB::from_fn(8, 8, |x, y| [x as f32 / 8.0, y as f32 / 8.0, 0.5]);
        let s = img.sample(2.25, 3.75).unwrap();
        assert!((s[0] - 2.25 / 8.0).abs() < 1e-6);
        assert!((s[1] - 3.75 / 8.0).abs() < 1e-6);
    }

    #[test]
    fn depth_sample_rejects_unknown_neighbors() {
        let d = DepthMap::new(2, 1, vec![1.0, DEPTH_SENTINEL]).unwrap();
        assert_eq!(d.sample(0.0, 0.0), Some(1.0));
        assert_eq!(d.sample(0.5, 0.0), None);
    }

    #[test]
    fn depth_map_rejects_negative_values() {
        assert!(matches!(DepthMap::new(2, 1, vec![1.0, -2.0]), Err(ImagingError::InvalidDepth { x: 1, .. })));
        assert!(DepthMap::new(2, 1, vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn resize_half_examples() {
        let c = ImageRGB::filled(6, 4, [0.25, 0.5, 0.75]).resize_half().unwrap();
        assert_eq!((c.width(), c.height()), (3, 2));
        assert!(c.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));

        let img = ImageRGB::new(2, 2, [0.0, 0.0, 1.0, 1.0].iter().flat_map(|&v| [v; 3]).collect()).unwrap();
        assert_eq!(img.resize_half().unwrap().get(0, 0), [0.5; 3]);

        assert!(ImageRGB::filled(1, 4, [0.0; 3]).resize_half().is_err());
        assert_eq!(ImageRGB::filled(5, 5, [0.0; 3]).resize_half().unwrap().width(), 2);
    }

    #[test]
    fn resize_half_twice_is_a_four_by_four_box() {
        let img = random_image(16, 12, 7);
        let twice = img.resize_half().unwrap().resize_half().unwrap();
        for by in 0..3 {
            for bx in 0..4 {
                let mut acc = [0.0f64; 3];
                for y in 0..4 {
                    for x in 0..4 {
                        let p = img.get(bx * 4 + x, by * 4 + y);
                        for c in 0..3 {
                            acc[c] += p[c] as f64 / 16.0;
                        }
                    }
                }
                let got = twice.get(bx, by);
                for c in 0..3 {
                    assert!((got[c] as f64 - acc[c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn depth_downsample_ignores_unknowns() {
        let d = DepthMap::new(2, 2, vec![1.0, 3.0, DEPTH_SENTINEL, DEPTH_SENTINEL]).unwrap();
        assert_eq!(d.downsample(2).unwrap().data(), &[2.0]);
        let empty = DepthMap::filled(2, 2, 0.0);
        assert_eq!(empty.downsample(2).unwrap().data(), &[DEPTH_SENTINEL]);
        assert!(d.downsample(3).is_err());
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = random_image(4, 4, 3);
        assert!(psnr(&img, &img).unwrap().is_infinite());
        let other = ImageRGB::filled(4, 4, [0.0; 3]);
        let zero = ImageRGB::filled(4, 4, [0.1; 3]);
        assert!((psnr(&other, &zero).unwrap() - 20.0).abs() < 1e-4);
    }
}
