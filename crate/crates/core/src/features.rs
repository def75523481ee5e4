//! Fixed, hand-designed feature extractor used in place of a learned backbone.
//!
//! Both outputs live at quarter resolution. Matching features carry eight
//! channels (luma, x/y luma gradients, 3×3 luma standard deviation, RGB and
//! a twice-blurred luma), each standardized over the image, then every
//! pixel vector is L2-normalized so dot products are correlations in
//! `[-1, 1]`. Image features are the quarter-resolution RGB plus luma.

use thiserror::Error;

use crate::imaging::{bilinear_taps, luma, ImageRGB, ImagingError};

/// Downsampling factor between the input image and the feature grid.
pub const FEATURE_STRIDE: u32 = 4;
pub const MATCHING_CHANNELS: usize = 8;
pub const IMAGE_CHANNELS: usize = 4;
const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image {width}x{height} is not divisible by {FEATURE_STRIDE}")]
    NotDivisible { width: u32, height: u32 },
    #[error("feature map size mismatch: {0}")]
    Size(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Dense multi-channel map, stored pixel-major (`H × W × C`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        let expected = width as usize * height as usize * channels;
        if data.len() != expected || channels == 0 {
            return Err(FeatureError::Size(format!("{width}x{height}x{channels} map needs {expected} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Size("non-finite feature value".into()));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn zeros(width: u32, height: u32, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width as usize * height as usize * channels] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Bilinear sample in pixel-index coordinates into `out`; returns `false`
    /// (leaving `out` zeroed) when out of bounds.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(taps) = bilinear_taps(x, y, self.width, self.height) else {
            return false;
        };
        for (idx, w) in taps {
            if w == 0.0 {
                continue;
            }
            let px = &self.data[idx * self.channels..(idx + 1) * self.channels];
            for (o, &v) in out.iter_mut().zip(px) {
                *o += w * v as f64;
            }
        }
        true
    }

    /// Channel-major stack (`C` planes of `H` rows) for single-channel storage.
    pub fn to_channel_stack(&self) -> Vec<f32> {
        (0..self.channels).flat_map(|c| self.channel(c)).collect()
    }

    pub fn from_channel_stack(width: u32, height: u32, channels: usize, stack: &[f32]) -> Result<Self, FeatureError> {
        let plane = width as usize * height as usize;
        if stack.len() != plane * channels {
            return Err(FeatureError::Size(format!("stack of {} values for {width}x{height}x{channels}", stack.len())));
        }
        let mut data = vec![0.0f32; stack.len()];
        for c in 0..channels {
            for i in 0..plane {
                data[i * channels + c] = stack[c * plane + i];
            }
        }
        Self::new(width, height, channels, data)
    }
}

/// Matching (`F_m`) and image (`F_e`) features of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub matching: FeatureMap,
    pub image: FeatureMap,
}

fn clamp_at(plane: &[f32], w: usize, h: usize, x: isize, y: isize) -> f32 {
    let xx = x.clamp(0, w as isize - 1) as usize;
    let yy = y.clamp(0, h as isize - 1) as usize;
    plane[yy * w + xx]
}

fn box3(plane: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0f32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += clamp_at(plane, w, h, x + dx, y + dy);
                }
            }
            out.push(s / 9.0);
        }
    }
    out
}

fn quarter_resolution(img: &ImageRGB) -> Result<ImageRGB, FeatureError> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 || w % FEATURE_STRIDE != 0 || h % FEATURE_STRIDE != 0 {
        return Err(FeatureError::NotDivisible { width: w, height: h });
    }
    Ok(img.resize_half()?.resize_half()?)
}

/// The eight matching channels before standardization and normalization.
pub fn raw_matching_features(img: &ImageRGB) -> Result<FeatureMap, FeatureError> {
    let q = quarter_resolution(img)?;
    Ok(raw_channels(&q))
}

fn raw_channels(q: &ImageRGB) -> FeatureMap {
    let (w, h) = (q.width() as usize, q.height() as usize);
    let l = q.luma();
    let blurred = box3(&box3(&l, w, h), w, h);
    let mut data = Vec::with_capacity(w * h * MATCHING_CHANNELS);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let at = |dx: isize, dy: isize| clamp_at(&l, w, h, x + dx, y + dy);
            let gx = 0.5 * (at(1, 0) - at(-1, 0));
            let gy = 0.5 * (at(0, 1) - at(0, -1));
            let (mut s, mut s2) = (0.0f32, 0.0f32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let v = at(dx, dy);
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / 9.0;
            let std = (s2 / 9.0 - mean * mean).max(0.0).sqrt();
            let rgb = q.get(x as u32, y as u32);
            let i = y as usize * w + x as usize;
            data.extend_from_slice(&[l[i], gx, gy, std, rgb[0], rgb[1], rgb[2], blurred[i]]);
        }
    }
    FeatureMap { width: w as u32, height: h as u32, channels: MATCHING_CHANNELS, data }
}

/// Standardizes each channel over the map, then L2-normalizes each pixel.
fn standardize_and_normalize(raw: &mut FeatureMap) {
    let c = raw.channels;
    let n = (raw.width as usize * raw.height as usize) as f64;
    for ch in 0..c {
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for v in raw.data.iter().skip(ch).step_by(c) {
            s += *v as f64;
            s2 += (*v as f64) * (*v as f64);
        }
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        let std = var.sqrt();
        for v in raw.data.iter_mut().skip(ch).step_by(c) {
            *v = if std > 1e-9 { ((*v as f64 - mean) / std) as f32 } else { 0.0 };
        }
    }
    for px in raw.data.chunks_exact_mut(c) {
        let norm = px.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > NORM_EPS {
            for v in px.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        } else {
            px.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Extracts matching and image features at quarter resolution.
pub fn extract_features(img: &ImageRGB) -> Result<ViewFeatures, FeatureError> {
    let q = quarter_resolution(img)?;
    let mut matching = raw_channels(&q);
    standardize_and_normalize(&mut matching);
    let image_data = q.data().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], luma(p[0], p[1], p[2])]).collect();
    let image = FeatureMap { width: q.width(), height: q.height(), channels: IMAGE_CHANNELS, data: image_data };
    Ok(ViewFeatures { matching, image })
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
    fn output_sizes_and_channel_counts() {
        let f = extract_features(&random_image(32, 24, 1)).unwrap();
        assert_eq!((f.matching.width(), f.matching.height(), f.matching.channels()), (8, 6, 8));
        assert_eq!((f.image.width(), f.image.height(), f.image.channels()), (8, 6, 4));
        assert!(matches!(extract_features(&random_image(30, 24, 1)), Err(FeatureError::NotDivisible { width: 30, .. })));
    }

    #[test]
    fn constant_image_has_no_gradients() {
        let img = ImageRGB::filled(16, 16, [0.5; 3]);
        let raw = raw_matching_features(&img).unwrap();
        assert!(raw.channel(1).iter().all(|&v| v == 0.0));
        assert!(raw.channel(2).iter().all(|&v| v == 0.0));
        let f = extract_features(&img).unwrap();
        assert!(f.matching.channel(1).iter().all(|&v| v == 0.0));
        assert!(f.matching.channel(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_vectors_are_unit_or_zero() {
        let f = extract_features(&random_image(64, 32, 5)).unwrap();
        for px in f.matching.data().chunks(MATCHING_CHANNELS) {
            let n = px.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5 || n == 0.0, "norm {n}");
            assert!(n <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn horizontal_flip_negates_x_gradient() {
        let img = random_image(32, 16, 9);
        let a = raw_matching_features(&img).unwrap();
        let b = raw_matching_features(&img.flip_horizontal()).unwrap();
        let w = a.width();
        for y in 0..a.height() {
            for x in 0..w {
                let pa = a.pixel(x, y);
                let pb = b.pixel(w - 1 - x, y);
                assert!((pa[1] + pb[1]).abs() < 1e-6, "dx at ({x},{y})");
                assert!((pa[2] - pb[2]).abs() < 1e-6, "dy at ({x},{y})");
                assert!((pa[0] - pb[0]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shifting_by_one_feature_pixel_shifts_raw_features() {
        let img = random_image(48, 40, 3);
        let shifted = ImageRGB::from_fn(48, 40, |x, y| img.get((x + 48 - 4) % 48, y));
        let a = raw_matching_features(&img).unwrap();
        let b = raw_matching_features(&shifted).unwrap();
        for y in 2..a.height() - 2 {
            for x in 2..a.width() - 3 {
                assert_eq!(a.pixel(x, y), b.pixel(x + 1, y), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn deterministic() {
        let img = random_image(32, 32, 4);
        assert_eq!(extract_features(&img).unwrap(), extract_features(&img).unwrap());
    }

    #[test]
    fn channel_stack_round_trip() {
        let f = extract_features(&random_image(16, 8, 2)).unwrap().matching;
        let stack = f.to_channel_stack();
        let back = FeatureMap::from_channel_stack(f.width(), f.height(), f.channels(), &stack).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn sample_into_marks_out_of_bounds() {
        let f = extract_features(&random_image(16, 16, 2)).unwrap().matching;
        let mut out = vec![0.0; MATCHING_CHANNELS];
        assert!(f.sample_into(1.0, 2.0, &mut out));
        assert_eq!(out.iter().map(|&v| v as f32).collect::<Vec<_>>(), f.pixel(1, 2));
        assert!(!f.sample_into(-0.5, 0.0, &mut out));
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
