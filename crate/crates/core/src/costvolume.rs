//! Depth-guided plane-sweep cost volume and soft-argmax depth regression.
//!
//! For each feature pixel the guide depth `D` defines `n_d` uniformly spaced
//! candidates spanning `[(1 - a) D, (1 + a) D]`. Neighbor matching features
//! are warped onto every candidate plane, correlated with the current
//! features, averaged over the neighbors that land in-bounds, smoothed per
//! slice with a 3×3 box, and turned into depth by a temperature softmax.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{FeatureMap, FEATURE_STRIDE};
use crate::geometry::{camera_ray_point, relative_pose, Intrinsics, Pose};
use crate::imaging::{bilinear_taps, encode_pfm, DepthMap, ImagingError, Mask, ScalarMap, DEPTH_SENTINEL};

#[derive(Debug, Error)]
pub enum CostVolumeError {
    #[error("need at least 2 depth candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("offset fraction must lie in (0, 1), got {0}")]
    BadOffset(f64),
    #[error("guide depth is unknown at feature pixel ({x}, {y})")]
    IncompleteGuide { x: u32, y: u32 },
    #[error("cost volume needs at least one neighbor view")]
    NoNeighbors,
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("size mismatch: {0}")]
    Size(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Per-pixel depth hypotheses, stored pixel-major (`H × W × n_d`).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCandidates {
    width: u32,
    height: u32,
    n_d: usize,
    offset: f64,
    depths: Vec<f64>,
}

impl DepthCandidates {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn count(&self) -> usize {
        self.n_d
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> &[f64] {
        let i = (y as usize * self.width as usize + x as usize) * self.n_d;
        &self.depths[i..i + self.n_d]
    }

    #[inline]
    fn at_index(&self, pixel: usize) -> &[f64] {
        &self.depths[pixel * self.n_d..(pixel + 1) * self.n_d]
    }

    /// Depth of sweep slice `s` at every pixel, row-major.
    pub fn slice(&self, s: usize) -> Vec<f64> {
        self.depths.iter().skip(s).step_by(self.n_d).copied().collect()
    }

    /// Builds candidates from explicit per-pixel lists (each strictly increasing).
    pub fn from_raw(width: u32, height: u32, n_d: usize, depths: Vec<f64>) -> Result<Self, CostVolumeError> {
        if n_d < 2 {
            return Err(CostVolumeError::TooFewCandidates(n_d));
        }
        if depths.len() != width as usize * height as usize * n_d {
            return Err(CostVolumeError::Size(format!("{} candidate depths for {width}x{height}x{n_d}", depths.len())));
        }
        Ok(Self { width, height, n_d, offset: f64::NAN, depths })
    }
}

/// Uniformly spaced candidates over `[(1 - a) D, (1 + a) D]` at every pixel.
pub fn make_depth_candidates(guide: &DepthMap, a: f64, n_d: usize) -> Result<DepthCandidates, CostVolumeError> {
    if n_d < 2 {
        return Err(CostVolumeError::TooFewCandidates(n_d));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(CostVolumeError::BadOffset(a));
    }
    let mut depths = Vec::with_capacity(guide.data().len() * n_d);
    let step = 2.0 * a / (n_d - 1) as f64;
    for (i, &d) in guide.data().iter().enumerate() {
        if d == DEPTH_SENTINEL {
            let w = guide.width();
            return Err(CostVolumeError::IncompleteGuide { x: i as u32 % w, y: i as u32 / w });
        }
        let d = d as f64;
        depths.extend((0..n_d).map(|s| d * ((1.0 - a) + step * s as f64)));
    }
    Ok(DepthCandidates { width: guide.width(), height: guide.height(), n_d, offset: a, depths })
}

/// Rigid map from current-camera coordinates to source-camera coordinates.
#[derive(Debug, Clone, Copy)]
struct CameraToCamera {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraToCamera {
    fn new(pose_src: &Pose, pose_cur: &Pose) -> Self {
        let rel = relative_pose(pose_src, pose_cur);
        Self { rotation: rel.rotation, translation: rel.translation }
    }

    /// Source pixel-index coordinates of current pixel `(x, y)` on the plane at `depth`.
    #[inline]
    fn source_coords(&self, intr: &Intrinsics, x: u32, y: u32, depth: f64) -> Option<(f64, f64)> {
        let p_cur = camera_ray_point(intr, x as f64 + 0.5, y as f64 + 0.5, depth);
        let p = self.rotation * p_cur + self.translation;
        if p.z <= 0.0 {
            return None;
        }
        let u = intr.fx * p.x / p.z + intr.cx;
        let v = intr.fy * p.y / p.z + intr.cy;
        Some((u - 0.5, v - 0.5))
    }
}

fn check_feature_intrinsics(map: &FeatureMap, intr: &Intrinsics, what: &str) -> Result<(), CostVolumeError> {
    if map.width() != intr.width || map.height() != intr.height {
        return Err(CostVolumeError::Size(format!(
            "{what} is {}x{} but feature intrinsics are {}x{}",
            map.width(),
            map.height(),
            intr.width,
            intr.height
        )));
    }
    Ok(())
}

/// Warps `src` (seen from `pose_src`) into the current view assuming the
/// current pixel at index `i` lies on the fronto-parallel plane at
/// `depths[i]`. Out-of-bounds samples are zero and marked invalid.
pub fn warp_feature_to_view(
    src: &FeatureMap,
    pose_src: &Pose,
    pose_cur: &Pose,
    intr_feat: &Intrinsics,
    depths: &[f64],
) -> Result<(FeatureMap, Mask), CostVolumeError> {
    check_feature_intrinsics(src, intr_feat, "source features")?;
    let (w, h) = (intr_feat.width, intr_feat.height);
    if depths.len() != w as usize * h as usize {
        return Err(CostVolumeError::Size(format!("{} plane depths for a {w}x{h} grid", depths.len())));
    }
    let xf = CameraToCamera::new(pose_src, pose_cur);
    let c = src.channels();
    let mut out = FeatureMap::zeros(w, h, c);
    let mut valid = vec![false; depths.len()];
    let mut buf = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let Some((sx, sy)) = xf.source_coords(intr_feat, x, y, depths[i]) else {
                continue;
            };
            if src.sample_into(sx, sy, &mut buf) {
                valid[i] = true;
                for (o, &v) in out.pixel_mut(x, y).iter_mut().zip(&buf) {
                    *o = v as f32;
                }
            }
        }
    }
    Ok((out, Mask::new(w, h, valid)?))
}

/// Warp onto a single fronto-parallel plane.
pub fn warp_feature_to_plane(
    src: &FeatureMap,
    pose_src: &Pose,
    pose_cur: &Pose,
    intr_feat: &Intrinsics,
    depth: f64,
) -> Result<(FeatureMap, Mask), CostVolumeError> {
    let depths = vec![depth; intr_feat.pixel_count()];
    warp_feature_to_view(src, pose_src, pose_cur, intr_feat, &depths)
}

/// Correlation scores, stored slice-major (`n_d × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: u32,
    height: u32,
    n_d: usize,
    scores: Vec<f64>,
    evidence: Vec<bool>,
}

impl CostVolume {
    /// A volume from explicit scores; every pixel is treated as observed.
    pub fn from_scores(width: u32, height: u32, n_d: usize, scores: Vec<f64>) -> Result<Self, CostVolumeError> {
        if scores.len() != width as usize * height as usize * n_d {
            return Err(CostVolumeError::Size(format!("{} scores for {width}x{height}x{n_d}", scores.len())));
        }
        let evidence = vec![true; width as usize * height as usize];
        Ok(Self { width, height, n_d, scores, evidence })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth_count(&self) -> usize {
        self.n_d
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn score(&self, s: usize, x: u32, y: u32) -> f64 {
        self.scores[(s * self.height as usize + y as usize) * self.width as usize + x as usize]
    }

    /// Whether any neighbor projected in-bounds within the pixel's 3×3 window.
    pub fn has_evidence(&self, x: u32, y: u32) -> bool {
        self.evidence[y as usize * self.width as usize + x as usize]
    }

    pub fn evidence_count(&self) -> usize {
        self.evidence.iter().filter(|&&e| e).count()
    }

    /// Writes one PFM per depth slice (`slice_000.pfm`, ...) into `dir`.
    pub fn write_pfm_slices(&self, dir: impl AsRef<Path>) -> Result<(), CostVolumeError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(ImagingError::from)?;
        let plane = self.width as usize * self.height as usize;
        for s in 0..self.n_d {
            let slice: Vec<f32> = self.scores[s * plane..(s + 1) * plane].iter().map(|&v| v as f32).collect();
            let bytes = encode_pfm(self.width, self.height, 1, &slice)?;
            std::fs::write(dir.join(format!("slice_{s:03}.pfm")), bytes).map_err(ImagingError::from)?;
        }
        Ok(())
    }
}

const NORM_EPS: f64 = 1e-8;

/// Raw (unsmoothed) mean cosine correlation per slice plus per-pixel in-bounds flags.
pub fn correlate_neighbors(
    current: &FeatureMap,
    neighbors: &[(Pose, &FeatureMap)],
    pose_cur: &Pose,
    intr_feat: &Intrinsics,
    candidates: &DepthCandidates,
) -> Result<(Vec<f64>, Vec<bool>), CostVolumeError> {
    if neighbors.is_empty() {
        return Err(CostVolumeError::NoNeighbors);
    }
    check_feature_intrinsics(current, intr_feat, "current features")?;
    for (_, f) in neighbors {
        check_feature_intrinsics(f, intr_feat, "neighbor features")?;
        if f.channels() != current.channels() {
            return Err(CostVolumeError::Size("neighbor channel count differs from current".into()));
        }
    }
    if candidates.width() != intr_feat.width || candidates.height() != intr_feat.height {
        return Err(CostVolumeError::Size("candidate grid differs from feature grid".into()));
    }
    let (w, h) = (intr_feat.width, intr_feat.height);
    let plane = w as usize * h as usize;
    let n_d = candidates.count();
    let transforms: Vec<CameraToCamera> = neighbors.iter().map(|(p, _)| CameraToCamera::new(p, pose_cur)).collect();
    let c = current.channels();

    let slices: Vec<(Vec<f64>, Vec<bool>)> = (0..n_d)
        .into_par_iter()
        .map(|s| {
            let mut scores = vec![0.0f64; plane];
            let mut support = vec![false; plane];
            let mut buf = vec![0.0f64; c];
            for y in 0..h {
                for x in 0..w {
                    let i = (y * w + x) as usize;
                    let depth = candidates.at_index(i)[s];
                    let cur = current.pixel(x, y);
                    let (mut sum, mut count) = (0.0f64, 0u32);
                    for (xf, (_, feats)) in transforms.iter().zip(neighbors) {
                        let Some((sx, sy)) = xf.source_coords(intr_feat, x, y, depth) else {
                            continue;
                        };
                        if !feats.sample_into(sx, sy, &mut buf) {
                            continue;
                        }
                        // Blending unit vectors shortens them; renormalize so
                        // fractional disparities are not penalized.
                        let norm = buf.iter().map(|b| b * b).sum::<f64>().sqrt();
                        if norm > NORM_EPS {
                            sum += cur.iter().zip(&buf).map(|(&a, &b)| a as f64 * b).sum::<f64>() / norm;
                        }
                        count += 1;
                    }
                    if count > 0 {
                        scores[i] = sum / count as f64;
                        support[i] = true;
                    }
                }
            }
            (scores, support)
        })
        .collect();

    let mut scores = Vec::with_capacity(plane * n_d);
    let mut support = vec![false; plane];
    for (slice, sup) in slices {
        scores.extend_from_slice(&slice);
        for (a, b) in support.iter_mut().zip(sup) {
            *a |= b;
        }
    }
    Ok((scores, support))
}

/// Mean over the in-image part of each pixel's 3×3 window.
pub fn box_smooth_slice(slice: &[f64], width: u32, height: u32) -> Vec<f64> {
    let (w, h) = (width as i64, height as i64);
    let mut out = Vec::with_capacity(slice.len());
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0f64, 0u32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w && yy < h {
                        s += slice[(yy * w + xx) as usize];
                        n += 1;
                    }
                }
            }
            out.push(s / n as f64);
        }
    }
    out
}

fn dilate3(mask: &[bool], width: u32, height: u32) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (xx, yy) = (x + dx, y + dy);
                    xx >= 0 && yy >= 0 && xx < w && yy < h && mask[(yy * w + xx) as usize]
                })
            });
        }
    }
    out
}

/// Full cost volume: correlation averaged over neighbors, then per-slice
/// 3×3 box smoothing.
pub fn build_cost_volume(
    current: &FeatureMap,
    neighbors: &[(Pose, &FeatureMap)],
    pose_cur: &Pose,
    intr_feat: &Intrinsics,
    candidates: &DepthCandidates,
) -> Result<CostVolume, CostVolumeError> {
    let (raw, support) = correlate_neighbors(current, neighbors, pose_cur, intr_feat, candidates)?;
    let (w, h) = (intr_feat.width, intr_feat.height);
    let plane = w as usize * h as usize;
    let scores: Vec<f64> = raw.par_chunks(plane).flat_map_iter(|slice| box_smooth_slice(slice, w, h)).collect();
    Ok(CostVolume { width: w, height: h, n_d: candidates.count(), scores, evidence: dilate3(&support, w, h) })
}

/// Regressed depth and confidence at feature and full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub feature_depth: DepthMap,
    pub feature_confidence: ScalarMap,
    /// Regressed depth over the candidates' mean, per feature pixel.
    pub feature_ratio: Vec<f32>,
    pub depth: DepthMap,
    pub confidence: ScalarMap,
}

/// Softmax over one pixel's scores scaled by `1 / temperature`; returns
/// `(expected depth, max probability)`.
pub fn soft_argmax(scores: &[f64], depths: &[f64], temperature: f64) -> (f64, f64) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut acc) = (0.0f64, 0.0f64);
    for (&s, &d) in scores.iter().zip(depths) {
        let e = ((s - max) / temperature).exp();
        z += e;
        acc += e * d;
    }
    (acc / z, 1.0 / z)
}

/// Bilinear upsampling by an integer factor with edge clamping, using pixel
/// centers on both grids.
pub fn upsample_bilinear(values: &[f32], width: u32, height: u32, factor: u32) -> Vec<f32> {
    let (ow, oh) = (width * factor, height * factor);
    let f = factor as f64;
    let mut out = Vec::with_capacity(ow as usize * oh as usize);
    for y in 0..oh {
        let sy = ((y as f64 + 0.5) / f - 0.5).clamp(0.0, (height - 1) as f64);
        for x in 0..ow {
            let sx = ((x as f64 + 0.5) / f - 0.5).clamp(0.0, (width - 1) as f64);
            let taps = bilinear_taps(sx, sy, width, height).expect("clamped coordinates are in bounds");
            let v: f64 = taps.iter().map(|&(i, wt)| if wt == 0.0 { 0.0 } else { wt * values[i] as f64 }).sum();
            out.push(v as f32);
        }
    }
    out
}

/// Softmax depth regression; outputs are upsampled by [`FEATURE_STRIDE`].
///
/// Pixels without any neighbor evidence keep the guide depth (the candidates'
/// mean) and report full confidence, mirroring the bootstrap path.
pub fn regress_depth_and_confidence(
    volume: &CostVolume,
    candidates: &DepthCandidates,
    temperature: f64,
) -> Result<DepthEstimate, CostVolumeError> {
    regress_with_factor(volume, candidates, temperature, FEATURE_STRIDE)
}

pub fn regress_with_factor(
    volume: &CostVolume,
    candidates: &DepthCandidates,
    temperature: f64,
    factor: u32,
) -> Result<DepthEstimate, CostVolumeError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(CostVolumeError::BadTemperature(temperature));
    }
    if volume.width != candidates.width || volume.height != candidates.height || volume.n_d != candidates.n_d {
        return Err(CostVolumeError::Size("cost volume and candidates disagree in shape".into()));
    }
    let (w, h) = (volume.width, volume.height);
    let plane = w as usize * h as usize;
    let mut depth = Vec::with_capacity(plane);
    let mut conf = Vec::with_capacity(plane);
    let mut ratio = Vec::with_capacity(plane);
    let mut scores = vec![0.0f64; volume.n_d];
    for i in 0..plane {
        for (s, v) in scores.iter_mut().enumerate() {
            *v = volume.scores[s * plane + i];
        }
        let cands = candidates.at_index(i);
        let (d, p) = soft_argmax(&scores, cands, temperature);
        depth.push(d as f32);
        conf.push(if volume.evidence[i] { p as f32 } else { 1.0 });
        ratio.push((d / (cands.iter().sum::<f64>() / cands.len() as f64)) as f32);
    }
    let full_depth = upsample_bilinear(&depth, w, h, factor);
    let full_conf = upsample_bilinear(&conf, w, h, factor);
    Ok(DepthEstimate {
        feature_depth: DepthMap::from_raw_unchecked(w, h, depth),
        feature_confidence: ScalarMap::new(w, h, conf)?,
        feature_ratio: ratio,
        depth: DepthMap::from_raw_unchecked(w * factor, h * factor, full_depth),
        confidence: ScalarMap::new(w * factor, h * factor, full_conf)?,
    })
}

/// Sweep parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepParams {
    pub n_d: usize,
    pub offset: f64,
    pub temperature: f64,
}

/// Guide-driven depth estimate for the current view: downsample the guide
/// to the feature grid, build candidates and the cost volume, regress.
///
/// Candidates scale with the guide, so the regression is a per-pixel factor
/// on it. The full-resolution depth applies the upsampled factor to the
/// full-resolution guide, which keeps detail finer than the feature grid.
pub fn estimate_depth(
    current: &FeatureMap,
    neighbors: &[(Pose, &FeatureMap)],
    pose_cur: &Pose,
    intr_full: &Intrinsics,
    guide_full: &DepthMap,
    params: &SweepParams,
) -> Result<(DepthEstimate, CostVolume), CostVolumeError> {
    let intr_feat = intr_full.downscaled(FEATURE_STRIDE);
    let guide = guide_full.downsample(FEATURE_STRIDE)?;
    let candidates = make_depth_candidates(&guide, params.offset, params.n_d)?;
    let volume = build_cost_volume(current, neighbors, pose_cur, &intr_feat, &candidates)?;
    let mut estimate = regress_depth_and_confidence(&volume, &candidates, params.temperature)?;
    if guide_full.width() != estimate.depth.width() || guide_full.height() != estimate.depth.height() {
        return Err(CostVolumeError::Size("guide does not match the full-resolution grid".into()));
    }
    let ratio = upsample_bilinear(&estimate.feature_ratio, intr_feat.width, intr_feat.height, FEATURE_STRIDE);
    let depth = guide_full.data().iter().zip(&ratio).map(|(&g, &r)| (g as f64 * r as f64) as f32).collect();
    estimate.depth = DepthMap::from_raw_unchecked(guide_full.width(), guide_full.height(), depth);
    Ok((estimate, volume))
}
