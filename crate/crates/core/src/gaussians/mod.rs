//! Gaussian scene representation, per-pixel decoding, and depth-constrained
//! incremental fusion.

mod ply;

pub use self::ply::{decode_ply, encode_ply, read_ply, write_ply, PlyError};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{unproject_pixel, GeometryError, Intrinsics, Pose};
use crate::imaging::{DepthMap, ImageRGB, Mask, ScalarMap, DEPTH_SENTINEL};

pub const MIN_OPACITY: f32 = 0.1;
pub const MAX_OPACITY: f32 = 0.95;
const QUATERNION_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("depth is unknown at pixel ({x}, {y}); complete it before decoding")]
    IncompleteDepth { x: u32, y: u32 },
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("gaussian {index}: {reason}")]
    Invalid { index: usize, reason: &'static str },
    #[error("fusion delta must lie in [0, 1), got {0}")]
    BadDelta(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One Gaussian, as stored in a [`GaussianSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub center: [f32; 3],
    pub scale: f32,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub color: [f32; 3],
    pub source_step: u32,
}

impl Gaussian {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err("center is not finite");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err("scale must be positive and finite");
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err("opacity must lie in (0, 1]");
        }
        let norm = self.rotation.iter().map(|q| q * q).sum::<f32>().sqrt();
        if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
            return Err("rotation is not a unit quaternion");
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err("color outside [0, 1]");
        }
        Ok(())
    }

    pub fn center_f64(&self) -> Vector3<f64> {
        Vector3::new(self.center[0] as f64, self.center[1] as f64, self.center[2] as f64)
    }
}

/// Structure-of-arrays Gaussian scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    centers: Vec<[f32; 3]>,
    scales: Vec<f32>,
    rotations: Vec<[f32; 4]>,
    opacities: Vec<f32>,
    colors: Vec<[f32; 3]>,
    source_steps: Vec<u32>,
}

impl GaussianSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            centers: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            source_steps: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) -> Result<(), GaussianError> {
        g.validate().map_err(|reason| GaussianError::Invalid { index: self.len(), reason })?;
        self.push_unchecked(g);
        Ok(())
    }

    fn push_unchecked(&mut self, g: Gaussian) {
        self.centers.push(g.center);
        self.scales.push(g.scale);
        self.rotations.push(g.rotation);
        self.opacities.push(g.opacity);
        self.colors.push(g.color);
        self.source_steps.push(g.source_step);
    }

    pub fn from_gaussians(items: impl IntoIterator<Item = Gaussian>) -> Result<Self, GaussianError> {
        let mut set = Self::new();
        for g in items {
            set.push(g)?;
        }
        Ok(set)
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            center: self.centers[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            opacity: self.opacities[i],
            color: self.colors[i],
            source_step: self.source_steps[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Gaussian> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn centers(&self) -> &[[f32; 3]] {
        &self.centers
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn rotations(&self) -> &[[f32; 4]] {
        &self.rotations
    }

    pub fn opacities(&self) -> &[f32] {
        &self.opacities
    }

    pub fn colors(&self) -> &[[f32; 3]] {
        &self.colors
    }

    pub fn source_steps(&self) -> &[u32] {
        &self.source_steps
    }

    pub fn validate(&self) -> Result<(), GaussianError> {
        for i in 0..self.len() {
            self.get(i).validate().map_err(|reason| GaussianError::Invalid { index: i, reason })?;
        }
        Ok(())
    }

    /// Appends `other[i]` for every index in `indices`, in order.
    pub fn extend_selected(&mut self, other: &GaussianSet, indices: impl IntoIterator<Item = usize>) {
        for i in indices {
            self.push_unchecked(other.get(i));
        }
    }
}

/// Gaussians decoded this step, each tied to its pixel and decode depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGaussians {
    pub set: GaussianSet,
    pub pixels: Vec<(u32, u32)>,
    pub depths: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

impl LocalGaussians {
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

/// One Gaussian per pixel: center on the pixel ray at the given depth,
/// pixel color, one-pixel footprint scale, identity rotation, opacity from
/// confidence.
pub fn decode_gaussians(
    image: &ImageRGB,
    depth: &DepthMap,
    confidence: &ScalarMap,
    pose: &Pose,
    intr: &Intrinsics,
    step: u32,
    k_scale: f64,
) -> Result<LocalGaussians, GaussianError> {
    decode_selected(image, depth, confidence, pose, intr, step, k_scale, None)
}

/// As [`decode_gaussians`], restricted to pixels where `select` is true.
#[allow(clippy::too_many_arguments)]
pub fn decode_gaussians_where(
    image: &ImageRGB,
    depth: &DepthMap,
    confidence: &ScalarMap,
    pose: &Pose,
    intr: &Intrinsics,
    step: u32,
    k_scale: f64,
    select: &Mask,
) -> Result<LocalGaussians, GaussianError> {
    decode_selected(image, depth, confidence, pose, intr, step, k_scale, Some(select))
}

#[allow(clippy::too_many_arguments)]
fn decode_selected(
    image: &ImageRGB,
    depth: &DepthMap,
    confidence: &ScalarMap,
    pose: &Pose,
    intr: &Intrinsics,
    step: u32,
    k_scale: f64,
    select: Option<&Mask>,
) -> Result<LocalGaussians, GaussianError> {
    let (w, h) = (intr.width, intr.height);
    let dims_ok = image.width() == w
        && image.height() == h
        && depth.width() == w
        && depth.height() == h
        && confidence.width() == w
        && confidence.height() == h
        && select.is_none_or(|m| m.same_size(w, h));
    if !dims_ok {
        return Err(GaussianError::Size(format!("decode inputs must all be {w}x{h}")));
    }
    if !(k_scale > 0.0 && k_scale.is_finite()) {
        return Err(GaussianError::Size(format!("k_scale must be positive, got {k_scale}")));
    }
    let mut out = LocalGaussians {
        set: GaussianSet::with_capacity(w as usize * h as usize),
        pixels: Vec::new(),
        depths: Vec::new(),
        width: w,
        height: h,
    };
    for y in 0..h {
        for x in 0..w {
            if select.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let d = depth.get(x, y);
            if d == DEPTH_SENTINEL {
                return Err(GaussianError::IncompleteDepth { x, y });
            }
            let d = d as f64;
            let c = unproject_pixel(pose, intr, x as f64 + 0.5, y as f64 + 0.5, d)?;
            let g = Gaussian {
                center: [c.x as f32, c.y as f32, c.z as f32],
                scale: (d * k_scale / intr.fx) as f32,
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity: confidence.get(x, y).clamp(MIN_OPACITY, MAX_OPACITY),
                color: image.get(x, y),
                source_step: step,
            };
            out.set.push(g)?;
            out.pixels.push((x, y));
            out.depths.push(d);
        }
    }
    Ok(out)
}

/// Relative depth tolerance for fusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    delta: f64,
}

impl FusionParams {
    /// `delta = 0` is accepted: nothing is then redundant and every local is kept.
    pub fn new(delta: f64) -> Result<Self, GaussianError> {
        if !(0.0..1.0).contains(&delta) {
            return Err(GaussianError::BadDelta(delta));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Camera depths of the global Gaussians bucketed by the floored pixel they
/// project into (CSR layout).
#[derive(Debug, Clone)]
pub struct PixelBuckets {
    width: u32,
    offsets: Vec<usize>,
    depths: Vec<f64>,
}

impl PixelBuckets {
    pub fn build(global: &GaussianSet, pose: &Pose, intr: &Intrinsics) -> Self {
        let (w, h) = (intr.width, intr.height);
        let projected: Vec<Option<(usize, f64)>> = global
            .centers()
            .par_iter()
            .map(|c| {
                let p = pose.world_to_camera(&Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64));
                if !(p.z > 0.0) {
                    return None;
                }
                let u = (intr.fx * p.x / p.z + intr.cx).floor();
                let v = (intr.fy * p.y / p.z + intr.cy).floor();
                if u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64 {
                    Some((v as usize * w as usize + u as usize, p.z))
                } else {
                    None
                }
            })
            .collect();
        let mut offsets = vec![0usize; w as usize * h as usize + 1];
        for &(pix, _) in projected.iter().flatten() {
            offsets[pix + 1] += 1;
        }
        for i in 1..offsets.len() {
            offsets[i] += offsets[i - 1];
        }
        let mut fill = offsets.clone();
        let mut depths = vec![0.0; *offsets.last().unwrap()];
        for &(pix, z) in projected.iter().flatten() {
            depths[fill[pix]] = z;
            fill[pix] += 1;
        }
        Self { width: w, offsets, depths }
    }

    pub fn at(&self, x: u32, y: u32) -> &[f64] {
        let i = y as usize * self.width as usize + x as usize;
        &self.depths[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Per local Gaussian, whether a global Gaussian in the same pixel already
/// sits within `delta * d_local` of its depth.
pub fn redundant_locals(
    global: &GaussianSet,
    local: &LocalGaussians,
    pose: &Pose,
    intr: &Intrinsics,
    params: FusionParams,
) -> Result<Vec<bool>, GaussianError> {
    if local.width != intr.width || local.height != intr.height {
        return Err(GaussianError::Size(format!(
            "local Gaussians were decoded on {}x{} but intrinsics are {}x{}",
            local.width, local.height, intr.width, intr.height
        )));
    }
    if local.pixels.len() != local.len() || local.depths.len() != local.len() {
        return Err(GaussianError::Size("local pixel/depth arrays disagree with the set".into()));
    }
    let buckets = PixelBuckets::build(global, pose, intr);
    let delta = params.delta();
    Ok(local
        .pixels
        .par_iter()
        .zip(local.depths.par_iter())
        .map(|(&(x, y), &d)| buckets.at(x, y).iter().any(|&dg| (d - dg).abs() < delta * d))
        .collect())
}

/// Appends the non-redundant locals to `global`; returns how many were added.
pub fn fuse_into(
    global: &mut GaussianSet,
    local: &LocalGaussians,
    pose: &Pose,
    intr: &Intrinsics,
    params: FusionParams,
) -> Result<usize, GaussianError> {
    let redundant = redundant_locals(global, local, pose, intr, params)?;
    let before = global.len();
    global.extend_selected(&local.set, redundant.iter().enumerate().filter(|(_, &r)| !r).map(|(i, _)| i));
    Ok(global.len() - before)
}

/// `G_global ∪ {non-redundant locals}`; globals are copied unchanged.
pub fn fuse_incremental(
    global: &GaussianSet,
    local: &LocalGaussians,
    pose: &Pose,
    intr: &Intrinsics,
    params: FusionParams,
) -> Result<GaussianSet, GaussianError> {
    let mut out = global.clone();
    fuse_into(&mut out, local, pose, intr, params)?;
    Ok(out)
}
