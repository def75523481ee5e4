//! Synthetic ground truth: procedurally textured rectangles ray-cast to
//! RGB-D, plus standard camera paths.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{CompletionContext, CompletionInput, Inpainter};
use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{DepthMap, ImageRGB};

pub const BACKGROUND_DEPTH: f32 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// Squares of side `period` alternating between `a` and `b`.
    Checker { period: f64, a: [f32; 3], b: [f32; 3] },
    /// Triangle wave along the first texture axis.
    Gradient { period: f64, a: [f32; 3], b: [f32; 3] },
    /// `base + tint * Σ amp · sin(2π (fu s + fv t) + phase)`, clamped.
    Waves { base: [f32; 3], tint: [f32; 3], components: Vec<WaveComponent> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveComponent {
    pub fu: f64,
    pub fv: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl Texture {
    /// Color at metric texture coordinates `(s, t)`.
    pub fn eval(&self, s: f64, t: f64) -> [f32; 3] {
        match self {
            Texture::Checker { period, a, b } => {
                let parity = ((s / period).floor() + (t / period).floor()).rem_euclid(2.0);
                if parity == 0.0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Gradient { period, a, b } => {
                let f = ((s / period).rem_euclid(1.0) * 2.0 - 1.0).abs();
                std::array::from_fn(|c| (a[c] as f64 + (b[c] as f64 - a[c] as f64) * f) as f32)
            }
            Texture::Waves { base, tint, components } => {
                let v: f64 = components.iter().map(|w| w.amplitude * (2.0 * PI * (w.fu * s + w.fv * t) + w.phase).sin()).sum();
                std::array::from_fn(|c| (base[c] as f64 + tint[c] as f64 * v).clamp(0.0, 1.0) as f32)
            }
        }
    }
}

/// Finite textured rectangle `origin + a·edge_u + b·edge_v`, `a, b ∈ [0, 1]`,
/// with orthogonal edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub origin: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    pub texture: Texture,
}

impl Rect {
    pub fn new(origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>, texture: Texture) -> Self {
        assert!(edge_u.norm() > 0.0 && edge_v.norm() > 0.0, "rectangle edges must have positive length");
        assert!(edge_u.dot(&edge_v).abs() <= 1e-9 * edge_u.norm() * edge_v.norm(), "rectangle edges must be orthogonal");
        Self { origin: origin.into(), edge_u: edge_u.into(), edge_v: edge_v.into(), texture }
    }

    /// Ray parameter and texture coordinates of the hit, if any.
    pub fn intersect(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let (origin, eu, ev) = (Vector3::from(self.origin), Vector3::from(self.edge_u), Vector3::from(self.edge_v));
        let n = eu.cross(&ev);
        let denom = n.dot(dir);
        if denom == 0.0 {
            return None;
        }
        let lambda = n.dot(&(origin - o)) / denom;
        if !(lambda > 1e-9) {
            return None;
        }
        let rel = o + dir * lambda - origin;
        let (lu, lv) = (eu.norm_squared(), ev.norm_squared());
        let a = rel.dot(&eu) / lu;
        let b = rel.dot(&ev) / lv;
        if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)) {
            return None;
        }
        Some((lambda, a * lu.sqrt(), b * lv.sqrt()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub rects: Vec<Rect>,
    pub background: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Room,
    Corridor,
    PlaneField,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "room" => Ok(SceneKind::Room),
            "corridor" => Ok(SceneKind::Corridor),
            "plane_field" | "plane-field" => Ok(SceneKind::PlaneField),
            other => Err(format!("unknown scene kind `{other}` (room, corridor, plane_field)")),
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// Smooth multi-directional waves with wavelengths in `[min_wavelength, 2·min_wavelength]`.
pub fn random_waves(rng: &mut ChaCha8Rng, min_wavelength: f64) -> Texture {
    let components = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let f = 1.0 / (min_wavelength * rng.random_range(1.0..2.0));
            WaveComponent {
                fu: f * theta.cos(),
                fv: f * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: rng.random_range(0.25..0.4),
            }
        })
        .collect();
    let tint = [rng.random_range(0.15..0.3), rng.random_range(0.15..0.3), rng.random_range(0.15..0.3)];
    Texture::Waves { base: random_color(rng, 0.35, 0.65), tint, components }
}

/// Closed axis-aligned box `[lo, hi]` with one rectangle per face, normals
/// facing inward.
fn closed_box(lo: Vector3<f64>, hi: Vector3<f64>, mut texture: impl FnMut() -> Texture) -> Vec<Rect> {
    let d = hi - lo;
    let (ex, ey, ez) = (Vector3::new(d.x, 0.0, 0.0), Vector3::new(0.0, d.y, 0.0), Vector3::new(0.0, 0.0, d.z));
    vec![
        Rect::new(lo, ex, ey, texture()),      // z = lo (back)
        Rect::new(lo + ez, ex, ey, texture()), // z = hi (front)
        Rect::new(lo, ey, ez, texture()),      // x = lo
        Rect::new(lo + ex, ey, ez, texture()), // x = hi
        Rect::new(lo, ex, ez, texture()),      // y = lo (ceiling, +y is down)
        Rect::new(lo + ey, ex, ez, texture()), // y = hi (floor)
    ]
}

pub fn build_synthetic_scene(seed: u64, kind: SceneKind) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let background = random_color(&mut rng, 0.0, 0.2);
    let rects = match kind {
        SceneKind::Room => {
            let half = Vector3::new(rng.random_range(1.8..2.4), rng.random_range(1.1..1.4), rng.random_range(1.8..2.4));
            closed_box(-half, half, || random_waves(&mut rng, 1.0))
        }
        SceneKind::Corridor => {
            let (hw, hh, len) = (rng.random_range(0.7..1.0), rng.random_range(1.0..1.3), rng.random_range(8.0..12.0));
            closed_box(Vector3::new(-hw, -hh, -1.0), Vector3::new(hw, hh, len), || {
                if rng.random_bool(0.5) {
                    random_waves(&mut rng, 0.8)
                } else {
                    Texture::Checker {
                        period: rng.random_range(0.4..0.8),
                        a: random_color(&mut rng, 0.2, 0.5),
                        b: random_color(&mut rng, 0.5, 0.8),
                    }
                }
            })
        }
        SceneKind::PlaneField => {
            let n = rng.random_range(3..6);
            (0..n)
                .map(|i| {
                    let z = 2.0 + i as f64 * rng.random_range(0.8..1.5);
                    let (w, h) = (rng.random_range(1.0..2.5), rng.random_range(1.0..2.5));
                    let center = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), z);
                    let texture = if i % 2 == 0 {
                        Texture::Checker {
                            period: rng.random_range(0.2..0.5),
                            a: random_color(&mut rng, 0.1, 0.5),
                            b: random_color(&mut rng, 0.5, 0.9),
                        }
                    } else {
                        Texture::Gradient {
                            period: rng.random_range(0.5..1.5),
                            a: random_color(&mut rng, 0.1, 0.5),
                            b: random_color(&mut rng, 0.5, 0.9),
                        }
                    };
                    Rect::new(center - Vector3::new(w / 2.0, h / 2.0, 0.0), Vector3::new(w, 0.0, 0.0), Vector3::new(0.0, h, 0.0), texture)
                })
                .collect()
        }
    };
    SyntheticScene { rects, background }
}

/// A single fronto-parallel `size × size` square at depth `z`, centered on the z axis.
pub fn textured_plane(z: f64, size: f64, texture: Texture) -> SyntheticScene {
    SyntheticScene {
        rects: vec![Rect::new(
            Vector3::new(-size / 2.0, -size / 2.0, z),
            Vector3::new(size, 0.0, 0.0),
            Vector3::new(0.0, size, 0.0),
            texture,
        )],
        background: [0.0; 3],
    }
}

/// Nearest hit along the ray through pixel center `(x + 0.5, y + 0.5)`:
/// `(color, camera depth)`; misses give the background at [`BACKGROUND_DEPTH`].
pub fn cast_pixel(scene: &SyntheticScene, pose: &Pose, intr: &Intrinsics, x: u32, y: u32) -> ([f32; 3], f32) {
    let d_cam = Vector3::new((x as f64 + 0.5 - intr.cx) / intr.fx, (y as f64 + 0.5 - intr.cy) / intr.fy, 1.0);
    let dir = pose.rotation * d_cam;
    let o = pose.center();
    let mut best: Option<(f64, &Rect, f64, f64)> = None;
    for r in &scene.rects {
        if let Some((lambda, s, t)) = r.intersect(&o, &dir) {
            if best.is_none_or(|b| lambda < b.0) {
                best = Some((lambda, r, s, t));
            }
        }
    }
    match best {
        // With a unit-z camera ray, the ray parameter is the camera depth.
        Some((lambda, r, s, t)) => (r.texture.eval(s, t), lambda as f32),
        None => (scene.background, BACKGROUND_DEPTH),
    }
}

pub fn render_ground_truth(scene: &SyntheticScene, pose: &Pose, intr: &Intrinsics) -> (ImageRGB, DepthMap) {
    let (w, h) = (intr.width, intr.height);
    let pixels: Vec<([f32; 3], f32)> = (0..w as usize * h as usize)
        .into_par_iter()
        .map(|i| cast_pixel(scene, pose, intr, (i % w as usize) as u32, (i / w as usize) as u32))
        .collect();
    let color = pixels.iter().flat_map(|(c, _)| *c).collect();
    let depth = pixels.iter().map(|(_, d)| *d).collect();
    (ImageRGB::new(w, h, color).expect("sized"), DepthMap::new(w, h, depth).expect("ray-cast depths are positive"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Panorama,
    WalkForward,
    Orbit,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "panorama" => Ok(TrajectoryKind::Panorama),
            "walk_forward" | "walk-forward" | "walk" => Ok(TrajectoryKind::WalkForward),
            "orbit" => Ok(TrajectoryKind::Orbit),
            other => Err(format!("unknown trajectory `{other}` (panorama, walk_forward, orbit)")),
        }
    }
}

pub const WALK_STEP: f64 = 0.2;

/// `n` yaw rotations spanning 360° about `center`.
pub fn panorama(n: usize, center: Vector3<f64>) -> Vec<Pose> {
    (0..n).map(|k| Pose::from_yaw(2.0 * PI * k as f64 / n as f64, center)).collect()
}

/// `n` poses stepping [`WALK_STEP`] along the initial viewing direction.
pub fn walk_forward(n: usize, start: &Pose) -> Vec<Pose> {
    let forward = start.rotation.column(2).into_owned();
    (0..n).map(|k| Pose { rotation: start.rotation, translation: start.translation + forward * (WALK_STEP * k as f64) }).collect()
}

/// `n` poses on a horizontal circle of `radius` around `target`, each looking at it.
pub fn orbit(n: usize, target: Vector3<f64>, radius: f64) -> Vec<Pose> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            let eye = target + Vector3::new(radius * a.sin(), 0.0, -radius * a.cos());
            Pose::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0)).expect("horizontal orbit never looks along up")
        })
        .collect()
}

/// Default paths: panorama at the origin, walk from the origin along +z,
/// orbit of radius 1 around `(0, 0, 1)`.
pub fn standard_trajectories(kind: TrajectoryKind, n: usize) -> Vec<Pose> {
    match kind {
        TrajectoryKind::Panorama => panorama(n, Vector3::zeros()),
        TrajectoryKind::WalkForward => walk_forward(n, &Pose::identity()),
        TrajectoryKind::Orbit => orbit(n, Vector3::new(0.0, 0.0, 1.0), 1.0),
    }
}

/// Inpainter that fills holes with the scene's true appearance: an upper
/// bound standing in for a perfect generative model.
#[derive(Debug, Clone)]
pub struct GroundTruthInpainter {
    pub scene: SyntheticScene,
}

impl Inpainter for GroundTruthInpainter {
    fn inpaint(&self, input: &CompletionInput, ctx: &CompletionContext<'_>) -> ImageRGB {
        let mask = input.mask();
        let rgb = input.rgb();
        ImageRGB::from_fn(input.width(), input.height(), |x, y| {
            if mask.get(x, y) {
                rgb.get(x, y)
            } else {
                cast_pixel(&self.scene, ctx.pose, ctx.intrinsics, x, y).0
            }
        })
    }
}
