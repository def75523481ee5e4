//! Tile-based CPU splat rasterizer.
//!
//! Gaussians are isotropic, so the projected covariance is diagonal:
//! `σ² = (scale · f / z)² + 0.3²` per axis. Each 16×16 tile keeps its
//! overlapping splats sorted by `(z, index)` and composites front to back.

use rayon::prelude::*;

use crate::gaussians::GaussianSet;
use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{DepthMap, ImageRGB, ScalarMap, DEPTH_SENTINEL};

pub const TILE_SIZE: u32 = 16;
pub const LOW_PASS_PX: f64 = 0.3;
pub const MAX_SPLAT_WEIGHT: f64 = 0.99;
/// Squared Mahalanobis cutoff (3σ).
const CUTOFF_M2: f64 = 9.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: ImageRGB,
    /// Alpha-weighted expected depth; sentinel where alpha < τ.
    pub depth: DepthMap,
    pub alpha: ScalarMap,
}

#[derive(Debug, Clone, Copy)]
struct Splat {
    u: f64,
    v: f64,
    inv_var_x: f64,
    inv_var_y: f64,
    z: f64,
    opacity: f64,
    color: [f64; 3],
    index: usize,
}

fn project_splats(g: &GaussianSet, pose: &Pose, intr: &Intrinsics) -> Vec<(Splat, [u32; 4])> {
    let (w, h) = (intr.width as f64, intr.height as f64);
    (0..g.len())
        .into_par_iter()
        .filter_map(|i| {
            let gs = g.get(i);
            let p = pose.world_to_camera(&gs.center_f64());
            if !(p.z > 0.0) {
                return None;
            }
            let u = intr.fx * p.x / p.z + intr.cx;
            let v = intr.fy * p.y / p.z + intr.cy;
            let s = gs.scale as f64;
            let var_x = (s * intr.fx / p.z).powi(2) + LOW_PASS_PX * LOW_PASS_PX;
            let var_y = (s * intr.fy / p.z).powi(2) + LOW_PASS_PX * LOW_PASS_PX;
            let (rx, ry) = (3.0 * var_x.sqrt(), 3.0 * var_y.sqrt());
            // Pixel centers (px + 0.5) inside [u - r, u + r].
            let x0 = (u - rx - 0.5).ceil().max(0.0);
            let x1 = (u + rx - 0.5).floor().min(w - 1.0);
            let y0 = (v - ry - 0.5).ceil().max(0.0);
            let y1 = (v + ry - 0.5).floor().min(h - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            let splat = Splat {
                u,
                v,
                inv_var_x: 1.0 / var_x,
                inv_var_y: 1.0 / var_y,
                z: p.z,
                opacity: gs.opacity as f64,
                color: gs.color.map(|c| c as f64),
                index: i,
            };
            Some((splat, [x0 as u32, x1 as u32, y0 as u32, y1 as u32]))
        })
        .collect()
}

struct TileResult {
    x0: u32,
    y0: u32,
    tw: u32,
    th: u32,
    color: Vec<[f32; 3]>,
    depth: Vec<f32>,
    alpha: Vec<f32>,
}

fn render_tile(splats: &[Splat], list: &[u32], x0: u32, y0: u32, tw: u32, th: u32, tau: f64) -> TileResult {
    let n = (tw * th) as usize;
    let mut out = TileResult { x0, y0, tw, th, color: vec![[0.0; 3]; n], depth: vec![DEPTH_SENTINEL; n], alpha: vec![0.0; n] };
    for ty in 0..th {
        for tx in 0..tw {
            let (px, py) = ((x0 + tx) as f64 + 0.5, (y0 + ty) as f64 + 0.5);
            let mut t = 1.0f64;
            let mut color = [0.0f64; 3];
            let mut depth_acc = 0.0f64;
            let mut alpha = 0.0f64;
            for &k in list {
                let s = &splats[k as usize];
                let (dx, dy) = (px - s.u, py - s.v);
                let m = dx * dx * s.inv_var_x + dy * dy * s.inv_var_y;
                if m > CUTOFF_M2 {
                    continue;
                }
                let w = (s.opacity * (-0.5 * m).exp()).min(MAX_SPLAT_WEIGHT);
                let tw_ = t * w;
                for c in 0..3 {
                    color[c] += tw_ * s.color[c];
                }
                depth_acc += tw_ * s.z;
                alpha += tw_;
                t *= 1.0 - w;
            }
            let i = (ty * tw + tx) as usize;
            out.color[i] = color.map(|c| c as f32);
            let a = alpha.min(1.0) as f32;
            out.alpha[i] = a;
            // Decide coverage on the stored value so masks derived from alpha agree.
            if a as f64 >= tau && a > 0.0 {
                out.depth[i] = (depth_acc / alpha) as f32;
            }
        }
    }
    out
}

/// Renders color, expected depth and coverage of `g` seen from `pose`.
pub fn render_view(g: &GaussianSet, pose: &Pose, intr: &Intrinsics, tau: f64) -> RenderOutput {
    let (w, h) = (intr.width, intr.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let projected = project_splats(g, pose, intr);

    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, (_, [x0, x1, y0, y1])) in projected.iter().enumerate() {
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                lists[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }
    let splats: Vec<Splat> = projected.into_iter().map(|(s, _)| s).collect();

    let tiles: Vec<TileResult> = lists
        .into_par_iter()
        .enumerate()
        .map(|(ti, mut list)| {
            list.sort_by(|&a, &b| {
                let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
                sa.z.total_cmp(&sb.z).then(sa.index.cmp(&sb.index))
            });
            let (tx, ty) = (ti as u32 % tiles_x, ti as u32 / tiles_x);
            let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
            render_tile(&splats, &list, x0, y0, TILE_SIZE.min(w - x0), TILE_SIZE.min(h - y0), tau)
        })
        .collect();

    let n = w as usize * h as usize;
    let mut color = vec![0.0f32; n * 3];
    let mut depth = vec![DEPTH_SENTINEL; n];
    let mut alpha = vec![0.0f32; n];
    for t in tiles {
        for ty in 0..t.th {
            for tx in 0..t.tw {
                let src = (ty * t.tw + tx) as usize;
                let dst = ((t.y0 + ty) * w + t.x0 + tx) as usize;
                color[dst * 3..dst * 3 + 3].copy_from_slice(&t.color[src]);
                depth[dst] = t.depth[src];
                alpha[dst] = t.alpha[src];
            }
        }
    }
    RenderOutput {
        color: ImageRGB::new(w, h, color).expect("sized"),
        depth: DepthMap::from_raw_unchecked(w, h, depth),
        alpha: ScalarMap::new(w, h, alpha).expect("sized"),
    }
}
