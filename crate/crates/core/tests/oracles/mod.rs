//! Straight-line reimplementations used as test oracles. These deliberately
//! share no code with the library beyond plain data accessors.
#![allow(dead_code)]

use nalgebra::{Matrix4, Vector3};
use splatloop::features::FeatureMap;
use splatloop::geometry::{Intrinsics, Pose};
use splatloop::GaussianSet;

pub fn world_to_camera(pose: &Pose, x: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation.transpose() * (x - pose.translation)
}

/// `(u, v, z)` of a world point; `None` behind the camera.
pub fn project(pose: &Pose, intr: &Intrinsics, x: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let p = world_to_camera(pose, x);
    (p.z > 0.0).then(|| (intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy, p.z))
}

pub fn unproject(pose: &Pose, intr: &Intrinsics, u: f64, v: f64, d: f64) -> Vector3<f64> {
    let p = Vector3::new((u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d);
    pose.rotation * p + pose.translation
}

fn homogeneous(p: &Pose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = p.rotation[(r, c)];
        }
        m[(r, 3)] = p.translation[r];
    }
    m
}

/// Frobenius norm of the 4×4 difference.
pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (homogeneous(a) - homogeneous(b)).norm()
}

/// Bilinear sample in pixel-index coordinates. A coordinate within 1e-9 of an
/// integer counts as that integer; samples needing a texel outside the grid
/// are invalid.
pub fn bilinear(f: &FeatureMap, x: f64, y: f64) -> Option<Vec<f64>> {
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (x, y) = (snap(x), snap(y));
    let (w, h) = (f.width() as f64, f.height() as f64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    if x0 < 0.0 || y0 < 0.0 || x0 > w - 1.0 || y0 > h - 1.0 {
        return None;
    }
    if (fx > 0.0 && x0 + 1.0 > w - 1.0) || (fy > 0.0 && y0 + 1.0 > h - 1.0) {
        return None;
    }
    let mut out = vec![0.0; f.channels()];
    for (dx, dy, wt) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
        if wt == 0.0 {
            continue;
        }
        let px = f.pixel(x0 as u32 + dx, y0 as u32 + dy);
        for (o, &v) in out.iter_mut().zip(px) {
            *o += wt * v as f64;
        }
    }
    Some(out)
}

/// Brute-force plane-sweep volume for a per-pixel guide: cosine between the
/// current feature and the bilinear sample, averaged over valid neighbors.
/// Returns `(candidates[pixel][slice], scores[slice][pixel], evidence[pixel])`.
pub struct BruteVolume {
    pub candidates: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
    pub evidence: Vec<bool>,
}

pub fn brute_volume(
    current: &FeatureMap,
    neighbors: &[(Pose, &FeatureMap)],
    pose_cur: &Pose,
    intr: &Intrinsics,
    guide: &[f64],
    a: f64,
    n_d: usize,
) -> BruteVolume {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let candidates: Vec<Vec<f64>> =
        guide.iter().map(|&d| (0..n_d).map(|s| d * (1.0 - a + 2.0 * a * s as f64 / (n_d - 1) as f64)).collect()).collect();
    let mut raw = vec![vec![0.0; w * h]; n_d];
    let mut support = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for s in 0..n_d {
                let world = unproject(pose_cur, intr, x as f64 + 0.5, y as f64 + 0.5, candidates[i][s]);
                let mut acc = Vec::new();
                for (pose_n, feat) in neighbors {
                    let Some((u, v, _)) = project(pose_n, intr, &world) else { continue };
                    let Some(sample) = bilinear(feat, u - 0.5, v - 0.5) else { continue };
                    let dot: f64 = current.pixel(x as u32, y as u32).iter().zip(&sample).map(|(&c, &n)| c as f64 * n).sum();
                    let norm = sample.iter().map(|v| v * v).sum::<f64>().sqrt();
                    acc.push(if norm > 1e-8 { dot / norm } else { 0.0 });
                }
                if !acc.is_empty() {
                    raw[s][i] = acc.iter().sum::<f64>() / acc.len() as f64;
                    support[i] = true;
                }
            }
        }
    }
    let window = |x: usize, y: usize| {
        let mut out = Vec::new();
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                out.push(yy * w + xx);
            }
        }
        out
    };
    let scores = raw
        .iter()
        .map(|slice| {
            (0..w * h)
                .map(|i| {
                    let idx = window(i % w, i / w);
                    idx.iter().map(|&j| slice[j]).sum::<f64>() / idx.len() as f64
                })
                .collect()
        })
        .collect();
    let evidence = (0..w * h).map(|i| window(i % w, i / w).iter().any(|&j| support[j])).collect();
    BruteVolume { candidates, scores, evidence }
}

/// `(expected depth, max softmax probability)`.
pub fn softmax_regress(scores: &[f64], depths: &[f64], temperature: f64) -> (f64, f64) {
    let exps: Vec<f64> = scores.iter().map(|s| (s / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    let depth = exps.iter().zip(depths).map(|(e, d)| e / z * d).sum();
    let pmax = exps.iter().cloned().fold(0.0, f64::max) / z;
    (depth, pmax)
}

/// Double-loop redundancy test of every local against every global.
pub fn brute_redundant(
    global: &GaussianSet,
    pixels: &[(u32, u32)],
    depths: &[f64],
    pose: &Pose,
    intr: &Intrinsics,
    delta: f64,
) -> Vec<bool> {
    pixels
        .iter()
        .zip(depths)
        .map(|(&(x, y), &d)| {
            global.centers().iter().any(|c| {
                let world = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
                let Some((u, v, z)) = project(pose, intr, &world) else { return false };
                let (fu, fv) = (u.floor(), v.floor());
                let inside = fu >= 0.0 && fv >= 0.0 && fu < intr.width as f64 && fv < intr.height as f64;
                inside && fu as u32 == x && fv as u32 == y && (d - z).abs() < delta * d
            })
        })
        .collect()
}

/// Alpha of one isotropic splat at pixel center `(px, py)`.
pub fn single_splat_alpha(u: f64, v: f64, z: f64, scale: f64, opacity: f64, intr: &Intrinsics, px: f64, py: f64) -> f64 {
    let var_x = (scale * intr.fx / z).powi(2) + 0.09;
    let var_y = (scale * intr.fy / z).powi(2) + 0.09;
    let m = (px - u).powi(2) / var_x + (py - v).powi(2) / var_y;
    if m > 9.0 {
        0.0
    } else {
        (opacity * (-0.5 * m).exp()).min(0.99)
    }
}
