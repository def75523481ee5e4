//! Hole filling for rendered views: harmonic depth completion and
//! push-pull color inpainting, plus the traits that let learned models
//! replace either.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{DepthMap, ImageRGB, Mask, DEPTH_SENTINEL};
use crate::renderer::RenderOutput;

pub const DEFAULT_BOOTSTRAP_DEPTH: f64 = 2.0;
const FILL_GRAY: f32 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum CompletionError {
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("mask marks pixel ({x}, {y}) known but its depth is the sentinel")]
    MaskDepthMismatch { x: u32, y: u32 },
}

/// Color, depth and known-pixel mask of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionInput {
    rgb: ImageRGB,
    depth: DepthMap,
    mask: Mask,
}

impl CompletionInput {
    /// Depth values outside the mask are discarded (set to the sentinel).
    pub fn new(rgb: ImageRGB, depth: DepthMap, mask: Mask) -> Result<Self, CompletionError> {
        let (w, h) = (rgb.width(), rgb.height());
        if depth.width() != w || depth.height() != h || !mask.same_size(w, h) {
            return Err(CompletionError::Size(format!(
                "rgb {w}x{h}, depth {}x{}, mask {}x{}",
                depth.width(),
                depth.height(),
                mask.width(),
                mask.height()
            )));
        }
        let mut d = depth.data().to_vec();
        for (i, (v, &known)) in d.iter_mut().zip(mask.data()).enumerate() {
            if known && *v == DEPTH_SENTINEL {
                return Err(CompletionError::MaskDepthMismatch { x: i as u32 % w, y: i as u32 / w });
            }
            if !known {
                *v = DEPTH_SENTINEL;
            }
        }
        Ok(Self { rgb, depth: DepthMap::from_raw_unchecked(w, h, d), mask })
    }

    /// Input whose mask is the render's coverage test.
    pub fn from_render(render: &RenderOutput, tau: f64) -> Self {
        let mask = make_hole_mask(render, tau);
        Self::new(render.color.clone(), render.depth.clone(), mask).expect("render depth is known exactly where alpha >= tau")
    }

    pub fn rgb(&self) -> &ImageRGB {
        &self.rgb
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }
}

/// Known (true) where accumulated alpha reaches `tau`.
pub fn make_hole_mask(render: &RenderOutput, tau: f64) -> Mask {
    let data = render.alpha.data().iter().map(|&a| a as f64 >= tau).collect();
    Mask::new(render.alpha.width(), render.alpha.height(), data).expect("alpha map is sized")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicOptions {
    /// Stop once the largest per-sweep update falls below this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Fill value when no pixel is known.
    pub bootstrap_depth: f64,
}

impl Default for HarmonicOptions {
    fn default() -> Self {
        Self { tolerance: 1e-4, max_sweeps: 10_000, bootstrap_depth: DEFAULT_BOOTSTRAP_DEPTH }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSolution {
    pub depth: DepthMap,
    /// Sweeps run on the full-resolution grid.
    pub sweeps: usize,
    /// Largest absolute update of each full-resolution sweep.
    pub residuals: Vec<f64>,
}

pub fn complete_depth(input: &CompletionInput) -> DepthMap {
    complete_depth_with(input, &HarmonicOptions::default()).depth
}

/// Red-black Gauss-Seidel solve of the Laplace equation over unknown pixels
/// (known pixels Dirichlet, image border Neumann), started from a
/// coarse-to-fine estimate.
pub fn complete_depth_with(input: &CompletionInput, opts: &HarmonicOptions) -> HarmonicSolution {
    let (w, h) = (input.width(), input.height());
    let depth = input.depth();
    if depth.is_complete() {
        return HarmonicSolution { depth: depth.clone(), sweeps: 0, residuals: Vec::new() };
    }
    if input.mask().count_true() == 0 {
        return HarmonicSolution { depth: DepthMap::filled(w, h, opts.bootstrap_depth as f32), sweeps: 0, residuals: Vec::new() };
    }
    let values: Vec<f64> = depth.data().iter().map(|&v| v as f64).collect();
    let known: Vec<bool> = depth.data().iter().map(|&v| v != DEPTH_SENTINEL).collect();
    let (solved, residuals) = cascadic_solve(values, known.clone(), w as usize, h as usize, opts);
    let out = solved.iter().zip(depth.data()).zip(&known).map(|((&s, &orig), &k)| if k { orig } else { s as f32 }).collect();
    HarmonicSolution { depth: DepthMap::from_raw_unchecked(w, h, out), sweeps: residuals.len(), residuals }
}

fn cascadic_solve(values: Vec<f64>, known: Vec<bool>, w: usize, h: usize, opts: &HarmonicOptions) -> (Vec<f64>, Vec<f64>) {
    let init = if w > 2 && h > 2 && known.iter().any(|&k| !k) {
        let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
        let mut cv = vec![0.0; cw * ch];
        let mut ck = vec![false; cw * ch];
        for cy in 0..ch {
            for cx in 0..cw {
                let (mut s, mut n) = (0.0, 0u32);
                for y in 2 * cy..(2 * cy + 2).min(h) {
                    for x in 2 * cx..(2 * cx + 2).min(w) {
                        if known[y * w + x] {
                            s += values[y * w + x];
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    cv[cy * cw + cx] = s / n as f64;
                    ck[cy * cw + cx] = true;
                }
            }
        }
        let (coarse, _) = cascadic_solve(cv, ck, cw, ch, opts);
        let mut v = values;
        for y in 0..h {
            for x in 0..w {
                if !known[y * w + x] {
                    v[y * w + x] = coarse[(y / 2) * cw + x / 2];
                }
            }
        }
        v
    } else {
        let (s, n) = values.iter().zip(&known).filter(|(_, &k)| k).fold((0.0, 0u32), |(s, n), (&v, _)| (s + v, n + 1));
        let mean = s / n.max(1) as f64;
        values.iter().zip(&known).map(|(&v, &k)| if k { v } else { mean }).collect()
    };
    gauss_seidel(init, &known, w, h, opts)
}

struct Cell {
    index: usize,
    neighbors: [usize; 4],
    count: u8,
}

fn gauss_seidel(mut v: Vec<f64>, known: &[bool], w: usize, h: usize, opts: &HarmonicOptions) -> (Vec<f64>, Vec<f64>) {
    let mut colors: [Vec<Cell>; 2] = [Vec::new(), Vec::new()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if known[i] {
                continue;
            }
            let mut cell = Cell { index: i, neighbors: [0; 4], count: 0 };
            let mut add = |j: usize| {
                cell.neighbors[cell.count as usize] = j;
                cell.count += 1;
            };
            if x > 0 {
                add(i - 1);
            }
            if x + 1 < w {
                add(i + 1);
            }
            if y > 0 {
                add(i - w);
            }
            if y + 1 < h {
                add(i + w);
            }
            colors[(x + y) % 2].push(cell);
        }
    }
    let mut residuals = Vec::new();
    let mut updates = Vec::new();
    for _ in 0..opts.max_sweeps {
        let mut max_update = 0.0f64;
        for cells in &colors {
            updates.clear();
            cells
                .par_iter()
                .with_min_len(1024)
                .map(|c| {
                    let s: f64 = c.neighbors[..c.count as usize].iter().map(|&j| v[j]).sum();
                    s / c.count as f64
                })
                .collect_into_vec(&mut updates);
            for (c, &nv) in cells.iter().zip(&updates) {
                max_update = max_update.max((nv - v[c.index]).abs());
                v[c.index] = nv;
            }
        }
        residuals.push(max_update);
        if max_update < opts.tolerance {
            break;
        }
    }
    (v, residuals)
}

/// Push-pull fill: validity-weighted pyramid averages on the way down,
/// bilinear fill of unknown pixels on the way up.
pub fn inpaint_color(input: &CompletionInput) -> ImageRGB {
    let (w, h) = (input.width() as usize, input.height() as usize);
    let mask = input.mask().data();
    if mask.iter().all(|&k| k) {
        return input.rgb().clone();
    }
    if mask.iter().all(|&k| !k) {
        return ImageRGB::filled(w as u32, h as u32, [FILL_GRAY; 3]);
    }
    let src = input.rgb().data();
    let mut levels = vec![Level {
        w,
        h,
        color: (0..w * h)
            .map(|i| if mask[i] { [src[3 * i] as f64, src[3 * i + 1] as f64, src[3 * i + 2] as f64] } else { [0.0; 3] })
            .collect(),
        weight: mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
    }];
    while levels.last().unwrap().weight.iter().any(|&wt| wt == 0.0) {
        let next = levels.last().unwrap().pull();
        levels.push(next);
    }
    for k in (0..levels.len() - 1).rev() {
        let (fine, coarse) = levels.split_at_mut(k + 1);
        fine[k].push_from(&coarse[0]);
    }
    let fine = &levels[0];
    let data = (0..w * h)
        .flat_map(|i| if mask[i] { [src[3 * i], src[3 * i + 1], src[3 * i + 2]] } else { fine.color[i].map(|c| c as f32) })
        .collect();
    ImageRGB::new(w as u32, h as u32, data).expect("sized")
}

struct Level {
    w: usize,
    h: usize,
    color: Vec<[f64; 3]>,
    weight: Vec<f64>,
}

impl Level {
    fn pull(&self) -> Level {
        let (cw, ch) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut color = vec![[0.0; 3]; cw * ch];
        let mut weight = vec![0.0; cw * ch];
        for cy in 0..ch {
            for cx in 0..cw {
                let (mut acc, mut wsum) = ([0.0f64; 3], 0.0f64);
                for y in 2 * cy..(2 * cy + 2).min(self.h) {
                    for x in 2 * cx..(2 * cx + 2).min(self.w) {
                        let i = y * self.w + x;
                        let wt = self.weight[i];
                        if wt > 0.0 {
                            for c in 0..3 {
                                acc[c] += wt * self.color[i][c];
                            }
                            wsum += wt;
                        }
                    }
                }
                if wsum > 0.0 {
                    color[cy * cw + cx] = acc.map(|a| a / wsum);
                    weight[cy * cw + cx] = wsum;
                }
            }
        }
        Level { w: cw, h: ch, color, weight }
    }

    /// Fills unknown pixels from the (complete) coarser level with 9-3-3-1
    /// bilinear weights.
    fn push_from(&mut self, coarse: &Level) {
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                if self.weight[i] > 0.0 {
                    continue;
                }
                let (px, py) = (x / 2, y / 2);
                let nx = clamp(px as isize + if x % 2 == 0 { -1 } else { 1 }, coarse.w);
                let ny = clamp(py as isize + if y % 2 == 0 { -1 } else { 1 }, coarse.h);
                let taps = [(px, py, 9.0), (nx, py, 3.0), (px, ny, 3.0), (nx, ny, 1.0)];
                let mut acc = [0.0f64; 3];
                for (tx, ty, wt) in taps {
                    let cc = coarse.color[ty * coarse.w + tx];
                    for c in 0..3 {
                        acc[c] += wt * cc[c];
                    }
                }
                self.color[i] = acc.map(|a| a / 16.0);
                self.weight[i] = 1.0;
            }
        }
    }
}

/// What a completion model may condition on besides the view itself.
#[derive(Debug, Clone, Copy)]
pub struct CompletionContext<'a> {
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
    pub prompt: &'a str,
}

/// Fills unknown color pixels; known pixels must be returned unchanged.
pub trait Inpainter: Send + Sync {
    fn inpaint(&self, input: &CompletionInput, ctx: &CompletionContext<'_>) -> ImageRGB;
}

/// Fills unknown depth pixels with positive values; known pixels unchanged.
pub trait DepthCompleter: Send + Sync {
    fn complete(&self, input: &CompletionInput, ctx: &CompletionContext<'_>) -> DepthMap;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PushPullInpainter;

impl Inpainter for PushPullInpainter {
    fn inpaint(&self, input: &CompletionInput, _ctx: &CompletionContext<'_>) -> ImageRGB {
        inpaint_color(input)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HarmonicCompleter {
    pub options: HarmonicOptions,
}

impl HarmonicCompleter {
    pub fn with_bootstrap(bootstrap_depth: f64) -> Self {
        Self { options: HarmonicOptions { bootstrap_depth, ..HarmonicOptions::default() } }
    }
}

impl DepthCompleter for HarmonicCompleter {
    fn complete(&self, input: &CompletionInput, _ctx: &CompletionContext<'_>) -> DepthMap {
        complete_depth_with(input, &self.options).depth
    }
}
