//! The interaction loop: render the scene at a new pose, fill the holes,
//! infer depth with the guided cost volume, decode and fuse Gaussians.

mod persist;

pub use self::persist::{load_session, save_session, PersistError};

use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{
    complete_depth_with, CompletionContext, CompletionInput, DepthCompleter, HarmonicOptions, Inpainter, PushPullInpainter,
};
use crate::costvolume::{estimate_depth, CostVolume, SweepParams};
use crate::features::{extract_features, FEATURE_STRIDE};
use crate::gaussians::{decode_gaussians, decode_gaussians_where, fuse_into, FusionParams, GaussianSet};
use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{DepthMap, ImageRGB, Mask, ScalarMap, DEPTH_SENTINEL};
use crate::memory::FeatureMemory;
use crate::renderer::{render_view, RenderOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Depth candidates per pixel.
    pub n_d: usize,
    /// Candidate range half-width as a fraction of the guide depth.
    pub a: f64,
    /// Memory neighbors used for the cost volume.
    pub n_v: usize,
    /// Softmax temperature of the depth regression.
    pub temperature: f64,
    /// Relative depth tolerance of fusion.
    pub delta: f64,
    /// Coverage threshold separating rendered pixels from holes.
    pub tau: f64,
    pub k_scale: f64,
    pub bootstrap_depth: f64,
    /// Weight of the rotation block in the pose distance.
    pub rotation_weight: f64,
    /// Decode only hole pixels instead of every pixel.
    pub decode_holes_only: bool,
    pub max_memory_entries: Option<usize>,
    /// `[width, height]`; taken from the first image when unset.
    pub image_size: Option<[u32; 2]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_d: 16,
            a: 0.25,
            n_v: 2,
            temperature: 0.01,
            delta: 0.05,
            tau: 0.5,
            k_scale: 1.0,
            bootstrap_depth: 2.0,
            rotation_weight: 1.0,
            decode_holes_only: false,
            max_memory_entries: None,
            image_size: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |field: &'static str, why: String| Err(PipelineError::Config { field, message: why });
        if self.n_d < 2 {
            return bad("n_d", format!("must be at least 2, got {}", self.n_d));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad("a", format!("must lie in (0, 1), got {}", self.a));
        }
        if self.n_v < 1 {
            return bad("n_v", "must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad("delta", format!("must lie in [0, 1), got {}", self.delta));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        if !(self.k_scale > 0.0 && self.k_scale.is_finite()) {
            return bad("k_scale", format!("must be positive, got {}", self.k_scale));
        }
        if !(self.bootstrap_depth > 0.0 && self.bootstrap_depth.is_finite()) {
            return bad("bootstrap_depth", format!("must be positive, got {}", self.bootstrap_depth));
        }
        if !(self.rotation_weight >= 0.0 && self.rotation_weight.is_finite()) {
            return bad("rotation_weight", format!("must be non-negative, got {}", self.rotation_weight));
        }
        if self.max_memory_entries == Some(0) {
            return bad("max_memory_entries", "must be at least 1 when set".into());
        }
        if let Some([w, h]) = self.image_size {
            if w == 0 || h == 0 || w % FEATURE_STRIDE != 0 || h % FEATURE_STRIDE != 0 {
                return bad("image_size", format!("{w}x{h} must be non-empty and divisible by {FEATURE_STRIDE}"));
            }
        }
        Ok(())
    }

    pub fn sweep(&self) -> SweepParams {
        SweepParams { n_d: self.n_d, offset: self.a, temperature: self.temperature }
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams::new(self.delta).expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config { field: "toml", message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loop stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Render,
    Inpaint,
    Depth,
    /// Features, cost-volume depth and Gaussian decoding.
    Splat,
    Fuse,
    Memory,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Init => "init",
            Stage::Render => "render",
            Stage::Inpaint => "inpaint",
            Stage::Depth => "depth",
            Stage::Splat => "splat",
            Stage::Fuse => "fuse",
            Stage::Memory => "memory",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error("initial depth is unknown at pixel ({x}, {y}); supply a complete depth map")]
    NeedsCompleteDepth { x: u32, y: u32 },
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    fn at(stage: Stage) -> impl FnOnce(Box<dyn std::error::Error + Send + Sync>) -> Self {
        move |source| PipelineError::Stage { stage, source }
    }

    fn wrap<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> Self {
        move |e| PipelineError::Stage { stage, source: Box::new(e) }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::NeedsCompleteDepth { .. } | PipelineError::Size(_) => Some(Stage::Init),
            _ => None,
        }
    }
}

/// Wall-clock milliseconds per stage of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub render_ms: f64,
    pub inpaint_ms: f64,
    pub depth_ms: f64,
    pub stepsplat_ms: f64,
    pub fuse_ms: f64,
    pub total_ms: f64,
}

impl StepTiming {
    /// Depth completion, depth inference and fusion.
    pub fn geometry_ms(&self) -> f64 {
        self.depth_ms + self.stepsplat_ms + self.fuse_ms
    }

    pub fn appearance_ms(&self) -> f64 {
        self.inpaint_ms
    }
}

/// Published per-interaction GPU timings of the learned system, in seconds,
/// for side-by-side display only.
pub mod reference_timing {
    pub const INPAINT_S: f64 = 0.22;
    pub const DEPTH_S: f64 = 0.24;
    pub const SPLAT_S: f64 = 0.26;
    pub const GEOMETRY_S: f64 = 0.50;
    pub const APPEARANCE_S: f64 = 0.22;
    pub const TOTAL_S: f64 = 0.72;
}

/// Writes one CSV row per step with the [`StepTiming`] columns.
pub fn write_timing_csv<W: Write>(out: W, timings: &[StepTiming]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if timings.is_empty() {
        w.write_record(["render_ms", "inpaint_ms", "depth_ms", "stepsplat_ms", "fuse_ms", "total_ms"])?;
    }
    for t in timings {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub global: GaussianSet,
    pub memory: FeatureMemory,
    pub config: PipelineConfig,
    pub step_count: u64,
    pub intrinsics: Intrinsics,
    /// Prompt of every step after the initial view.
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// The scene as seen from the step's pose before fusion.
    pub render: RenderOutput,
    pub timing: StepTiming,
    pub added: usize,
    pub hole_pixels: usize,
    /// Present when the memory supplied neighbors.
    pub cost_volume: Option<CostVolume>,
}

/// The loop with pluggable completion models.
pub struct Pipeline {
    pub inpainter: Box<dyn Inpainter>,
    /// `None` uses harmonic completion with the session's bootstrap depth.
    pub depth_completer: Option<Box<dyn DepthCompleter>>,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self { inpainter: Box::new(PushPullInpainter), depth_completer: None }
    }
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline").finish_non_exhaustive()
    }
}

fn check_image_dims(width: u32, height: u32, intr: &Intrinsics, config: &PipelineConfig) -> Result<(), PipelineError> {
    if width != intr.width || height != intr.height {
        return Err(PipelineError::Size(format!("image is {width}x{height} but intrinsics are {}x{}", intr.width, intr.height)));
    }
    if width % FEATURE_STRIDE != 0 || height % FEATURE_STRIDE != 0 {
        return Err(PipelineError::Size(format!("image {width}x{height} must have sides divisible by {FEATURE_STRIDE}")));
    }
    if let Some([w, h]) = config.image_size {
        if (w, h) != (width, height) {
            return Err(PipelineError::Size(format!("config image_size is {w}x{h} but the image is {width}x{height}")));
        }
    }
    Ok(())
}

impl Pipeline {
    pub fn with_inpainter(inpainter: Box<dyn Inpainter>) -> Self {
        Self { inpainter, depth_completer: None }
    }

    /// Starts a session from one view with externally supplied depth.
    pub fn init_session(
        &self,
        rgb: &ImageRGB,
        depth: &DepthMap,
        pose: &Pose,
        intr: &Intrinsics,
        config: PipelineConfig,
    ) -> Result<SessionState, PipelineError> {
        config.validate()?;
        intr.validate().map_err(|e| PipelineError::Size(e.to_string()))?;
        check_image_dims(rgb.width(), rgb.height(), intr, &config)?;
        if depth.width() != rgb.width() || depth.height() != rgb.height() {
            return Err(PipelineError::Size(format!(
                "depth is {}x{} but the image is {}x{}",
                depth.width(),
                depth.height(),
                rgb.width(),
                rgb.height()
            )));
        }
        if let Some(i) = depth.data().iter().position(|&d| d == DEPTH_SENTINEL) {
            return Err(PipelineError::NeedsCompleteDepth { x: i as u32 % depth.width(), y: i as u32 / depth.width() });
        }
        let mut config = config;
        config.image_size = Some([rgb.width(), rgb.height()]);
        let feats = extract_features(rgb).map_err(PipelineError::wrap(Stage::Init))?;
        let mut memory = FeatureMemory::with_capacity_limit(config.max_memory_entries);
        memory.insert(*pose, feats.matching, 0).map_err(PipelineError::wrap(Stage::Memory))?;
        let conf = ScalarMap::filled(rgb.width(), rgb.height(), 1.0);
        let local = decode_gaussians(rgb, depth, &conf, pose, intr, 0, config.k_scale).map_err(PipelineError::wrap(Stage::Init))?;
        let mut global = GaussianSet::new();
        fuse_into(&mut global, &local, pose, intr, config.fusion()).map_err(PipelineError::wrap(Stage::Fuse))?;
        Ok(SessionState { global, memory, config, step_count: 1, intrinsics: *intr, prompts: Vec::new() })
    }

    /// One interaction at `pose`. The state changes only if the step succeeds.
    pub fn step(&self, state: &mut SessionState, pose: &Pose, prompt: &str) -> Result<StepOutput, PipelineError> {
        let cfg = &state.config;
        let intr = state.intrinsics;
        let start = Instant::now();
        let mut timing = StepTiming::default();
        let mut lap = Instant::now();
        let mut split = |slot: &mut f64| {
            *slot = lap.elapsed().as_secs_f64() * 1e3;
            lap = Instant::now();
        };

        let render = render_view(&state.global, pose, &intr, cfg.tau);
        let input = CompletionInput::from_render(&render, cfg.tau);
        split(&mut timing.render_ms);

        let ctx = CompletionContext { pose, intrinsics: &intr, prompt };
        let target_rgb = self.inpainter.inpaint(&input, &ctx);
        if target_rgb.width() != intr.width || target_rgb.height() != intr.height {
            return Err(PipelineError::at(Stage::Inpaint)("inpainter returned an image of the wrong size".into()));
        }
        split(&mut timing.inpaint_ms);

        let target_depth = match &self.depth_completer {
            Some(c) => c.complete(&input, &ctx),
            None => {
                let opts = HarmonicOptions { bootstrap_depth: cfg.bootstrap_depth, ..HarmonicOptions::default() };
                complete_depth_with(&input, &opts).depth
            }
        };
        if target_depth.width() != intr.width || target_depth.height() != intr.height || !target_depth.is_complete() {
            return Err(PipelineError::at(Stage::Depth)("depth completer returned an incomplete or mis-sized map".into()));
        }
        split(&mut timing.depth_ms);

        let feats = extract_features(&target_rgb).map_err(PipelineError::wrap(Stage::Splat))?;
        let neighbors =
            state.memory.query_nearest_weighted(pose, cfg.n_v, cfg.rotation_weight).map_err(PipelineError::wrap(Stage::Memory))?;
        let (depth, confidence, cost_volume) = if neighbors.is_empty() {
            (target_depth, ScalarMap::filled(intr.width, intr.height, 1.0), None)
        } else {
            let pairs: Vec<(Pose, &crate::features::FeatureMap)> = neighbors.iter().map(|e| (e.pose, &e.features)).collect();
            let (est, volume) = estimate_depth(&feats.matching, &pairs, pose, &intr, &target_depth, &cfg.sweep())
                .map_err(PipelineError::wrap(Stage::Splat))?;
            (est.depth, est.confidence, Some(volume))
        };
        let step_index = u32::try_from(state.step_count).map_err(|_| PipelineError::Usage("step count exceeds u32".into()))?;
        let local = if cfg.decode_holes_only {
            let holes = Mask::new(intr.width, intr.height, input.mask().data().iter().map(|&k| !k).collect()).expect("mask is sized");
            decode_gaussians_where(&target_rgb, &depth, &confidence, pose, &intr, step_index, cfg.k_scale, &holes)
        } else {
            decode_gaussians(&target_rgb, &depth, &confidence, pose, &intr, step_index, cfg.k_scale)
        }
        .map_err(PipelineError::wrap(Stage::Splat))?;
        split(&mut timing.stepsplat_ms);

        let added = fuse_into(&mut state.global, &local, pose, &intr, cfg.fusion()).map_err(PipelineError::wrap(Stage::Fuse))?;
        split(&mut timing.fuse_ms);

        state.memory.insert(*pose, feats.matching, state.step_count).map_err(PipelineError::wrap(Stage::Memory))?;
        state.step_count += 1;
        state.prompts.push(prompt.to_string());
        timing.total_ms = start.elapsed().as_secs_f64() * 1e3;
        let hole_pixels = input.mask().data().iter().filter(|&&k| !k).count();
        Ok(StepOutput { render, timing, added, hole_pixels, cost_volume })
    }

    /// Sequential steps; `prompts` must match `poses` in length.
    pub fn run_trajectory(&self, state: &mut SessionState, poses: &[Pose], prompts: &[String]) -> Result<Vec<StepOutput>, PipelineError> {
        if poses.len() != prompts.len() {
            return Err(PipelineError::Usage(format!("{} poses but {} prompts", poses.len(), prompts.len())));
        }
        poses.iter().zip(prompts).map(|(p, t)| self.step(state, p, t)).collect()
    }
}

impl SessionState {
    /// Renders the current scene without changing it.
    pub fn render(&self, pose: &Pose) -> RenderOutput {
        render_view(&self.global, pose, &self.intrinsics, self.config.tau)
    }
}
