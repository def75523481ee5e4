//! Incremental feed-forward Gaussian scene engine.
//!
//! Each step renders the current scene at a user pose, fills the revealed
//! holes (color and depth), estimates depth with a guide-centred plane-sweep
//! cost volume over nearby remembered views, decodes one Gaussian per pixel
//! and fuses only those not already explained by the scene.

pub mod completion;
pub mod costvolume;
pub mod features;
pub mod gaussians;
pub mod geometry;
pub mod imaging;
pub mod memory;
pub mod pipeline;
pub mod renderer;
pub mod testkit;

pub use completion::{CompletionInput, DepthCompleter, Inpainter};
pub use costvolume::{CostVolume, DepthCandidates};
pub use features::{FeatureMap, ViewFeatures};
pub use gaussians::{FusionParams, Gaussian, GaussianSet, LocalGaussians};
pub use geometry::{Intrinsics, Pose};
pub use imaging::{DepthMap, ImageRGB, Mask, ScalarMap};
pub use memory::FeatureMemory;
pub use pipeline::{Pipeline, PipelineConfig, PipelineError, SessionState, Stage, StepOutput, StepTiming};
pub use renderer::RenderOutput;
