//! Shared fixtures for the benchmarks: the seeded testkit room at a given
//! resolution with an initialized session.

use splatloop::testkit::{build_synthetic_scene, render_ground_truth, SceneKind, SyntheticScene};
use splatloop::{DepthMap, ImageRGB, Intrinsics, Pipeline, PipelineConfig, Pose, SessionState};

pub struct Fixture {
    pub scene: SyntheticScene,
    pub intr: Intrinsics,
    pub rgb: ImageRGB,
    pub depth: DepthMap,
    pub state: SessionState,
}

pub fn room(size: u32) -> Fixture {
    let scene = build_synthetic_scene(11, SceneKind::Room);
    let intr = Intrinsics::centered(size as f64 / 2.0, size, size).expect("positive focal");
    let (rgb, depth) = render_ground_truth(&scene, &Pose::identity(), &intr);
    let state = Pipeline::default().init_session(&rgb, &depth, &Pose::identity(), &intr, PipelineConfig::default()).expect("valid init");
    Fixture { scene, intr, rgb, depth, state }
}
