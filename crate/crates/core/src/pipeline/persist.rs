//! Session directory layout:
//!
//! ```text
//! config.toml            pipeline config
//! scene.ply              global Gaussians
//! metadata.json          step count, prompts, intrinsics, feature shape
//! memory/poses.txt       `<step> <12 row-major pose numbers>` per entry
//! memory/entry_NNNNN.pfm matching features as a channel stack
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PipelineConfig, SessionState};
use crate::features::FeatureMap;
use crate::gaussians::{read_ply, write_ply};
use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{decode_pfm, encode_pfm};
use crate::memory::{FeatureMemory, MemoryEntry};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("session component `{0}` is missing")]
    Missing(String),
    #[error("session component `{component}` is corrupt: {message}")]
    Corrupt { component: String, message: String },
    #[error("writing `{component}`: {source}")]
    Write {
        component: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetadata {
    pub format_version: u32,
    pub step_count: u64,
    pub prompts: Vec<String>,
    pub intrinsics: Intrinsics,
    pub feature_channels: usize,
    pub gaussian_count: usize,
}

fn corrupt(component: &str, message: impl ToString) -> PersistError {
    PersistError::Corrupt { component: component.to_string(), message: message.to_string() }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), PersistError> {
    std::fs::write(dir.join(name), bytes).map_err(|source| PersistError::Write { component: name.to_string(), source })
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, PersistError> {
    let path: PathBuf = dir.join(name);
    std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PersistError::Missing(name.to_string()),
        _ => corrupt(name, e),
    })
}

fn entry_name(step: u64) -> String {
    format!("memory/entry_{step:05}.pfm")
}

pub fn save_session(dir: impl AsRef<Path>, state: &SessionState) -> Result<(), PersistError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("memory")).map_err(|source| PersistError::Write { component: "memory".into(), source })?;
    write(dir, "config.toml", state.config.to_toml().as_bytes())?;
    write_ply(dir.join("scene.ply"), &state.global).map_err(|e| corrupt("scene.ply", e))?;
    let mut poses = String::new();
    for e in state.memory.entries() {
        let nums: Vec<String> = e.pose.to_row_major().iter().map(|v| v.to_string()).collect();
        poses.push_str(&format!("{} {}\n", e.step_index, nums.join(" ")));
        let f = &e.features;
        let bytes = encode_pfm(f.width(), f.height() * f.channels() as u32, 1, &f.to_channel_stack()).map_err(|e| corrupt("memory", e))?;
        write(dir, &entry_name(e.step_index), &bytes)?;
    }
    write(dir, "memory/poses.txt", poses.as_bytes())?;
    let meta = SessionMetadata {
        format_version: FORMAT_VERSION,
        step_count: state.step_count,
        prompts: state.prompts.clone(),
        intrinsics: state.intrinsics,
        feature_channels: state.memory.entries().first().map_or(0, |e| e.features.channels()),
        gaussian_count: state.global.len(),
    };
    write(dir, "metadata.json", serde_json::to_string_pretty(&meta).expect("metadata serializes").as_bytes())
}

pub fn load_session(dir: impl AsRef<Path>) -> Result<SessionState, PersistError> {
    let dir = dir.as_ref();
    let meta: SessionMetadata = serde_json::from_slice(&read(dir, "metadata.json")?).map_err(|e| corrupt("metadata.json", e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(corrupt("metadata.json", format!("unsupported format version {}", meta.format_version)));
    }
    meta.intrinsics.validate().map_err(|e| corrupt("metadata.json", e))?;
    let config_text = String::from_utf8(read(dir, "config.toml")?).map_err(|e| corrupt("config.toml", e))?;
    let config = PipelineConfig::from_toml(&config_text).map_err(|e| corrupt("config.toml", e))?;
    if !dir.join("scene.ply").exists() {
        return Err(PersistError::Missing("scene.ply".into()));
    }
    let global = read_ply(dir.join("scene.ply")).map_err(|e| corrupt("scene.ply", e))?;
    if global.len() != meta.gaussian_count {
        return Err(corrupt("scene.ply", format!("{} Gaussians but metadata records {}", global.len(), meta.gaussian_count)));
    }

    let feat = meta.intrinsics.downscaled(crate::features::FEATURE_STRIDE);
    let poses_text = String::from_utf8(read(dir, "memory/poses.txt")?).map_err(|e| corrupt("memory/poses.txt", e))?;
    let mut entries = Vec::new();
    for (lineno, line) in poses_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| corrupt("memory/poses.txt", format!("line {}: {m}", lineno + 1));
        let mut words = line.split_whitespace();
        let step: u64 = words.next().unwrap_or("").parse().map_err(|_| bad("bad step index".into()))?;
        let nums: Vec<f64> = words.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad pose number".into()))?;
        let pose = Pose::from_row_major(&nums).map_err(|e| bad(e.to_string()))?;
        let name = entry_name(step);
        let pfm = decode_pfm(&read(dir, &name)?).map_err(|e| corrupt(&name, e))?;
        let c = meta.feature_channels;
        if pfm.channels != 1 || pfm.width != feat.width || pfm.height as u64 != feat.height as u64 * c as u64 {
            return Err(corrupt(&name, format!("expected a {}x{} stack of {c} channels", feat.width, feat.height)));
        }
        let features = FeatureMap::from_channel_stack(feat.width, feat.height, c, &pfm.data).map_err(|e| corrupt(&name, e))?;
        entries.push(MemoryEntry { pose, features, step_index: step });
    }
    let memory = FeatureMemory::from_entries(entries, config.max_memory_entries).map_err(|e| corrupt("memory/poses.txt", e))?;
    if memory.len() as u64 > meta.step_count {
        return Err(corrupt("metadata.json", "more memory entries than steps"));
    }
    Ok(SessionState { global, memory, config, step_count: meta.step_count, intrinsics: meta.intrinsics, prompts: meta.prompts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Pipeline;
    use crate::testkit::{build_synthetic_scene, panorama, render_ground_truth, SceneKind};
    use nalgebra::Vector3;

    fn session(steps: usize) -> SessionState {
        let scene = build_synthetic_scene(5, SceneKind::Room);
        let intr = Intrinsics::centered(16.0, 32, 32).unwrap();
        let (rgb, depth) = render_ground_truth(&scene, &Pose::identity(), &intr);
        let p = Pipeline::default();
        let mut s = p.init_session(&rgb, &depth, &Pose::identity(), &intr, PipelineConfig::default()).unwrap();
        for pose in panorama(8, Vector3::zeros()).iter().skip(1).take(steps) {
            p.step(&mut s, pose, "prompt").unwrap();
        }
        s
    }

    #[test]
    fn round_trips_bit_exact() {
        for steps in [0, 3] {
            let s = session(steps);
            let dir = tempfile::tempdir().unwrap();
            save_session(dir.path(), &s).unwrap();
            assert_eq!(load_session(dir.path()).unwrap(), s);
        }
    }

    #[test]
    fn missing_components_are_named() {
        let s = session(1);
        for name in ["scene.ply", "config.toml", "metadata.json", "memory/poses.txt", "memory/entry_00001.pfm"] {
            let dir = tempfile::tempdir().unwrap();
            save_session(dir.path(), &s).unwrap();
            std::fs::remove_file(dir.path().join(name)).unwrap();
            match load_session(dir.path()) {
                Err(PersistError::Missing(m)) => assert_eq!(m, name),
                other => panic!("{name}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_components_are_named() {
        let s = session(1);
        let dir = tempfile::tempdir().unwrap();
        save_session(dir.path(), &s).unwrap();
        std::fs::write(dir.path().join("memory/poses.txt"), "0 1 2 3\n").unwrap();
        match load_session(dir.path()) {
            Err(PersistError::Corrupt { component, .. }) => assert_eq!(component, "memory/poses.txt"),
            other => panic!("{other:?}"),
        }
    }
}
