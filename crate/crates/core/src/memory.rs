//! Feature memory: `(pose, matching features)` per processed step, queried
//! by pose proximity to pick plane-sweep neighbors.

use thiserror::Error;

use crate::features::FeatureMap;
use crate::geometry::{pose_distance_weighted, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("step index {got} is not greater than the last stored index {last}")]
    NonMonotoneStep { got: u64, last: u64 },
    #[error("n_v must be at least 1")]
    ZeroNeighbors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub pose: Pose,
    pub features: FeatureMap,
    pub step_index: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMemory {
    entries: Vec<MemoryEntry>,
    max_entries: Option<usize>,
}

impl FeatureMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Memory that evicts its oldest entries beyond `max_entries`.
    pub fn with_capacity_limit(max_entries: Option<usize>) -> Self {
        Self { entries: Vec::new(), max_entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn max_entries(&self) -> Option<usize> {
        self.max_entries
    }

    pub fn insert(&mut self, pose: Pose, features: FeatureMap, step_index: u64) -> Result<(), MemoryError> {
        if let Some(last) = self.entries.last() {
            if step_index <= last.step_index {
                return Err(MemoryError::NonMonotoneStep { got: step_index, last: last.step_index });
            }
        }
        self.entries.push(MemoryEntry { pose, features, step_index });
        if let Some(cap) = self.max_entries {
            let excess = self.entries.len().saturating_sub(cap.max(1));
            self.entries.drain(..excess);
        }
        Ok(())
    }

    /// Up to `n_v` entries closest to `pose` under the weighted pose metric,
    /// nearest first; equal distances prefer the more recent entry.
    pub fn query_nearest_weighted(&self, pose: &Pose, n_v: usize, rotation_weight: f64) -> Result<Vec<&MemoryEntry>, MemoryError> {
        if n_v == 0 {
            return Err(MemoryError::ZeroNeighbors);
        }
        let mut scored: Vec<(f64, &MemoryEntry)> =
            self.entries.iter().map(|e| (pose_distance_weighted(pose, &e.pose, rotation_weight), e)).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.step_index.cmp(&a.1.step_index)));
        Ok(scored.into_iter().take(n_v).map(|(_, e)| e).collect())
    }

    pub fn query_nearest(&self, pose: &Pose, n_v: usize) -> Result<Vec<&MemoryEntry>, MemoryError> {
        self.query_nearest_weighted(pose, n_v, 1.0)
    }

    pub(crate) fn from_entries(entries: Vec<MemoryEntry>, max_entries: Option<usize>) -> Result<Self, MemoryError> {
        let mut mem = Self::with_capacity_limit(max_entries);
        for e in entries {
            mem.insert(e.pose, e.features, e.step_index)?;
        }
        Ok(mem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_distance;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(v: f32) -> FeatureMap {
        FeatureMap::new(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn insert_examples() {
        let mut m = FeatureMemory::new();
        m.insert(Pose::identity(), fm(0.0), 0).unwrap();
        assert_eq!(m.len(), 1);
        m.insert(Pose::from_translation(1.0, 0.0, 0.0), fm(1.0), 1).unwrap();
        assert_eq!(m.entries().iter().map(|e| e.step_index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(m.insert(Pose::identity(), fm(2.0), 1), Err(MemoryError::NonMonotoneStep { got: 1, last: 1 }));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn nearest_examples() {
        let mut m = FeatureMemory::new();
        assert!(m.query_nearest(&Pose::identity(), 1).unwrap().is_empty());
        m.insert(Pose::identity(), fm(0.0), 0).unwrap();
        m.insert(Pose::from_translation(10.0, 0.0, 0.0), fm(1.0), 1).unwrap();
        let near = m.query_nearest(&Pose::identity(), 1).unwrap();
        assert_eq!(near.len(), 1);
        assert_eq!(near[0].step_index, 0);
        assert_eq!(m.query_nearest(&Pose::identity(), 5).unwrap().len(), 2);
        assert_eq!(m.query_nearest(&Pose::identity(), 0), Err(MemoryError::ZeroNeighbors));
    }

    #[test]
    fn ties_prefer_recent_entries() {
        let mut m = FeatureMemory::new();
        m.insert(Pose::from_translation(1.0, 0.0, 0.0), fm(0.0), 0).unwrap();
        m.insert(Pose::from_translation(-1.0, 0.0, 0.0), fm(1.0), 1).unwrap();
        let near = m.query_nearest(&Pose::identity(), 1).unwrap();
        assert_eq!(near[0].step_index, 1);
    }

    #[test]
    fn capacity_limit_evicts_oldest() {
        let mut m = FeatureMemory::with_capacity_limit(Some(2));
        for i in 0..4 {
            m.insert(Pose::identity(), fm(i as f32), i).unwrap();
        }
        assert_eq!(m.entries().iter().map(|e| e.step_index).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let mut m = FeatureMemory::new();
            let n = rng.random_range(1..=100);
            for i in 0..n {
                let r = Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
                let t = Vector3::new(rng.random_range(-5.0..5.0), 0.0, rng.random_range(-5.0..5.0));
                m.insert(Pose::new(r.into_inner(), t).unwrap(), fm(i as f32), i as u64).unwrap();
            }
            let before = m.clone();
            let q = Pose::from_translation(rng.random_range(-5.0..5.0), 0.0, 0.0);
            let k = rng.random_range(1..=n + 3);
            let got: Vec<u64> = m.query_nearest(&q, k).unwrap().iter().map(|e| e.step_index).collect();

            let mut all: Vec<(f64, u64)> = m.entries().iter().map(|e| (pose_distance(&q, &e.pose), e.step_index)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
            let expected: Vec<u64> = all.into_iter().take(k).map(|(_, s)| s).collect();
            assert_eq!(got, expected, "trial {trial}");
            assert_eq!(m, before);
        }
    }
}
