//! Dataset simulators with ground-truth interaction labels, the
//! constant-velocity baseline, and the on-disk dataset format.

mod baseline;
mod charged;
mod store;
mod synthetic;

pub use baseline::{constant_velocity_forecast, interactive_subset};
pub use charged::{charged_accelerations, gen_charged, leapfrog_steps, ChargedConfig, ChargedState};
pub use store::{read_dataset, read_dataset_meta, write_dataset, StoreError};
pub use synthetic::{gen_synthetic, SynthConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameError, SceneStates};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scene index {index} out of range ({n_scenes} scenes)")]
    BadScene { index: usize, n_scenes: usize },
    #[error("trajectory needs at least one timestep")]
    EmptyPrefix,
    #[error("horizon {horizon} exceeds available {available} future frames")]
    HorizonTooLong { horizon: usize, available: usize },
    #[error(transparent)]
    Frames(#[from] FrameError),
}

pub type SimResult<V> = Result<V, SimError>;

/// Which generator produced a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Charged,
}

/// Dataset-level metadata, stored as `meta.json` next to the binary payloads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub split: String,
    pub dim: usize,
    pub n_nodes: usize,
    pub t_len: usize,
    pub n_scenes: usize,
    /// Interval between recorded frames (fine step × stride for integrators
    /// that subsample).
    pub dt: f64,
    pub stride: usize,
    pub seed: u64,
    /// Human-readable record of the array layouts in the binary payloads.
    pub feature_layout: String,
}

pub(crate) fn feature_layout_note() -> String {
    "trajectories[f64]: [scene][time][node][pos .. vel]; \
     edges[u8]: [scene][time][target][source]; charges[f64]: [scene][node]"
        .to_string()
}

/// A generated dataset: trajectories, directed interaction labels, and (for
/// the charged system) per-node charges.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle<T> {
    pub meta: DatasetMeta,
    /// `[scene][time][node][2·dim]`, positions then velocities.
    pub trajectories: Vec<T>,
    /// `[scene][time][target][source]`, 1 where the source acts on the
    /// target at that timestep; diagonal is always 0.
    pub edge_labels: Vec<u8>,
    /// `[scene][node]`, present for the charged dataset.
    pub charges: Option<Vec<T>>,
}

impl<T: Scalar> DatasetBundle<T> {
    pub fn n_scenes(&self) -> usize {
        self.meta.n_scenes
    }

    fn scene_stride(&self) -> usize {
        self.meta.t_len * self.meta.n_nodes * 2 * self.meta.dim
    }

    pub fn check_scene(&self, index: usize) -> SimResult<()> {
        if index >= self.meta.n_scenes {
            return Err(SimError::BadScene {
                index,
                n_scenes: self.meta.n_scenes,
            });
        }
        Ok(())
    }

    /// Raw trajectory of one scene.
    pub fn scene(&self, index: usize) -> SimResult<Trajectory<T>> {
        self.check_scene(index)?;
        let stride = self.scene_stride();
        Ok(Trajectory {
            dim: self.meta.dim,
            n: self.meta.n_nodes,
            t_len: self.meta.t_len,
            data: self.trajectories[index * stride..(index + 1) * stride].to_vec(),
        })
    }

    /// One scene as [`SceneStates`] with velocity-derived orientations.
    pub fn scene_states(&self, index: usize) -> SimResult<SceneStates<T>> {
        Ok(self.scene(index)?.into_scene_states()?)
    }

    /// Interaction labels of one scene, `[time][target][source]`.
    pub fn scene_labels(&self, index: usize) -> SimResult<&[u8]> {
        self.check_scene(index)?;
        let stride = self.meta.t_len * self.meta.n_nodes * self.meta.n_nodes;
        Ok(&self.edge_labels[index * stride..(index + 1) * stride])
    }

    /// Sign of the charge product for a pair: +1 repulsive, -1 attractive.
    pub fn interaction_sign(&self, scene: usize, a: usize, b: usize) -> Option<T> {
        let charges = self.charges.as_ref()?;
        let n = self.meta.n_nodes;
        let qa = charges[scene * n + a];
        let qb = charges[scene * n + b];
        Some((qa * qb).signum())
    }

    /// Restriction to a subset of scenes (used by interactive-subset eval).
    pub fn select_scenes(&self, indices: &[usize]) -> SimResult<Self> {
        let stride = self.scene_stride();
        let label_stride = self.meta.t_len * self.meta.n_nodes * self.meta.n_nodes;
        let mut trajectories = Vec::with_capacity(indices.len() * stride);
        let mut edge_labels = Vec::with_capacity(indices.len() * label_stride);
        let mut charges = self.charges.as_ref().map(|_| Vec::new());
        for &s in indices {
            self.check_scene(s)?;
            trajectories.extend_from_slice(&self.trajectories[s * stride..(s + 1) * stride]);
            edge_labels
                .extend_from_slice(&self.edge_labels[s * label_stride..(s + 1) * label_stride]);
            if let (Some(out), Some(src)) = (charges.as_mut(), self.charges.as_ref()) {
                let n = self.meta.n_nodes;
                out.extend_from_slice(&src[s * n..(s + 1) * n]);
            }
        }
        let mut meta = self.meta.clone();
        meta.n_scenes = indices.len();
        Ok(Self {
            meta,
            trajectories,
            edge_labels,
            charges,
        })
    }
}

/// Plain trajectory tensor `[time][node][pos .. vel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dim: usize,
    pub n: usize,
    pub t_len: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn zeros(dim: usize, n: usize, t_len: usize) -> Self {
        Self {
            dim,
            n,
            t_len,
            data: vec![T::zero(); t_len * n * 2 * dim],
        }
    }

    fn offset(&self, t: usize, node: usize) -> usize {
        (t * self.n + node) * 2 * self.dim
    }

    pub fn state(&self, t: usize, node: usize) -> &[T] {
        let o = self.offset(t, node);
        &self.data[o..o + 2 * self.dim]
    }

    pub fn position(&self, t: usize, node: usize) -> &[T] {
        let o = self.offset(t, node);
        &self.data[o..o + self.dim]
    }

    pub fn velocity(&self, t: usize, node: usize) -> &[T] {
        let o = self.offset(t, node);
        &self.data[o + self.dim..o + 2 * self.dim]
    }

    pub fn set_state(&mut self, t: usize, node: usize, state: &[T]) {
        let o = self.offset(t, node);
        self.data[o..o + 2 * self.dim].copy_from_slice(state);
    }

    /// First `t_len` frames.
    pub fn prefix(&self, t_len: usize) -> Self {
        assert!(t_len <= self.t_len);
        Self {
            dim: self.dim,
            n: self.n,
            t_len,
            data: self.data[..t_len * self.n * 2 * self.dim].to_vec(),
        }
    }

    pub fn into_scene_states(self) -> Result<SceneStates<T>, FrameError> {
        let d = self.dim;
        let mut positions = Vec::with_capacity(self.t_len * self.n * d);
        let mut velocities = Vec::with_capacity(self.t_len * self.n * d);
        for t in 0..self.t_len {
            for node in 0..self.n {
                positions.extend_from_slice(self.position(t, node));
                velocities.extend_from_slice(self.velocity(t, node));
            }
        }
        SceneStates::from_velocities(d, self.t_len, self.n, positions, velocities)
    }
}

/// Per-scene RNG seed derived so generation order and parallelism cannot
/// change content: scenes are seeded independently from the dataset seed and
/// their own index.
pub fn scene_seed(dataset_seed: u64, scene_index: usize) -> u64 {
    splitmix64(dataset_seed ^ splitmix64(scene_index as u64 ^ 0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_seeds_are_index_independent_and_distinct() {
        let a: Vec<u64> = (0..100).map(|i| scene_seed(7, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| scene_seed(7, i)).collect();
        assert_eq!(a, b);
        let mut uniq = a.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), a.len(), "seeds collide");
        // Nearby dataset seeds do not reproduce each other's scene streams.
        let c: Vec<u64> = (0..100).map(|i| scene_seed(8, i)).collect();
        for s in &c {
            assert!(!a.contains(s));
        }
    }

    #[test]
    fn trajectory_accessors_round_trip() {
        let mut traj = Trajectory::<f64>::zeros(2, 2, 3);
        traj.set_state(1, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(traj.position(1, 1), &[1.0, 2.0]);
        assert_eq!(traj.velocity(1, 1), &[3.0, 4.0]);
        assert_eq!(traj.state(0, 0), &[0.0; 4]);
    }
}
