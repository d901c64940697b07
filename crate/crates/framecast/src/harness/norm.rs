//! Data normalization: isotropic speed scaling (the geometric choice that
//! keeps directions intact) and min-max scaling (anisotropic; kept as an
//! ablation), fitted on the training split only.

use serde::{Deserialize, Serialize};

use crate::frames::{OrientationMode, SceneStates};
use crate::scalar::Scalar;
use crate::sim::{DatasetBundle, Trajectory};

use super::{HarnessError, HarnessResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    Speed,
    MinMax,
}

/// Fitted normalization. Constants are stored as f64 so the spec embeds
/// losslessly in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub mode: NormMode,
    /// Maximum velocity norm of the training split (speed mode).
    pub s_max: f64,
    /// Per-channel minima/maxima over `[pos..vel]` features (min-max mode).
    pub feat_min: Vec<f64>,
    pub feat_max: Vec<f64>,
}

impl NormSpec {
    pub fn none() -> Self {
        Self {
            mode: NormMode::None,
            s_max: 1.0,
            feat_min: Vec::new(),
            feat_max: Vec::new(),
        }
    }

    /// Fits on a training bundle.
    pub fn fit<T: Scalar>(bundle: &DatasetBundle<T>, mode: NormMode) -> HarnessResult<Self> {
        match mode {
            NormMode::None => Ok(Self::none()),
            NormMode::Speed => {
                let dim = bundle.meta.dim;
                let state_dim = 2 * dim;
                let mut s_max = 0.0f64;
                for chunk in bundle.trajectories.chunks_exact(state_dim) {
                    let speed_sq: f64 = chunk[dim..]
                        .iter()
                        .map(|v| {
                            let f = v.as_f64();
                            f * f
                        })
                        .sum();
                    s_max = s_max.max(speed_sq.sqrt());
                }
                if !(s_max > 0.0) {
                    return Err(HarnessError::DegenerateNormalization(
                        "maximum training speed is zero".into(),
                    ));
                }
                Ok(Self {
                    mode,
                    s_max,
                    feat_min: Vec::new(),
                    feat_max: Vec::new(),
                })
            }
            NormMode::MinMax => {
                let state_dim = 2 * bundle.meta.dim;
                let mut feat_min = vec![f64::INFINITY; state_dim];
                let mut feat_max = vec![f64::NEG_INFINITY; state_dim];
                for chunk in bundle.trajectories.chunks_exact(state_dim) {
                    for (c, v) in chunk.iter().enumerate() {
                        let f = v.as_f64();
                        feat_min[c] = feat_min[c].min(f);
                        feat_max[c] = feat_max[c].max(f);
                    }
                }
                for c in 0..state_dim {
                    if !(feat_max[c] - feat_min[c] > 0.0) {
                        return Err(HarnessError::DegenerateNormalization(format!(
                            "feature channel {c} has zero range"
                        )));
                    }
                }
                Ok(Self {
                    mode,
                    s_max: 1.0,
                    feat_min,
                    feat_max,
                })
            }
        }
    }

    /// Normalizes one state vector `[p, u]` in place.
    pub fn normalize_state<T: Scalar>(&self, state: &mut [T]) {
        match self.mode {
            NormMode::None => {}
            NormMode::Speed => {
                let inv = T::lit(1.0 / self.s_max);
                for v in state.iter_mut() {
                    *v = *v * inv;
                }
            }
            NormMode::MinMax => {
                for (c, v) in state.iter_mut().enumerate() {
                    let lo = T::lit(self.feat_min[c]);
                    let hi = T::lit(self.feat_max[c]);
                    *v = (*v - lo) / (hi - lo) * T::lit(2.0) - T::one();
                }
            }
        }
    }

    /// Exact inverse of [`Self::normalize_state`].
    pub fn denormalize_state<T: Scalar>(&self, state: &mut [T]) {
        match self.mode {
            NormMode::None => {}
            NormMode::Speed => {
                let s = T::lit(self.s_max);
                for v in state.iter_mut() {
                    *v = *v * s;
                }
            }
            NormMode::MinMax => {
                for (c, v) in state.iter_mut().enumerate() {
                    let lo = T::lit(self.feat_min[c]);
                    let hi = T::lit(self.feat_max[c]);
                    *v = (*v + T::one()) / T::lit(2.0) * (hi - lo) + lo;
                }
            }
        }
    }

    pub fn normalize_trajectory<T: Scalar>(&self, traj: &Trajectory<T>) -> Trajectory<T> {
        let mut out = traj.clone();
        let state_dim = 2 * traj.dim;
        let mut data = out.data;
        for chunk in data.chunks_exact_mut(state_dim) {
            self.normalize_state(chunk);
        }
        out.data = data;
        out
    }

    pub fn denormalize_trajectory<T: Scalar>(&self, traj: &Trajectory<T>) -> Trajectory<T> {
        let mut out = traj.clone();
        let state_dim = 2 * traj.dim;
        let mut data = out.data;
        for chunk in data.chunks_exact_mut(state_dim) {
            self.denormalize_state(chunk);
        }
        out.data = data;
        out
    }

    /// Normalizes a scene. Velocity-approximated orientations are recomputed
    /// from the scaled velocities (speed scaling preserves them; min-max
    /// does not, which is the point of the ablation); intrinsic orientations
    /// are untouched.
    pub fn normalize_scene<T: Scalar>(&self, scene: &SceneStates<T>) -> SceneStates<T> {
        let dim = scene.dim();
        let n = scene.n_nodes();
        let t_len = scene.t_len();
        let mut positions = Vec::with_capacity(t_len * n * dim);
        let mut velocities = Vec::with_capacity(t_len * n * dim);
        for t in 0..t_len {
            for node in 0..n {
                let mut state = scene.state(t, node);
                self.normalize_state(&mut state);
                positions.extend_from_slice(&state[..dim]);
                velocities.extend_from_slice(&state[dim..]);
            }
        }
        match scene.mode() {
            OrientationMode::FromVelocity => {
                SceneStates::from_velocities(dim, t_len, n, positions, velocities)
                    .expect("lengths preserved")
            }
            OrientationMode::Intrinsic => {
                let mut orientations = Vec::with_capacity(t_len * n * scene.angular_dim());
                for t in 0..t_len {
                    orientations.extend_from_slice(scene.frame_orientations(t));
                }
                SceneStates::new_intrinsic(dim, t_len, n, positions, velocities, orientations)
                    .expect("lengths preserved")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_synthetic, SynthConfig};

    #[test]
    fn speed_scaling_examples() {
        let spec = NormSpec {
            mode: NormMode::Speed,
            s_max: 2.0,
            feat_min: Vec::new(),
            feat_max: Vec::new(),
        };
        let mut state = vec![2.0, 4.0, 1.0, -3.0];
        spec.normalize_state(&mut state);
        assert_eq!(state, vec![1.0, 2.0, 0.5, -1.5]);
        spec.denormalize_state(&mut state);
        // Power-of-two s_max round-trips at the bit level.
        assert_eq!(state, vec![2.0, 4.0, 1.0, -3.0]);
    }

    #[test]
    fn round_trip_within_tolerance_for_general_s_max() {
        let spec = NormSpec {
            mode: NormMode::Speed,
            s_max: 1.7318,
            feat_min: Vec::new(),
            feat_max: Vec::new(),
        };
        let original = vec![0.3, -2.4, 11.0, 1e-4];
        let mut state = original.clone();
        spec.normalize_state(&mut state);
        spec.denormalize_state(&mut state);
        for (a, b) in state.iter().zip(original.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fit_speed_finds_max_speed_and_rejects_zero() {
        let cfg = SynthConfig {
            n_scenes: 5,
            seed: 3,
            ..SynthConfig::default()
        };
        let bundle = gen_synthetic::<f64>(&cfg).unwrap();
        let spec = NormSpec::fit(&bundle, NormMode::Speed).unwrap();
        // Direct maximum over the raw arrays.
        let mut expect = 0.0f64;
        for s in 0..bundle.n_scenes() {
            let traj = bundle.scene(s).unwrap();
            for t in 0..traj.t_len {
                for node in 0..traj.n {
                    let u = traj.velocity(t, node);
                    expect = expect.max((u[0] * u[0] + u[1] * u[1]).sqrt());
                }
            }
        }
        assert_eq!(spec.s_max, expect);

        // All-zero velocities are degenerate.
        let mut still = bundle.clone();
        still.trajectories = vec![0.0; still.trajectories.len()];
        assert!(matches!(
            NormSpec::fit(&still, NormMode::Speed),
            Err(HarnessError::DegenerateNormalization(_))
        ));
    }

    #[test]
    fn speed_preserves_directions_minmax_does_not() {
        let speed = NormSpec {
            mode: NormMode::Speed,
            s_max: 3.7,
            feat_min: Vec::new(),
            feat_max: Vec::new(),
        };
        // Anisotropic ranges: x spans ±10, y spans ±1.
        let minmax = NormSpec {
            mode: NormMode::MinMax,
            s_max: 1.0,
            feat_min: vec![-10.0, -1.0, -10.0, -1.0],
            feat_max: vec![10.0, 1.0, 10.0, 1.0],
        };
        let u = [3.0f64, 1.5];
        let dir = |v: &[f64]| {
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            [v[0] / n, v[1] / n]
        };
        let mut state = vec![0.0, 0.0, u[0], u[1]];
        speed.normalize_state(&mut state);
        let d = dir(&state[2..]);
        let d0 = dir(&u);
        assert!((d[0] - d0[0]).abs() < 1e-12 && (d[1] - d0[1]).abs() < 1e-12);

        let mut state = vec![0.0, 0.0, u[0], u[1]];
        minmax.normalize_state(&mut state);
        // Direction is distorted on purpose (and the zero point shifts).
        let d = dir(&state[2..]);
        assert!(
            (d[0] - d0[0]).abs() > 1e-3 || (d[1] - d0[1]).abs() > 1e-3,
            "anisotropic scaling should bend the direction"
        );
    }
}
