//! Constant-velocity extrapolation baseline and the interactive-subset
//! filter built on it.

use super::{DatasetBundle, SimError, SimResult, Trajectory};
use crate::scalar::Scalar;

/// Extrapolates from the last frame of `prefix` at constant velocity:
/// `p(k) = p + k·dt·u`. Returns `horizon + 1` frames, frame 0 being the
/// anchor itself.
pub fn constant_velocity_forecast<T: Scalar>(
    prefix: &Trajectory<T>,
    horizon: usize,
    dt: T,
) -> SimResult<Trajectory<T>> {
    if prefix.t_len == 0 {
        return Err(SimError::EmptyPrefix);
    }
    let anchor = prefix.t_len - 1;
    let dim = prefix.dim;
    let mut out = Trajectory::zeros(dim, prefix.n, horizon + 1);
    for node in 0..prefix.n {
        let p = prefix.position(anchor, node);
        let u = prefix.velocity(anchor, node);
        for k in 0..=horizon {
            let time = T::from_usize(k).expect("horizon fits scalar") * dt;
            let mut state = Vec::with_capacity(2 * dim);
            for c in 0..dim {
                state.push(p[c] + time * u[c]);
            }
            state.extend_from_slice(u);
            out.set_state(k, node, &state);
        }
    }
    Ok(out)
}

/// Node-averaged L2 position error of the constant-velocity forecast at the
/// final horizon step.
pub fn cv_final_position_error<T: Scalar>(
    truth: &Trajectory<T>,
    observed_len: usize,
    horizon: usize,
    dt: T,
) -> SimResult<T> {
    if observed_len == 0 {
        return Err(SimError::EmptyPrefix);
    }
    let available = truth.t_len.saturating_sub(observed_len);
    if horizon > available || horizon == 0 {
        return Err(SimError::HorizonTooLong {
            horizon,
            available,
        });
    }
    let forecast = constant_velocity_forecast(&truth.prefix(observed_len), horizon, dt)?;
    let t_truth = observed_len - 1 + horizon;
    let mut total = T::zero();
    for node in 0..truth.n {
        let a = forecast.position(horizon, node);
        let b = truth.position(t_truth, node);
        let mut sq = T::zero();
        for c in 0..truth.dim {
            let d = a[c] - b[c];
            sq += d * d;
        }
        total += sq.sqrt();
    }
    Ok(total / T::from_usize(truth.n).expect("node count fits scalar"))
}

/// Scene indices where the constant-velocity baseline's final-horizon L2
/// position error exceeds `threshold` — the strongly interacting subset.
pub fn interactive_subset<T: Scalar>(
    bundle: &DatasetBundle<T>,
    observed_len: usize,
    horizon: usize,
    threshold: T,
) -> SimResult<Vec<usize>> {
    let mut selected = Vec::new();
    for s in 0..bundle.n_scenes() {
        let truth = bundle.scene(s)?;
        let err = cv_final_position_error(&truth, observed_len, horizon, T::lit(bundle.meta.dt))?;
        if err > threshold {
            selected.push(s);
        }
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{feature_layout_note, DatasetKind, DatasetMeta};

    /// Single particle under constant acceleration, exact kinematics.
    fn accelerating_scene(a: f64, dt: f64, t_len: usize) -> Trajectory<f64> {
        let mut traj = Trajectory::zeros(2, 1, t_len);
        for t in 0..t_len {
            let time = t as f64 * dt;
            let p = 0.5 * a * time * time;
            let u = a * time;
            traj.set_state(t, 0, &[p, 0.0, u, 0.0]);
        }
        traj
    }

    #[test]
    fn horizon_zero_returns_last_frame() {
        let traj = accelerating_scene(1.0, 0.25, 4);
        let f = constant_velocity_forecast(&traj, 0, 0.25).unwrap();
        assert_eq!(f.t_len, 1);
        assert_eq!(f.state(0, 0), traj.state(3, 0));
    }

    #[test]
    fn linear_ground_truth_has_zero_error() {
        // Power-of-two dt and velocities make the closed forms bit-equal.
        let dt = 0.25f64;
        let mut traj = Trajectory::zeros(2, 1, 8);
        for t in 0..8 {
            let time = t as f64 * dt;
            traj.set_state(t, 0, &[2.0 * time, -time, 2.0, -1.0]);
        }
        let f = constant_velocity_forecast(&traj.prefix(4), 4, dt).unwrap();
        for k in 0..=4 {
            assert_eq!(f.position(k, 0), traj.position(3 + k, 0));
        }
    }

    #[test]
    fn error_grows_quadratically_under_constant_acceleration() {
        // Closed-form kinematics: CV error at horizon k is a/2·(k·dt)².
        let a = 0.8;
        let dt = 0.1;
        let traj = accelerating_scene(a, dt, 30);
        let obs = 10;
        let f = constant_velocity_forecast(&traj.prefix(obs), 10, dt).unwrap();
        for k in 1..=10usize {
            let err = (f.position(k, 0)[0] - traj.position(obs - 1 + k, 0)[0]).abs();
            let expect = 0.5 * a * (k as f64 * dt).powi(2);
            assert!(
                (err - expect).abs() < 1e-9,
                "horizon {k}: error {err}, expected {expect}"
            );
        }
    }

    #[test]
    fn empty_prefix_is_rejected() {
        let traj = Trajectory::<f64>::zeros(2, 1, 0);
        assert!(matches!(
            constant_velocity_forecast(&traj, 3, 0.1),
            Err(SimError::EmptyPrefix)
        ));
    }

    fn two_scene_bundle(errors: [f64; 2]) -> DatasetBundle<f64> {
        // Scene design: particle at rest for the observed window, then the
        // future frame sits `errors[s]` away, so the CV error is exactly it.
        let t_len = 4;
        let observed = 3;
        let mut trajectories = Vec::new();
        for err in errors {
            for t in 0..t_len {
                let p = if t >= observed { err } else { 0.0 };
                trajectories.extend_from_slice(&[p, 0.0, 0.0, 0.0]);
            }
        }
        DatasetBundle {
            meta: DatasetMeta {
                kind: DatasetKind::Synthetic,
                split: "test".into(),
                dim: 2,
                n_nodes: 1,
                t_len,
                n_scenes: 2,
                dt: 0.1,
                stride: 1,
                seed: 0,
                feature_layout: feature_layout_note(),
            },
            trajectories,
            edge_labels: vec![0; 2 * t_len],
            charges: None,
        }
    }

    #[test]
    fn subset_selects_scenes_past_the_threshold() {
        let bundle = two_scene_bundle([1.4, 1.6]);
        let selected = interactive_subset(&bundle, 3, 1, 1.5).unwrap();
        assert_eq!(selected, vec![1]);
        // Threshold zero picks up every scene with any deviation.
        let all = interactive_subset(&bundle, 3, 1, 0.0).unwrap();
        assert_eq!(all, vec![0, 1]);
        // All-linear data selects nothing.
        let quiet = two_scene_bundle([0.0, 0.0]);
        assert!(interactive_subset(&quiet, 3, 1, 0.0).unwrap().is_empty());
    }
}
