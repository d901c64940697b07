//! Evaluation: burn-in + free rollout, per-horizon error curves in the
//! original (unnormalized) data space, and relation-prediction F1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{EdgeLayout, Forecaster, RolloutOptions};
use crate::scalar::Scalar;
use crate::sim::{constant_velocity_forecast, DatasetBundle, SimError, Trajectory};

use super::norm::NormSpec;
use super::{HarnessError, HarnessResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub observed_len: usize,
    pub horizon: usize,
    /// Seed for prior edge sampling during evaluation.
    pub eval_seed: u64,
    /// Scenes per rollout batch.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            observed_len: 25,
            horizon: 25,
            eval_seed: 0,
            batch_size: 16,
        }
    }
}

/// Per-horizon-step error curves plus the scalar relation F1.
///
/// Aggregation is two-stage: node-averaged per-scene errors, then the mean
/// over scenes (recorded in `aggregation`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean squared error per state component, per horizon step.
    pub mse: Vec<f64>,
    /// Node-averaged L2 position displacement per horizon step.
    pub l2_pos: Vec<f64>,
    /// Node-averaged L2 velocity error per horizon step.
    pub l2_vel: Vec<f64>,
    pub f1: Option<f64>,
    pub runtime_secs: f64,
    pub n_scenes: usize,
    pub aggregation: String,
    pub config: EvalConfig,
}

impl MetricsReport {
    pub fn final_mse(&self) -> f64 {
        *self.mse.last().expect("non-empty horizon")
    }

    /// Writes the curves as CSV: `step,mse,l2_pos,l2_vel`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "step,mse,l2_pos,l2_vel")?;
        for k in 0..self.mse.len() {
            writeln!(
                f,
                "{},{},{},{}",
                k + 1,
                self.mse[k],
                self.l2_pos[k],
                self.l2_vel[k]
            )?;
        }
        Ok(())
    }
}

/// Per-scene, per-step error triple against ground truth.
///
/// `pred` frame `k` corresponds to truth frame `observed_len - 1 + k`.
pub fn scene_error_curves<T: Scalar>(
    truth: &Trajectory<T>,
    pred: &Trajectory<T>,
    observed_len: usize,
    horizon: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = truth.dim;
    let n = truth.n;
    let mut mse = Vec::with_capacity(horizon);
    let mut l2_pos = Vec::with_capacity(horizon);
    let mut l2_vel = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let t = observed_len - 1 + k;
        let mut sq = 0.0f64;
        let mut pos = 0.0f64;
        let mut vel = 0.0f64;
        for node in 0..n {
            let a = pred.state(k, node);
            let b = truth.state(t, node);
            let mut pos_sq = 0.0;
            let mut vel_sq = 0.0;
            for c in 0..dim {
                let dp = (a[c] - b[c]).as_f64();
                let dv = (a[dim + c] - b[dim + c]).as_f64();
                sq += dp * dp + dv * dv;
                pos_sq += dp * dp;
                vel_sq += dv * dv;
            }
            pos += pos_sq.sqrt();
            vel += vel_sq.sqrt();
        }
        let n_f = n as f64;
        mse.push(sq / (n_f * 2.0 * dim as f64));
        l2_pos.push(pos / n_f);
        l2_vel.push(vel / n_f);
    }
    (mse, l2_pos, l2_vel)
}

fn mean_curves(per_scene: &[(Vec<f64>, Vec<f64>, Vec<f64>)], horizon: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let inv = 1.0 / per_scene.len() as f64;
    let mut mse = vec![0.0; horizon];
    let mut pos = vec![0.0; horizon];
    let mut vel = vec![0.0; horizon];
    for (m, p, v) in per_scene {
        for k in 0..horizon {
            mse[k] += m[k] * inv;
            pos[k] += p[k] * inv;
            vel[k] += v[k] * inv;
        }
    }
    (mse, pos, vel)
}

fn check_lengths<T: Scalar>(bundle: &DatasetBundle<T>, cfg: &EvalConfig) -> HarnessResult<()> {
    if bundle.n_scenes() == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    let available = bundle.meta.t_len.saturating_sub(cfg.observed_len);
    if cfg.observed_len == 0 || cfg.horizon == 0 || cfg.horizon > available {
        return Err(HarnessError::Sim(SimError::HorizonTooLong {
            horizon: cfg.horizon,
            available,
        }));
    }
    Ok(())
}

/// Evaluates a trained model: normalized burn-in + rollout, errors computed
/// after denormalization, plus posterior relation F1 over the full scenes.
pub fn evaluate_model<T: Scalar>(
    model: &Forecaster<T>,
    norm: &NormSpec,
    bundle: &DatasetBundle<T>,
    cfg: &EvalConfig,
) -> HarnessResult<MetricsReport> {
    check_lengths(bundle, cfg)?;
    let start = std::time::Instant::now();
    let indices: Vec<usize> = (0..bundle.n_scenes()).collect();
    let batches: Vec<&[usize]> = indices.chunks(cfg.batch_size.max(1)).collect();

    let per_batch: Vec<HarnessResult<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>>> = batches
        .par_iter()
        .enumerate()
        .map(|(batch_idx, chunk)| {
            let mut truths = Vec::with_capacity(chunk.len());
            let mut prefixes = Vec::with_capacity(chunk.len());
            for &s in chunk.iter() {
                let truth = bundle.scene(s)?;
                let states = truth.clone().into_scene_states()?;
                prefixes.push(norm.normalize_scene(&states.prefix(cfg.observed_len)));
                truths.push(truth);
            }
            let refs: Vec<&crate::frames::SceneStates<T>> = prefixes.iter().collect();
            let preds = model.rollout(
                &refs,
                RolloutOptions {
                    horizon: cfg.horizon,
                    seed: cfg.eval_seed.wrapping_add(batch_idx as u64),
                },
            )?;
            Ok(truths
                .iter()
                .zip(preds.iter())
                .map(|(truth, pred)| {
                    let denorm = norm.denormalize_trajectory(pred);
                    scene_error_curves(truth, &denorm, cfg.observed_len, cfg.horizon)
                })
                .collect())
        })
        .collect();

    let mut per_scene = Vec::with_capacity(bundle.n_scenes());
    for batch in per_batch {
        per_scene.extend(batch?);
    }
    let (mse, l2_pos, l2_vel) = mean_curves(&per_scene, cfg.horizon);

    let f1 = posterior_relation_f1(model, norm, bundle)?;
    Ok(MetricsReport {
        mse,
        l2_pos,
        l2_vel,
        f1: Some(f1),
        runtime_secs: start.elapsed().as_secs_f64(),
        n_scenes: bundle.n_scenes(),
        aggregation: "per_scene_mean".to_string(),
        config: cfg.clone(),
    })
}

/// Evaluates the constant-velocity baseline through the same metric path.
pub fn evaluate_cv_baseline<T: Scalar>(
    bundle: &DatasetBundle<T>,
    cfg: &EvalConfig,
) -> HarnessResult<MetricsReport> {
    check_lengths(bundle, cfg)?;
    let start = std::time::Instant::now();
    let dt = T::lit(bundle.meta.dt);
    let per_scene: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..bundle.n_scenes())
        .map(|s| {
            let truth = bundle.scene(s)?;
            let pred = constant_velocity_forecast(&truth.prefix(cfg.observed_len), cfg.horizon, dt)?;
            Ok(scene_error_curves(&truth, &pred, cfg.observed_len, cfg.horizon))
        })
        .collect::<HarnessResult<_>>()?;
    let (mse, l2_pos, l2_vel) = mean_curves(&per_scene, cfg.horizon);
    Ok(MetricsReport {
        mse,
        l2_pos,
        l2_vel,
        f1: None,
        runtime_secs: start.elapsed().as_secs_f64(),
        n_scenes: bundle.n_scenes(),
        aggregation: "per_scene_mean".to_string(),
        config: cfg.clone(),
    })
}

/// Argmax edge types from the posterior over each full scene; rows come back
/// per scene as `(t, edge)` in edge-layout order.
pub fn posterior_edge_argmax<T: Scalar>(
    model: &Forecaster<T>,
    norm: &NormSpec,
    bundle: &DatasetBundle<T>,
) -> HarnessResult<Vec<Vec<usize>>> {
    let k = model.cfg.n_edge_types;
    let indices: Vec<usize> = (0..bundle.n_scenes()).collect();
    let all: Vec<HarnessResult<Vec<Vec<usize>>>> = indices
        .par_chunks(16)
        .map(|chunk| {
            let mut scenes = Vec::with_capacity(chunk.len());
            for &s in chunk {
                scenes.push(norm.normalize_scene(&bundle.scene_states(s)?));
            }
            let refs: Vec<&crate::frames::SceneStates<T>> = scenes.iter().collect();
            let (_, q) = model.edge_beliefs(&refs)?;
            // Rows are (t, scene, edge); re-group per scene.
            let n_edges = EdgeLayout::new(bundle.meta.n_nodes).n_edges();
            let t_len = bundle.meta.t_len;
            let mut out = vec![Vec::with_capacity(t_len * n_edges); chunk.len()];
            for t in 0..t_len {
                for (b, row_group) in out.iter_mut().enumerate() {
                    for e in 0..n_edges {
                        let row = (t * chunk.len() + b) * n_edges + e;
                        let logits = &q.data()[row * k..(row + 1) * k];
                        let best = logits
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                            .expect("non-empty")
                            .0;
                        row_group.push(best);
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut result = Vec::with_capacity(bundle.n_scenes());
    for batch in all {
        result.extend(batch?);
    }
    Ok(result)
}

/// Relation F1 of the posterior against ground-truth labels.
fn posterior_relation_f1<T: Scalar>(
    model: &Forecaster<T>,
    norm: &NormSpec,
    bundle: &DatasetBundle<T>,
) -> HarnessResult<f64> {
    let predictions = posterior_edge_argmax(model, norm, bundle)?;
    let labels: Vec<&[u8]> = (0..bundle.n_scenes())
        .map(|s| bundle.scene_labels(s))
        .collect::<Result<_, _>>()?;
    // Edge type 0 is the designated no-interaction type.
    Ok(f1_relations(
        &predictions,
        &labels,
        bundle.meta.n_nodes,
        bundle.meta.t_len,
        0,
    ))
}

/// Micro-averaged F1 of the interaction-present class over all directed
/// pairs and timesteps.
///
/// `predicted`: per scene, argmax edge type per `(t, edge)` row in
/// edge-layout order. `labels`: per scene `[t][target][source]` bytes. An
/// edge predicts "interaction" when its argmax differs from `no_edge_type`.
pub fn f1_relations(
    predicted: &[Vec<usize>],
    labels: &[&[u8]],
    n: usize,
    t_len: usize,
    no_edge_type: usize,
) -> f64 {
    let layout = EdgeLayout::new(n);
    let n_edges = layout.n_edges();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (scene_pred, scene_labels) in predicted.iter().zip(labels.iter()) {
        for t in 0..t_len {
            for (e, (target, source)) in layout.edges().enumerate() {
                let pred_on = scene_pred[t * n_edges + e] != no_edge_type;
                let truth_on = scene_labels[t * n * n + target * n + source] != 0;
                match (pred_on, truth_on) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }
    if 2 * tp + fp + fn_ == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_spec_examples() {
        // Perfect prediction → 1.0.
        let labels_data = vec![0u8, 1, 0, 0]; // (target 0, source 1) active
        let labels: Vec<&[u8]> = vec![&labels_data];
        let perfect = vec![vec![1usize, 0]]; // edges: (0,1), (1,0)
        assert_eq!(f1_relations(&perfect, &labels, 2, 1, 0), 1.0);

        // All no-edge on data with interactions → 0.0.
        let none = vec![vec![0usize, 0]];
        assert_eq!(f1_relations(&none, &labels, 2, 1, 0), 0.0);

        // The transposed prediction is wrong: direction matters.
        let transposed = vec![vec![0usize, 1]];
        assert_eq!(f1_relations(&transposed, &labels, 2, 1, 0), 0.0);

        // Empty labels and empty predictions count as perfect.
        let quiet_data = vec![0u8; 4];
        let quiet: Vec<&[u8]> = vec![&quiet_data];
        assert_eq!(f1_relations(&none, &quiet, 2, 1, 0), 1.0);
    }

    #[test]
    fn f1_matches_confusion_count_formula() {
        // TP=2, FP=1, FN=1 → F1 = 2·2/(2·2+1+1) = 2/3.
        // Scene with 4 timesteps, 2 nodes, edge (0,1) truth-active at t=0..2.
        let mut labels_data = vec![0u8; 4 * 4];
        for t in 0..3 {
            labels_data[t * 4 + 1] = 1; // target 0, source 1
        }
        let labels: Vec<&[u8]> = vec![&labels_data];
        // Predict active at t=0,1 (TP=2), miss t=2 (FN=1), false alarm t=3 (FP=1).
        let pred = vec![vec![
            1, 0, // t=0
            1, 0, // t=1
            0, 0, // t=2
            1, 0, // t=3
        ]];
        let f1 = f1_relations(&pred, &labels, 2, 4, 0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12, "{f1}");
    }

    #[test]
    fn error_curves_on_hand_computed_fixture() {
        // One node, dim 2; prediction offset by (0.3, 0.4) in position and
        // (1, 0) in velocity at every step: l2_pos = 0.5, l2_vel = 1,
        // mse = (0.09 + 0.16 + 1)/4.
        let t_len = 6;
        let obs = 3;
        let horizon = 3;
        let mut truth = Trajectory::<f64>::zeros(2, 1, t_len);
        for t in 0..t_len {
            truth.set_state(t, 0, &[t as f64, 2.0 * t as f64, 1.0, 2.0]);
        }
        let mut pred = Trajectory::<f64>::zeros(2, 1, horizon + 1);
        for k in 0..=horizon {
            let t = obs - 1 + k;
            pred.set_state(
                k,
                0,
                &[t as f64 + 0.3, 2.0 * t as f64 + 0.4, 2.0, 2.0],
            );
        }
        let (mse, l2_pos, l2_vel) = scene_error_curves(&truth, &pred, obs, horizon);
        for k in 0..horizon {
            assert!((l2_pos[k] - 0.5).abs() < 1e-12);
            assert!((l2_vel[k] - 1.0).abs() < 1e-12);
            assert!((mse[k] - (0.09 + 0.16 + 1.0) / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_node_permutation_invariant() {
        let mut truth = Trajectory::<f64>::zeros(2, 2, 4);
        let mut pred = Trajectory::<f64>::zeros(2, 2, 3);
        for t in 0..4 {
            truth.set_state(t, 0, &[0.1 * t as f64, 0.0, 0.5, -0.2]);
            truth.set_state(t, 1, &[1.0, 0.3 * t as f64, -0.1, 0.9]);
        }
        for k in 0..3 {
            pred.set_state(k, 0, &[0.2 * k as f64, 0.1, 0.4, 0.0]);
            pred.set_state(k, 1, &[0.9, 0.2 * k as f64, 0.0, 1.0]);
        }
        // Swap both nodes consistently.
        let mut truth_sw = Trajectory::<f64>::zeros(2, 2, 4);
        let mut pred_sw = Trajectory::<f64>::zeros(2, 2, 3);
        for t in 0..4 {
            truth_sw.set_state(t, 0, truth.state(t, 1));
            truth_sw.set_state(t, 1, truth.state(t, 0));
        }
        for k in 0..3 {
            pred_sw.set_state(k, 0, pred.state(k, 1));
            pred_sw.set_state(k, 1, pred.state(k, 0));
        }
        let a = scene_error_curves(&truth, &pred, 2, 2);
        let b = scene_error_curves(&truth_sw, &pred_sw, 2, 2);
        assert_eq!(a, b);
    }
}
