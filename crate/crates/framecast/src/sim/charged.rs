//! Charged-particle dataset: point charges interacting through softened
//! inverse-square forces, integrated with symplectic leapfrog at a fine step
//! and subsampled by a stride. No confining boxes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{feature_layout_note, scene_seed, DatasetBundle, DatasetKind, DatasetMeta, SimError, SimResult};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChargedConfig {
    pub n_scenes: usize,
    pub n_particles: usize,
    /// Number of recorded frames.
    pub t_len: usize,
    pub dim: usize,
    pub dt_fine: f64,
    /// Fine steps between recorded frames.
    pub stride: usize,
    /// Force constant c in `c·q_i·q_j·(p_i - p_j)/max(‖p_i - p_j‖³, δ³)`.
    pub coupling: f64,
    /// Softening length δ clamping the force at small separations.
    pub softening: f64,
    pub pos_scale: f64,
    /// Initial speeds are normalized to exactly this magnitude.
    pub vel_norm: f64,
    /// Charge magnitude; zero turns all forces off (test hook).
    pub charge_magnitude: f64,
    pub seed: u64,
    pub split: String,
}

impl Default for ChargedConfig {
    fn default() -> Self {
        Self {
            n_scenes: 2000,
            n_particles: 5,
            t_len: 49,
            dim: 3,
            dt_fine: 1e-3,
            stride: 100,
            coupling: 1.0,
            softening: 0.1,
            pos_scale: 0.5,
            vel_norm: 0.5,
            charge_magnitude: 1.0,
            seed: 0,
            split: "train".to_string(),
        }
    }
}

impl ChargedConfig {
    pub fn validate(&self) -> SimResult<()> {
        if self.n_scenes == 0 || self.n_particles < 2 {
            return Err(SimError::InvalidConfig(
                "need at least one scene and two particles".into(),
            ));
        }
        if self.t_len < 2 {
            return Err(SimError::InvalidConfig("t_len must be at least 2".into()));
        }
        if !(self.dim == 2 || self.dim == 3) {
            return Err(SimError::InvalidConfig("dim must be 2 or 3".into()));
        }
        if self.stride == 0 {
            return Err(SimError::InvalidConfig("stride must be positive".into()));
        }
        for (name, v) in [
            ("dt_fine", self.dt_fine),
            ("coupling", self.coupling),
            ("softening", self.softening),
            ("pos_scale", self.pos_scale),
            ("vel_norm", self.vel_norm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.charge_magnitude < 0.0 {
            return Err(SimError::InvalidConfig(
                "charge_magnitude must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Mutable integrator state for one scene (unit masses).
#[derive(Clone, Debug, PartialEq)]
pub struct ChargedState {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub charges: Vec<f64>,
}

impl ChargedState {
    pub fn n(&self) -> usize {
        self.charges.len()
    }

    pub fn momentum(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n() {
            for c in 0..self.dim {
                m[c] += self.velocities[i * self.dim + c];
            }
        }
        m
    }
}

/// Softened pairwise accelerations. Each unordered pair contributes exactly
/// equal-and-opposite terms, so total momentum is conserved to rounding.
pub fn charged_accelerations(
    dim: usize,
    positions: &[f64],
    charges: &[f64],
    coupling: f64,
    softening: f64,
) -> Vec<f64> {
    let n = charges.len();
    let soft3 = softening * softening * softening;
    let mut acc = vec![0.0; n * dim];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut delta = [0.0f64; 3];
            let mut dist_sq = 0.0;
            for c in 0..dim {
                let d = positions[i * dim + c] - positions[j * dim + c];
                delta[c] = d;
                dist_sq += d * d;
            }
            let dist = dist_sq.sqrt();
            let denom = (dist * dist * dist).max(soft3);
            let f = coupling * charges[i] * charges[j] / denom;
            for c in 0..dim {
                let fc = f * delta[c];
                acc[i * dim + c] += fc;
                acc[j * dim + c] -= fc;
            }
        }
    }
    acc
}

/// Advances the state by `n_steps` kick-drift-kick leapfrog steps.
pub fn leapfrog_steps(state: &mut ChargedState, n_steps: usize, dt: f64, coupling: f64, softening: f64) {
    let dim = state.dim;
    let half = 0.5 * dt;
    let mut acc = charged_accelerations(dim, &state.positions, &state.charges, coupling, softening);
    for _ in 0..n_steps {
        for (v, a) in state.velocities.iter_mut().zip(acc.iter()) {
            *v += half * a;
        }
        for (p, v) in state.positions.iter_mut().zip(state.velocities.iter()) {
            *p += dt * v;
        }
        acc = charged_accelerations(dim, &state.positions, &state.charges, coupling, softening);
        for (v, a) in state.velocities.iter_mut().zip(acc.iter()) {
            *v += half * a;
        }
    }
}

/// Generates the charged dataset. Every ordered pair interacts, so edge
/// labels are all 1 off the diagonal and constant over time; the
/// attractive/repulsive type is derivable from the stored charges.
pub fn gen_charged<T: Scalar>(cfg: &ChargedConfig) -> SimResult<DatasetBundle<T>> {
    cfg.validate()?;
    let n = cfg.n_particles;
    let t_len = cfg.t_len;
    let dim = cfg.dim;
    let scene_len = t_len * n * 2 * dim;

    let scenes: Vec<(Vec<T>, Vec<f64>)> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|s| gen_scene(cfg, scene_seed(cfg.seed, s)))
        .collect();

    let mut trajectories = Vec::with_capacity(cfg.n_scenes * scene_len);
    let mut charges = Vec::with_capacity(cfg.n_scenes * n);
    for (traj, q) in scenes {
        trajectories.extend(traj);
        charges.extend(q.into_iter().map(T::lit));
    }

    let mut edge_labels = vec![0u8; cfg.n_scenes * t_len * n * n];
    for s in 0..cfg.n_scenes {
        for t in 0..t_len {
            for target in 0..n {
                for source in 0..n {
                    if target != source {
                        edge_labels[((s * t_len + t) * n + target) * n + source] = 1;
                    }
                }
            }
        }
    }

    Ok(DatasetBundle {
        meta: DatasetMeta {
            kind: DatasetKind::Charged,
            split: cfg.split.clone(),
            dim,
            n_nodes: n,
            t_len,
            n_scenes: cfg.n_scenes,
            dt: cfg.dt_fine * cfg.stride as f64,
            stride: cfg.stride,
            seed: cfg.seed,
            feature_layout: feature_layout_note(),
        },
        trajectories,
        edge_labels,
        charges: Some(charges),
    })
}

/// Samples one scene's initial conditions.
pub fn sample_initial_state(cfg: &ChargedConfig, seed: u64) -> ChargedState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_particles;
    let dim = cfg.dim;
    let charges: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                cfg.charge_magnitude
            } else {
                -cfg.charge_magnitude
            }
        })
        .collect();
    let positions: Vec<f64> = (0..n * dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * cfg.pos_scale
        })
        .collect();
    let mut velocities: Vec<f64> = (0..n * dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * cfg.vel_norm
        })
        .collect();
    // Normalize each particle's speed to exactly vel_norm.
    for i in 0..n {
        let v = &mut velocities[i * dim..(i + 1) * dim];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x *= cfg.vel_norm / norm;
            }
        }
    }
    ChargedState {
        dim,
        positions,
        velocities,
        charges,
    }
}

fn gen_scene<T: Scalar>(cfg: &ChargedConfig, seed: u64) -> (Vec<T>, Vec<f64>) {
    let n = cfg.n_particles;
    let dim = cfg.dim;
    let mut state = sample_initial_state(cfg, seed);
    let mut traj = Vec::with_capacity(cfg.t_len * n * 2 * dim);
    for t in 0..cfg.t_len {
        if t > 0 {
            leapfrog_steps(
                &mut state,
                cfg.stride,
                cfg.dt_fine,
                cfg.coupling,
                cfg.softening,
            );
        }
        for i in 0..n {
            for c in 0..dim {
                traj.push(T::lit(state.positions[i * dim + c]));
            }
            for c in 0..dim {
                traj.push(T::lit(state.velocities[i * dim + c]));
            }
        }
    }
    (traj, state.charges)
}
