//! Synthetic planar dataset: all particles but the last move with constant
//! velocity; the last is pushed radially away from any particle closer than
//! the repulsion radius. Interaction labels mark exactly the timesteps where
//! that distance predicate holds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{feature_layout_note, scene_seed, DatasetBundle, DatasetKind, DatasetMeta, SimError, SimResult};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub n_particles: usize,
    pub t_len: usize,
    pub dt: f64,
    /// Repulsion radius ρ₀: the push (and the label) is active whenever the
    /// pushed particle is closer than this to another particle.
    pub radius: f64,
    /// Magnitude of the constant radial repulsion acceleration.
    pub push_accel: f64,
    pub pos_scale: f64,
    pub vel_scale: f64,
    pub seed: u64,
    pub split: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenes: 200,
            n_particles: 3,
            t_len: 50,
            dt: 0.1,
            radius: 1.0,
            push_accel: 3.0,
            pos_scale: 1.2,
            vel_scale: 0.6,
            seed: 0,
            split: "train".to_string(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> SimResult<()> {
        if self.n_scenes == 0 || self.n_particles < 2 {
            return Err(SimError::InvalidConfig(
                "need at least one scene and two particles".into(),
            ));
        }
        if self.t_len < 2 {
            return Err(SimError::InvalidConfig("t_len must be at least 2".into()));
        }
        for (name, v) in [
            ("dt", self.dt),
            ("radius", self.radius),
            ("push_accel", self.push_accel),
            ("pos_scale", self.pos_scale),
            ("vel_scale", self.vel_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Generates the synthetic dataset. Deterministic in `(config, seed)`;
/// scenes are seeded independently so parallel generation cannot reorder
/// content.
pub fn gen_synthetic<T: Scalar>(cfg: &SynthConfig) -> SimResult<DatasetBundle<T>> {
    cfg.validate()?;
    let n = cfg.n_particles;
    let t_len = cfg.t_len;
    let dim = 2usize;
    let scene_len = t_len * n * 2 * dim;
    let label_len = t_len * n * n;

    let scenes: Vec<(Vec<T>, Vec<u8>)> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|s| gen_scene(cfg, scene_seed(cfg.seed, s)))
        .collect();

    let mut trajectories = Vec::with_capacity(cfg.n_scenes * scene_len);
    let mut edge_labels = Vec::with_capacity(cfg.n_scenes * label_len);
    for (traj, labels) in scenes {
        trajectories.extend(traj);
        edge_labels.extend(labels);
    }

    Ok(DatasetBundle {
        meta: DatasetMeta {
            kind: DatasetKind::Synthetic,
            split: cfg.split.clone(),
            dim,
            n_nodes: n,
            t_len,
            n_scenes: cfg.n_scenes,
            dt: cfg.dt,
            stride: 1,
            seed: cfg.seed,
            feature_layout: feature_layout_note(),
        },
        trajectories,
        edge_labels,
        charges: None,
    })
}

/// Integrates the pushed particle against fixed constant-velocity movers,
/// returning its trajectory, velocities, and the interaction labels.
///
/// Semi-implicit update: the push computed from the state at `t` lands in
/// the velocity used for the step to `t+1`, so a push separates the pair
/// already at the next recorded frame.
fn integrate_pushed(
    cfg: &SynthConfig,
    movers_p0: &[[f64; 2]],
    movers_u0: &[[f64; 2]],
    start_p: [f64; 2],
    start_u: [f64; 2],
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<Vec<bool>>) {
    let t_len = cfg.t_len;
    let dt = cfg.dt;
    let mut p = start_p;
    let mut u = start_u;
    let mut ps = Vec::with_capacity(t_len);
    let mut us = Vec::with_capacity(t_len);
    let mut active = Vec::with_capacity(t_len);
    for t in 0..t_len {
        ps.push(p);
        us.push(u);
        let time = t as f64 * dt;
        let mut accel = [0.0f64; 2];
        let mut row = vec![false; movers_p0.len()];
        for (j, (mp, mu)) in movers_p0.iter().zip(movers_u0.iter()).enumerate() {
            let pj = [mp[0] + time * mu[0], mp[1] + time * mu[1]];
            let delta = [p[0] - pj[0], p[1] - pj[1]];
            let dist = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
            if dist < cfg.radius {
                row[j] = true;
                let dir = if dist > 1e-9 {
                    [delta[0] / dist, delta[1] / dist]
                } else {
                    [1.0, 0.0]
                };
                accel[0] += cfg.push_accel * dir[0];
                accel[1] += cfg.push_accel * dir[1];
            }
        }
        active.push(row);
        if t + 1 < t_len {
            u[0] += dt * accel[0];
            u[1] += dt * accel[1];
            p[0] += dt * u[0];
            p[1] += dt * u[1];
        }
    }
    (ps, us, active)
}

fn gen_scene<T: Scalar>(cfg: &SynthConfig, seed: u64) -> (Vec<T>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_particles;
    let t_len = cfg.t_len;
    let dt = cfg.dt;
    let pushed = n - 1;

    let mut start_p = [0.0f64; 2];
    let mut start_u = [0.0f64; 2];
    for c in 0..2 {
        let z: f64 = rng.sample(StandardNormal);
        start_p[c] = z * 0.4 * cfg.pos_scale;
        let z: f64 = rng.sample(StandardNormal);
        start_u[c] = z * 0.5 * cfg.vel_scale;
    }

    // Movers are placed one at a time, each aimed (with jitter) at where the
    // pushed particle sits — under the pushes of the movers placed so far —
    // at the mover's own crossing time. Encounters therefore spread over
    // the whole scene instead of clustering at the start.
    let mut movers_p0: Vec<[f64; 2]> = Vec::with_capacity(pushed);
    let mut movers_u0: Vec<[f64; 2]> = Vec::with_capacity(pushed);
    let mut cross_times: Vec<f64> = (0..pushed)
        .map(|_| rng.gen_range(0.2..0.95) * (t_len as f64 - 1.0) * dt)
        .collect();
    cross_times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    for &t_cross in &cross_times {
        let (ps, _, _) = integrate_pushed(cfg, &movers_p0, &movers_u0, start_p, start_u);
        let frame = ((t_cross / dt).round() as usize).min(t_len - 1);
        let aim = [
            ps[frame][0] + rng.gen_range(-0.4..0.4),
            ps[frame][1] + rng.gen_range(-0.4..0.4),
        ];
        let mut p0 = [0.0f64; 2];
        for c in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            p0[c] = aim[c] + z * cfg.pos_scale * 2.0;
        }
        let mut u0 = [0.0f64; 2];
        for c in 0..2 {
            let jitter: f64 = rng.sample(StandardNormal);
            u0[c] = (aim[c] - p0[c]) / t_cross + jitter * 0.1 * cfg.vel_scale;
        }
        movers_p0.push(p0);
        movers_u0.push(u0);
    }

    let (ps, us, active) = integrate_pushed(cfg, &movers_p0, &movers_u0, start_p, start_u);

    let mut traj = vec![T::zero(); t_len * n * 4];
    let mut labels = vec![0u8; t_len * n * n];

    // Constant-velocity particles follow the closed form exactly.
    for (i, (p0, u0)) in movers_p0.iter().zip(movers_u0.iter()).enumerate() {
        for t in 0..t_len {
            let time = t as f64 * dt;
            let o = (t * n + i) * 4;
            traj[o] = T::lit(p0[0] + time * u0[0]);
            traj[o + 1] = T::lit(p0[1] + time * u0[1]);
            traj[o + 2] = T::lit(u0[0]);
            traj[o + 3] = T::lit(u0[1]);
        }
    }
    for t in 0..t_len {
        let o = (t * n + pushed) * 4;
        traj[o] = T::lit(ps[t][0]);
        traj[o + 1] = T::lit(ps[t][1]);
        traj[o + 2] = T::lit(us[t][0]);
        traj[o + 3] = T::lit(us[t][1]);
        for (j, &is_active) in active[t].iter().enumerate() {
            if is_active {
                labels[t * n * n + pushed * n + j] = 1;
            }
        }
    }

    (traj, labels)
}
