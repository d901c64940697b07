//! The assembled forecaster: encoder + decoder over canonical frames, the
//! teacher-forced ELBO, streaming rollout, and checkpoint round trips.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::frames::{canonicalize_frame, CanonicalFrame, OrientationMode, SceneStates};
use crate::geometry::orientation_from_velocity;
use crate::nn::{FwdCtx, ParamSet};
use crate::scalar::Scalar;
use crate::sim::Trajectory;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

use super::{
    build_step_features, categorical_kl, categorical_kl_to_fixed, categorical_sample_onehot,
    gaussian_nll, gumbel::argmax_onehot, gumbel_noise, sample_in_graph, Decoder, DecoderKind,
    EdgeLayout, EdgePolicy, Encoder, ModelConfig, ModelError, ModelResult, StepFeatures,
    StepInput,
};

/// Scalar loss components of one teacher-forced pass, for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: f64,
    pub nll: f64,
    pub kl: f64,
}

/// Output of a teacher-forced forward pass.
pub struct TeacherForcedPass<T> {
    pub loss: Var,
    pub parts: LossParts,
    /// Batch-norm running-stat updates to apply after the optimizer step.
    pub stat_updates: Vec<(String, Tensor<T>)>,
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    pub horizon: usize,
    /// Seed for edge sampling during burn-in and rollout.
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    init_seed: u64,
    extra: serde_json::Value,
}

pub struct Forecaster<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<T>,
    encoder: Encoder,
    decoder: Decoder,
    pub init_seed: u64,
}

impl<T: Scalar> Forecaster<T> {
    /// Fresh model with parameters drawn from the seed.
    pub fn new(cfg: ModelConfig, seed: u64) -> ModelResult<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, &mut rng, &cfg);
        let decoder = Decoder::new(&mut params, &mut rng, &cfg);
        Ok(Self {
            cfg,
            params,
            encoder,
            decoder,
            init_seed: seed,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    // ── batch preparation ──────────────────────────────────────────────

    fn check_batch(&self, scenes: &[&SceneStates<T>]) -> ModelResult<(usize, usize)> {
        if scenes.is_empty() {
            return Err(ModelError::BadBatch("empty batch".into()));
        }
        let t_len = scenes[0].t_len();
        let n = scenes[0].n_nodes();
        for (i, s) in scenes.iter().enumerate() {
            if s.dim() != self.cfg.dim {
                return Err(ModelError::BadBatch(format!(
                    "scene {i} has dim {}, model expects {}",
                    s.dim(),
                    self.cfg.dim
                )));
            }
            if s.t_len() != t_len || s.n_nodes() != n {
                return Err(ModelError::BadBatch(format!(
                    "scene {i} shape ({}, {}) differs from ({t_len}, {n})",
                    s.t_len(),
                    s.n_nodes()
                )));
            }
        }
        Ok((t_len, n))
    }

    /// Canonicalizes and stacks `t_steps` timesteps of every scene in
    /// time-major block order `(t, scene)`.
    fn stacked_features(
        &self,
        scenes: &[&SceneStates<T>],
        t_steps: usize,
    ) -> ModelResult<StepFeatures<T>> {
        let n = scenes[0].n_nodes();
        let state_dim = self.cfg.state_dim();
        let mut canon: Vec<CanonicalFrame<T>> = Vec::with_capacity(t_steps * scenes.len());
        let mut states: Vec<Vec<T>> = Vec::with_capacity(t_steps * scenes.len());
        for t in 0..t_steps {
            for scene in scenes {
                canon.push(scene.canonicalize(t, self.cfg.frame)?);
                let mut st = Vec::with_capacity(n * state_dim);
                for node in 0..n {
                    st.extend(scene.state(t, node));
                }
                states.push(st);
            }
        }
        let mut blocks = Vec::with_capacity(t_steps * scenes.len());
        for t in 0..t_steps {
            for (b, scene) in scenes.iter().enumerate() {
                let idx = t * scenes.len() + b;
                blocks.push(StepInput {
                    canon: &canon[idx],
                    states: &states[idx],
                    omegas: scene.frame_orientations(t),
                });
            }
        }
        build_step_features(&self.cfg, &blocks)
    }

    /// Target states `x^{t+1}` matching the time-major prediction rows.
    fn stacked_targets(&self, scenes: &[&SceneStates<T>], t_steps: usize) -> Tensor<T> {
        let n = scenes[0].n_nodes();
        let state_dim = self.cfg.state_dim();
        let mut data = Vec::with_capacity(t_steps * scenes.len() * n * state_dim);
        for t in 1..=t_steps {
            for scene in scenes {
                for node in 0..n {
                    data.extend(scene.state(t, node));
                }
            }
        }
        Tensor::new(vec![t_steps * scenes.len() * n, state_dim], data)
            .expect("assembled to shape")
    }

    // ── training forward ───────────────────────────────────────────────

    /// Teacher-forced negative ELBO over a batch of scenes, averaged per
    /// scene: one-step-ahead Gaussian NLL plus the edge-type KL.
    pub fn teacher_forced_loss<R: Rng>(
        &self,
        g: &mut Graph<T>,
        scenes: &[&SceneStates<T>],
        training: bool,
        rng: &mut R,
    ) -> ModelResult<TeacherForcedPass<T>> {
        let (t_len, n) = self.check_batch(scenes)?;
        if t_len < 2 {
            return Err(ModelError::BadBatch("scenes need at least 2 frames".into()));
        }
        let batch = scenes.len();
        let n_edges = EdgeLayout::new(n).n_edges();

        let enc_feats = self.stacked_features(scenes, t_len)?;
        let mut ctx = FwdCtx::new(g, &self.params, training);
        let beliefs = self.encoder.encode_batch(&mut ctx, &enc_feats, t_len)?;

        // Relaxed posterior samples; the noise is a constant, so gradients
        // flow through the logits (reparameterization).
        let noise = gumbel_noise::<T, _>(rng, &[t_len * batch * n_edges, self.cfg.n_edge_types]);
        let noise = ctx.g.constant(noise);
        let temperature = T::lit(self.cfg.gumbel_temperature);
        let z = sample_in_graph(ctx.g, beliefs.q_logits, noise, temperature)?;

        let dec_steps = t_len - 1;
        let dec_feats = self.stacked_features(scenes, dec_steps)?;
        let mu = match self.cfg.decoder {
            DecoderKind::Markovian => {
                let z_dec = ctx.g.slice_rows(z, 0, dec_steps * batch * n_edges)?;
                let (mu, _) = self.decoder.decode_step(&mut ctx, &dec_feats, z_dec, None)?;
                mu
            }
            DecoderKind::Recurrent => {
                let mut hidden = {
                    let h0 = self
                        .decoder
                        .zero_hidden::<T>(batch * n)
                        .expect("recurrent decoder has hidden state");
                    Some(ctx.g.constant(h0))
                };
                let mut mus = Vec::with_capacity(dec_steps);
                for t in 0..dec_steps {
                    let step_feats = self.step_slice(&dec_feats, t, batch, n, n_edges);
                    let z_t = ctx.g.slice_rows(z, t * batch * n_edges, batch * n_edges)?;
                    let (mu_t, h_new) =
                        self.decoder
                            .decode_step(&mut ctx, &step_feats, z_t, hidden)?;
                    hidden = h_new;
                    mus.push(mu_t);
                }
                ctx.g.concat_rows(&mus)?
            }
        };

        let targets = self.stacked_targets(scenes, dec_steps);
        let sigma_sq = T::lit(self.cfg.sigma_sq);
        let nll = gaussian_nll(ctx.g, mu, &targets, sigma_sq)?;
        let kl = match self.cfg.fixed_prior() {
            Some(p) => {
                let probs: Vec<T> = p.into_iter().map(T::lit).collect();
                categorical_kl_to_fixed(ctx.g, beliefs.q_logits, &probs)?
            }
            None => categorical_kl(ctx.g, beliefs.q_logits, beliefs.prior_logits)?,
        };
        let total = ctx.g.add(nll, kl)?;
        let inv_batch = T::one() / T::from_usize(batch).expect("batch fits scalar");
        let loss = ctx.g.scale(total, inv_batch);

        let parts = LossParts {
            total: ctx.g.value(loss).item().expect("scalar").as_f64(),
            nll: ctx.g.value(nll).item().expect("scalar").as_f64() * inv_batch.as_f64(),
            kl: ctx.g.value(kl).item().expect("scalar").as_f64() * inv_batch.as_f64(),
        };
        let stat_updates = std::mem::take(&mut ctx.stat_updates);
        Ok(TeacherForcedPass {
            loss,
            parts,
            stat_updates,
        })
    }

    /// View of one timestep's blocks within time-major stacked features.
    fn step_slice(
        &self,
        feats: &StepFeatures<T>,
        t: usize,
        batch: usize,
        n: usize,
        n_edges: usize,
    ) -> StepFeatures<T> {
        let er = batch * n_edges;
        let nr = batch * n;
        let slice_rows = |tensor: &Tensor<T>, start: usize, len: usize| {
            let cols = tensor.shape()[1];
            Tensor::new(
                vec![len, cols],
                tensor.data()[start * cols..(start + len) * cols].to_vec(),
            )
            .expect("in range")
        };
        StepFeatures {
            n_blocks: batch,
            n,
            rows_edges: er,
            rows_nodes: nr,
            edge_in: slice_rows(&feats.edge_in, t * er, er),
            delta_p: slice_rows(&feats.delta_p, t * er, er),
            self_in: slice_rows(&feats.self_in, t * nr, nr),
            x_nodes: slice_rows(&feats.x_nodes, t * nr, nr),
            rot_blocks: slice_rows(&feats.rot_blocks, t * nr, nr),
            groups: std::sync::Arc::new(
                feats.groups[t * er..(t + 1) * er]
                    .iter()
                    .map(|&g| g - t * nr)
                    .collect(),
            ),
            gather_target: std::sync::Arc::new(
                feats.gather_target[t * er..(t + 1) * er]
                    .iter()
                    .map(|&g| g - t * nr)
                    .collect(),
            ),
            gather_source: std::sync::Arc::new(
                feats.gather_source[t * er..(t + 1) * er]
                    .iter()
                    .map(|&g| g - t * nr)
                    .collect(),
            ),
        }
    }

    // ── evaluation forward ─────────────────────────────────────────────

    /// Prior and posterior logits over whole scenes, as plain tensors with
    /// rows ordered `(t, scene, edge)`.
    pub fn edge_beliefs(
        &self,
        scenes: &[&SceneStates<T>],
    ) -> ModelResult<(Tensor<T>, Tensor<T>)> {
        let (t_len, _) = self.check_batch(scenes)?;
        let feats = self.stacked_features(scenes, t_len)?;
        let mut g = Graph::inference();
        let mut ctx = FwdCtx::new(&mut g, &self.params, false);
        let beliefs = self.encoder.encode_batch(&mut ctx, &feats, t_len)?;
        let prior = g.value(beliefs.prior_logits).clone();
        let q = g.value(beliefs.q_logits).clone();
        Ok((prior, q))
    }

    /// Burn-in on the observed scenes, then free rollout for `horizon`
    /// steps with edges drawn from the prior.
    ///
    /// Returned trajectories have `horizon + 1` frames, frame 0 being the
    /// observed anchor. Orientation updates follow the scenes' mode:
    /// velocity-approximated orientations are recomputed from predicted
    /// velocities; intrinsic orientations are held at the anchor values.
    pub fn rollout(
        &self,
        scenes: &[&SceneStates<T>],
        opts: RolloutOptions,
    ) -> ModelResult<Vec<Trajectory<T>>> {
        let (t_obs, n) = self.check_batch(scenes)?;
        let batch = scenes.len();
        let dim = self.cfg.dim;
        let adim = self.cfg.angular_dim();
        let state_dim = self.cfg.state_dim();
        let n_edges = EdgeLayout::new(n).n_edges();
        let mode = scenes[0].mode();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

        let mut enc_stream = self.encoder.stream::<T>(batch * n_edges);
        let mut dec_hidden: Option<Tensor<T>> = self.decoder.zero_hidden(batch * n);

        // Burn-in over every observed frame except the anchor.
        for t in 0..t_obs.saturating_sub(1) {
            let feats = self.observed_step_features(scenes, t)?;
            let (_, new_hidden) = self.advance_step(&feats, &mut enc_stream, &dec_hidden, &mut rng)?;
            dec_hidden = new_hidden;
        }

        // Current state: positions/velocities/orientations at the anchor.
        let anchor = t_obs - 1;
        let mut positions: Vec<T> = Vec::with_capacity(batch * n * dim);
        let mut velocities: Vec<T> = Vec::with_capacity(batch * n * dim);
        let mut omegas: Vec<T> = Vec::with_capacity(batch * n * adim);
        for scene in scenes {
            positions.extend_from_slice(scene.frame_positions(anchor));
            velocities.extend_from_slice(scene.frame_velocities(anchor));
            omegas.extend_from_slice(scene.frame_orientations(anchor));
        }

        let mut outputs: Vec<Trajectory<T>> =
            (0..batch).map(|_| Trajectory::zeros(dim, n, opts.horizon + 1)).collect();
        for (b, out) in outputs.iter_mut().enumerate() {
            for node in 0..n {
                let mut state = Vec::with_capacity(state_dim);
                state.extend_from_slice(
                    &positions[(b * n + node) * dim..(b * n + node + 1) * dim],
                );
                state.extend_from_slice(
                    &velocities[(b * n + node) * dim..(b * n + node + 1) * dim],
                );
                out.set_state(0, node, &state);
            }
        }

        for k in 1..=opts.horizon {
            let feats =
                self.predicted_step_features(batch, n, &positions, &velocities, &omegas)?;
            let (mu, new_hidden) = self.advance_step(&feats, &mut enc_stream, &dec_hidden, &mut rng)?;
            dec_hidden = new_hidden;
            let mu = mu.expect("rollout steps always decode");
            for b in 0..batch {
                for node in 0..n {
                    let row = (b * n + node) * state_dim;
                    let state = &mu.data()[row..row + state_dim];
                    outputs[b].set_state(k, node, state);
                    for c in 0..dim {
                        positions[(b * n + node) * dim + c] = state[c];
                        velocities[(b * n + node) * dim + c] = state[dim + c];
                    }
                    if mode == OrientationMode::FromVelocity {
                        let w = orientation_from_velocity(&state[dim..], dim)
                            .map_err(|e| ModelError::BadBatch(e.to_string()))?;
                        omegas[(b * n + node) * adim..(b * n + node + 1) * adim]
                            .copy_from_slice(&w);
                    }
                }
            }
        }
        Ok(outputs)
    }

    fn observed_step_features(
        &self,
        scenes: &[&SceneStates<T>],
        t: usize,
    ) -> ModelResult<StepFeatures<T>> {
        let n = scenes[0].n_nodes();
        let state_dim = self.cfg.state_dim();
        let mut canon = Vec::with_capacity(scenes.len());
        let mut states = Vec::with_capacity(scenes.len());
        for scene in scenes {
            canon.push(scene.canonicalize(t, self.cfg.frame)?);
            let mut st = Vec::with_capacity(n * state_dim);
            for node in 0..n {
                st.extend(scene.state(t, node));
            }
            states.push(st);
        }
        let blocks: Vec<StepInput<'_, T>> = scenes
            .iter()
            .enumerate()
            .map(|(b, scene)| StepInput {
                canon: &canon[b],
                states: &states[b],
                omegas: scene.frame_orientations(t),
            })
            .collect();
        build_step_features(&self.cfg, &blocks)
    }

    fn predicted_step_features(
        &self,
        batch: usize,
        n: usize,
        positions: &[T],
        velocities: &[T],
        omegas: &[T],
    ) -> ModelResult<StepFeatures<T>> {
        let dim = self.cfg.dim;
        let adim = self.cfg.angular_dim();
        let state_dim = self.cfg.state_dim();
        let mut canon = Vec::with_capacity(batch);
        let mut states = Vec::with_capacity(batch);
        for b in 0..batch {
            let p = &positions[b * n * dim..(b + 1) * n * dim];
            let u = &velocities[b * n * dim..(b + 1) * n * dim];
            let w = &omegas[b * n * adim..(b + 1) * n * adim];
            canon.push(canonicalize_frame(dim, n, p, u, w, self.cfg.frame)?);
            let mut st = Vec::with_capacity(n * state_dim);
            for node in 0..n {
                st.extend_from_slice(&p[node * dim..(node + 1) * dim]);
                st.extend_from_slice(&u[node * dim..(node + 1) * dim]);
            }
            states.push(st);
        }
        let blocks: Vec<StepInput<'_, T>> = (0..batch)
            .map(|b| StepInput {
                canon: &canon[b],
                states: &states[b],
                omegas: &omegas[b * n * adim..(b + 1) * n * adim],
            })
            .collect();
        build_step_features(&self.cfg, &blocks)
    }

    /// One inference step: advance the encoder stream, draw hard edges from
    /// the prior, decode. Returns the predicted states and new hidden.
    fn advance_step(
        &self,
        feats: &StepFeatures<T>,
        enc_stream: &mut super::EncoderStream<T>,
        dec_hidden: &Option<Tensor<T>>,
        rng: &mut ChaCha8Rng,
    ) -> ModelResult<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        let mut g = Graph::inference();
        let learned_prior = {
            let mut ctx = FwdCtx::new(&mut g, &self.params, false);
            let v = self.encoder.stream_step(&mut ctx, enc_stream, feats)?;
            ctx.g.value(v).clone()
        };
        let prior_logits = match self.cfg.fixed_prior() {
            // Fixed-prior variant: inference samples from the fixed
            // categorical instead of the learned head.
            Some(p) => {
                let log_p: Vec<T> = p.into_iter().map(|v| T::lit(v.ln())).collect();
                Tensor::new(
                    vec![feats.rows_edges, self.cfg.n_edge_types],
                    (0..feats.rows_edges)
                        .flat_map(|_| log_p.iter().copied())
                        .collect(),
                )
                .expect("assembled to shape")
            }
            None => learned_prior,
        };
        let z_hard = match self.cfg.edge_policy {
            EdgePolicy::Sample => categorical_sample_onehot(&prior_logits, rng),
            EdgePolicy::Argmax => argmax_onehot(&prior_logits),
        };
        let mut ctx = FwdCtx::new(&mut g, &self.params, false);
        let z = ctx.g.constant(z_hard);
        let hidden_var = dec_hidden.as_ref().map(|h| ctx.g.constant(h.clone()));
        let (mu, hidden_new) = self.decoder.decode_step(&mut ctx, feats, z, hidden_var)?;
        let mu_t = ctx.g.value(mu).clone();
        let hidden_t = hidden_new.map(|h| ctx.g.value(h).clone());
        Ok((Some(mu_t), hidden_t))
    }

    // ── checkpoints ────────────────────────────────────────────────────

    /// Saves the model with arbitrary extra JSON (normalization constant,
    /// training seed, …) embedded in the header.
    pub fn save(&self, path: &std::path::Path, extra: &serde_json::Value) -> ModelResult<()> {
        let config = serde_json::to_value(CheckpointConfig {
            model: self.cfg.clone(),
            init_seed: self.init_seed,
            extra: extra.clone(),
        })
        .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
        write_checkpoint(path, &config, &self.params)?;
        Ok(())
    }

    /// Loads a model and the extra JSON stored alongside it.
    pub fn load(path: &std::path::Path) -> ModelResult<(Self, serde_json::Value)> {
        let (config, params) = read_checkpoint::<T>(path)?;
        let parsed: CheckpointConfig = serde_json::from_value(config)
            .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
        let mut model = Self::new(parsed.model, parsed.init_seed)?;
        if params.len() != model.params.len() {
            return Err(ModelError::BadCheckpointConfig(format!(
                "checkpoint holds {} parameters, architecture needs {}",
                params.len(),
                model.params.len()
            )));
        }
        for (name, entry) in params.iter() {
            model
                .params
                .set(name, entry.tensor.clone())
                .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
        }
        Ok((model, parsed.extra))
    }
}

