//! Relational encoder: pairwise message passing over canonical frames, a
//! forward-in-time LSTM head for the edge-type prior and a backward LSTM
//! joined with it for the posterior.

use rand::Rng;

use crate::nn::{Activation, FwdCtx, Linear, LstmCell, Mlp, MlpLayerSpec, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{TapeResult, Var};
use crate::tensor::Tensor;

use super::{FilterKind, FilterNet, ModelConfig, StepFeatures};

enum EdgeEmbed {
    Anisotropic(FilterNet),
    Isotropic(Linear),
}

/// Prior and posterior edge-type logits for a stacked batch:
/// rows ordered time-major as `(t, scene, edge)`.
pub struct EdgeBeliefs {
    pub prior_logits: Var,
    pub q_logits: Var,
}

pub struct Encoder {
    edge_embed: EdgeEmbed,
    g_v1: Linear,
    f_v1: Mlp,
    f_e2: Mlp,
    lstm_fwd: LstmCell,
    lstm_bwd: LstmCell,
    f_prior: Mlp,
    f_enc: Mlp,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamSet<T>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        let k = cfg.n_edge_types;
        let edge_embed = match cfg.filters {
            FilterKind::Anisotropic => EdgeEmbed::Anisotropic(FilterNet::new(
                ps,
                rng,
                "enc.f_e1",
                cfg.filter_in_dim(),
                cfg.filter_hidden_dim,
                Activation::Elu,
                cfg.edge_in_dim(),
                h,
            )),
            FilterKind::Isotropic => EdgeEmbed::Isotropic(Linear::new(
                ps,
                rng,
                "enc.f_e1",
                cfg.edge_in_dim(),
                h,
                false,
            )),
        };
        let g_v1 = Linear::new(ps, rng, "enc.g_v1", cfg.v_dim(), h, true);
        let two_elu = [
            MlpLayerSpec::new(h, Activation::Elu),
            MlpLayerSpec::new(h, Activation::Elu),
        ];
        let f_v1 = Mlp::new(ps, rng, "enc.f_v1", h, &two_elu, true);
        let f_e2 = Mlp::new(ps, rng, "enc.f_e2", 3 * h, &two_elu, true);
        let lstm_fwd = LstmCell::new(ps, rng, "enc.lstm_fwd", h, cfg.lstm_dim);
        let lstm_bwd = LstmCell::new(ps, rng, "enc.lstm_bwd", h, cfg.lstm_dim);
        let head = |out_dim: usize| {
            [
                MlpLayerSpec::new(cfg.head_hidden_dim, Activation::Elu),
                MlpLayerSpec::new(cfg.head_hidden_dim, Activation::Elu),
                MlpLayerSpec::new(out_dim, Activation::Identity),
            ]
        };
        let f_prior = Mlp::new(ps, rng, "enc.f_prior", cfg.lstm_dim, &head(k), false);
        let f_enc = Mlp::new(ps, rng, "enc.f_enc", 2 * cfg.lstm_dim, &head(k), false);
        Self {
            edge_embed,
            g_v1,
            f_v1,
            f_e2,
            lstm_fwd,
            lstm_bwd,
            f_prior,
            f_enc,
        }
    }

    /// Per-pair embeddings: edge features through the (generated or
    /// constant) filter, mean-aggregated into nodes with a linear self
    /// term, then recombined per edge.
    fn pair_embeddings<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        feats: &StepFeatures<T>,
    ) -> TapeResult<Var> {
        let edge_in = ctx.g.constant(feats.edge_in.clone());
        let h1_e = match &self.edge_embed {
            EdgeEmbed::Anisotropic(f) => {
                let delta_p = ctx.g.constant(feats.delta_p.clone());
                f.apply(ctx, delta_p, edge_in)?
            }
            EdgeEmbed::Isotropic(l) => l.forward(ctx, edge_in)?,
        };
        let agg = ctx
            .g
            .group_mean_rows(h1_e, feats.groups.clone(), feats.rows_nodes)?;
        let self_in = ctx.g.constant(feats.self_in.clone());
        let self_emb = self.g_v1.forward(ctx, self_in)?;
        let pre = ctx.g.add(self_emb, agg)?;
        let h1_v = self.f_v1.forward(ctx, pre)?;
        let h_target = ctx.g.gather_rows(h1_v, feats.gather_target.clone())?;
        let h_source = ctx.g.gather_rows(h1_v, feats.gather_source.clone())?;
        let h2_in = ctx.g.concat_cols(&[h_target, h1_e, h_source])?;
        self.f_e2.forward(ctx, h2_in)
    }

    /// Full-sequence encoding: `feats` stacks `t_len` groups of
    /// `rows_per_step` edge rows in time-major order.
    pub fn encode_batch<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        feats: &StepFeatures<T>,
        t_len: usize,
    ) -> TapeResult<EdgeBeliefs> {
        assert_eq!(feats.rows_edges % t_len, 0, "rows divide into timesteps");
        let rows_per_step = feats.rows_edges / t_len;
        let h2 = self.pair_embeddings(ctx, feats)?;

        let (h0, c0) = self.lstm_fwd.zero_state::<T>(rows_per_step);
        let mut h = ctx.g.constant(h0);
        let mut c = ctx.g.constant(c0);
        let mut fwd = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x = ctx.g.slice_rows(h2, t * rows_per_step, rows_per_step)?;
            let (h_new, c_new) = self.lstm_fwd.step(ctx, x, h, c)?;
            h = h_new;
            c = c_new;
            fwd.push(h_new);
        }

        let (h0, c0) = self.lstm_bwd.zero_state::<T>(rows_per_step);
        let mut h = ctx.g.constant(h0);
        let mut c = ctx.g.constant(c0);
        let mut bwd = vec![None; t_len];
        for t in (0..t_len).rev() {
            let x = ctx.g.slice_rows(h2, t * rows_per_step, rows_per_step)?;
            let (h_new, c_new) = self.lstm_bwd.step(ctx, x, h, c)?;
            h = h_new;
            c = c_new;
            bwd[t] = Some(h_new);
        }
        let bwd: Vec<Var> = bwd.into_iter().map(|v| v.expect("filled above")).collect();

        let fwd_all = ctx.g.concat_rows(&fwd)?;
        let bwd_all = ctx.g.concat_rows(&bwd)?;
        let prior_logits = self.f_prior.forward(ctx, fwd_all)?;
        let post_in = ctx.g.concat_cols(&[fwd_all, bwd_all])?;
        let q_logits = self.f_enc.forward(ctx, post_in)?;
        Ok(EdgeBeliefs {
            prior_logits,
            q_logits,
        })
    }

    /// Streaming state for causal (prior-only) encoding during rollouts.
    pub fn stream<T: Scalar>(&self, rows: usize) -> EncoderStream<T> {
        let (h, c) = self.lstm_fwd.zero_state::<T>(rows);
        EncoderStream { h, c }
    }

    /// Advances the forward LSTM one step and returns the prior logits.
    pub fn stream_step<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        stream: &mut EncoderStream<T>,
        feats: &StepFeatures<T>,
    ) -> TapeResult<Var> {
        let h2 = self.pair_embeddings(ctx, feats)?;
        let h = ctx.g.constant(stream.h.clone());
        let c = ctx.g.constant(stream.c.clone());
        let (h_new, c_new) = self.lstm_fwd.step(ctx, h2, h, c)?;
        stream.h = ctx.g.value(h_new).clone();
        stream.c = ctx.g.value(c_new).clone();
        self.f_prior.forward(ctx, h_new)
    }
}

/// Forward-LSTM state carried across rollout steps (values, not graph
/// nodes, so each step can run in its own inference graph).
pub struct EncoderStream<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}
