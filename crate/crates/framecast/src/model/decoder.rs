//! Decoders: edge-type-weighted messages over canonical frames, mean
//! aggregation with a linear self term, an output MLP, and the inverse
//! rotation that carries the predicted delta back to global coordinates.

use rand::Rng;

use crate::nn::{Activation, FwdCtx, GruCell, Linear, Mlp, MlpLayerSpec, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{TapeResult, Var};

use super::{DecoderKind, FilterKind, FilterNet, ModelConfig, StepFeatures};

enum EdgeMap {
    /// Weight matrix generated from relative geometry.
    Generated(FilterNet),
    /// Constant learned matrix (isotropic ablation).
    Constant(Linear),
}

impl EdgeMap {
    fn apply<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        delta_p: Var,
        edge_in: Var,
    ) -> TapeResult<Var> {
        match self {
            EdgeMap::Generated(f) => f.apply(ctx, delta_p, edge_in),
            EdgeMap::Constant(l) => l.forward(ctx, edge_in),
        }
    }
}

struct RecurrentParts {
    g_k: Vec<Mlp>,
    gru: GruCell,
}

pub struct Decoder {
    kind: DecoderKind,
    /// Message maps per contributing edge type (type 0 omitted when the
    /// no-edge type is hardcoded: it contributes zero messages).
    f_k: Vec<EdgeMap>,
    first_type: usize,
    g_v3: Linear,
    f_v4: Mlp,
    recurrent: Option<RecurrentParts>,
    state_dim: usize,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamSet<T>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        let first_type = cfg.first_message_type();
        let mut f_k = Vec::new();
        for k in first_type..cfg.n_edge_types {
            let name = format!("dec.f_k{k}");
            f_k.push(match cfg.filters {
                FilterKind::Anisotropic => EdgeMap::Generated(FilterNet::new(
                    ps,
                    rng,
                    &name,
                    cfg.filter_in_dim(),
                    cfg.filter_hidden_dim,
                    Activation::Tanh,
                    cfg.edge_in_dim(),
                    h,
                )),
                FilterKind::Isotropic => EdgeMap::Constant(Linear::new(
                    ps,
                    rng,
                    &name,
                    cfg.edge_in_dim(),
                    h,
                    false,
                )),
            });
        }
        let g_v3 = Linear::new(ps, rng, "dec.g_v3", cfg.v_dim(), h, true);
        let recurrent = matches!(cfg.decoder, DecoderKind::Recurrent).then(|| {
            let g_k = (first_type..cfg.n_edge_types)
                .map(|k| {
                    Mlp::new(
                        ps,
                        rng,
                        &format!("dec.g_k{k}"),
                        2 * cfg.gru_dim,
                        &[
                            MlpLayerSpec::new(h, Activation::Tanh),
                            MlpLayerSpec::new(h, Activation::Tanh),
                        ],
                        false,
                    )
                })
                .collect();
            let gru = GruCell::new(ps, rng, "dec.gru", 2 * h, cfg.gru_dim);
            RecurrentParts { g_k, gru }
        });
        let f_v4_in = match cfg.decoder {
            DecoderKind::Markovian => h,
            DecoderKind::Recurrent => cfg.gru_dim,
        };
        let f_v4 = Mlp::new(
            ps,
            rng,
            "dec.f_v4",
            f_v4_in,
            &[
                MlpLayerSpec::new(h, Activation::Relu),
                MlpLayerSpec::new(h, Activation::Relu),
                MlpLayerSpec::new(cfg.state_dim(), Activation::Identity),
            ],
            false,
        );
        Self {
            kind: cfg.decoder,
            f_k,
            first_type,
            g_v3,
            f_v4,
            recurrent,
            state_dim: cfg.state_dim(),
        }
    }

    pub fn zero_hidden<T: Scalar>(&self, rows_nodes: usize) -> Option<crate::tensor::Tensor<T>> {
        self.recurrent
            .as_ref()
            .map(|r| r.gru.zero_state::<T>(rows_nodes))
    }

    /// Edge-type-weighted messages `Σ_k z_k f^k(edge features)`, aggregated
    /// per node with the linear self term (`f_v³` is the identity).
    fn node_messages<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        feats: &StepFeatures<T>,
        z: Var,
    ) -> TapeResult<Var> {
        let edge_in = ctx.g.constant(feats.edge_in.clone());
        let delta_p = ctx.g.constant(feats.delta_p.clone());
        let mut msg: Option<Var> = None;
        for (slot, map) in self.f_k.iter().enumerate() {
            let k = self.first_type + slot;
            let m_k = map.apply(ctx, delta_p, edge_in)?;
            let z_k = ctx.g.slice_cols(z, k, 1)?;
            let weighted = ctx.g.mul_col(m_k, z_k)?;
            msg = Some(match msg {
                Some(acc) => ctx.g.add(acc, weighted)?,
                None => weighted,
            });
        }
        let msg = msg.expect("at least one contributing edge type");
        let agg = ctx
            .g
            .group_mean_rows(msg, feats.groups.clone(), feats.rows_nodes)?;
        let self_in = ctx.g.constant(feats.self_in.clone());
        let self_term = self.g_v3.forward(ctx, self_in)?;
        ctx.g.add(self_term, agg)
    }

    /// One prediction step (or a stack of independent Markovian steps).
    ///
    /// `z` holds per-edge simplex weights `[rows_edges, K]`. Returns the
    /// predicted mean next states `[rows_nodes, 2·dim]` in global
    /// coordinates and the updated recurrent hidden state.
    pub fn decode_step<T: Scalar>(
        &self,
        ctx: &mut FwdCtx<T>,
        feats: &StepFeatures<T>,
        z: Var,
        hidden: Option<Var>,
    ) -> TapeResult<(Var, Option<Var>)> {
        let m_v = self.node_messages(ctx, feats, z)?;
        let (pre_output, hidden_new) = match (self.kind, &self.recurrent) {
            (DecoderKind::Markovian, _) => (m_v, None),
            (DecoderKind::Recurrent, Some(parts)) => {
                let hidden = hidden.expect("recurrent decoder needs a hidden state");
                let h_target = ctx.g.gather_rows(hidden, feats.gather_target.clone())?;
                let h_source = ctx.g.gather_rows(hidden, feats.gather_source.clone())?;
                let pair_h = ctx.g.concat_cols(&[h_target, h_source])?;
                let mut edge_h: Option<Var> = None;
                for (slot, g_k) in parts.g_k.iter().enumerate() {
                    let k = self.first_type + slot;
                    let h_k = g_k.forward(ctx, pair_h)?;
                    let z_k = ctx.g.slice_cols(z, k, 1)?;
                    let weighted = ctx.g.mul_col(h_k, z_k)?;
                    edge_h = Some(match edge_h {
                        Some(acc) => ctx.g.add(acc, weighted)?,
                        None => weighted,
                    });
                }
                let edge_h = edge_h.expect("at least one contributing edge type");
                let n_v =
                    ctx.g
                        .group_mean_rows(edge_h, feats.groups.clone(), feats.rows_nodes)?;
                let gru_in = ctx.g.concat_cols(&[n_v, m_v])?;
                let h_new = parts.gru.step(ctx, gru_in, hidden)?;
                (h_new, Some(h_new))
            }
            (DecoderKind::Recurrent, None) => unreachable!("recurrent parts built with the kind"),
        };
        let delta = self.f_v4.forward(ctx, pre_output)?;
        // Inverse rotation back to global coordinates, then integrate.
        let rot = ctx.g.constant(feats.rot_blocks.clone());
        let global_delta = ctx.g.bmm_rowwise(rot, delta, self.state_dim)?;
        let x = ctx.g.constant(feats.x_nodes.clone());
        let mu = ctx.g.add(x, global_delta)?;
        Ok((mu, hidden_new))
    }
}
