//! Model architecture and ablation configuration.

use serde::{Deserialize, Serialize};

use crate::frames::FrameKind;
use crate::geometry::angular_dim;

use super::{ModelError, ModelResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Markovian,
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Edge weights generated from relative geometry by a filter network.
    Anisotropic,
    /// A single learned weight matrix shared by all neighbor placements.
    Isotropic,
}

/// How latent edges are chosen at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Sample hard one-hot edges from the prior (seeded).
    Sample,
    /// Take the prior argmax.
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    /// Number of latent edge types K (≥ 2).
    pub n_edge_types: usize,
    /// Width of edge/node embeddings and decoder messages.
    pub hidden_dim: usize,
    /// Hidden size of the prior/posterior LSTMs.
    pub lstm_dim: usize,
    /// Hidden size of the prior/posterior output heads.
    pub head_hidden_dim: usize,
    /// Hidden size of the filter-generating networks.
    pub filter_hidden_dim: usize,
    /// Hidden size of the recurrent decoder's GRU.
    pub gru_dim: usize,
    pub decoder: DecoderKind,
    pub frame: FrameKind,
    pub filters: FilterKind,
    /// When set, edge type 0 means "no interaction" and contributes zero
    /// messages in the decoder.
    pub no_edge_hardcoded: bool,
    /// Fixed output variance of the Gaussian observation model.
    pub sigma_sq: f64,
    pub gumbel_temperature: f64,
    /// Optional fixed no-edge prior probability. When set, the KL term
    /// targets the fixed categorical `(p₀, (1-p₀)/(K-1), …)` instead of the
    /// learned prior, and inference samples edges from that categorical.
    pub no_edge_prior: Option<f64>,
    pub edge_policy: EdgePolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            n_edge_types: 2,
            hidden_dim: 256,
            lstm_dim: 64,
            head_hidden_dim: 128,
            filter_hidden_dim: 256,
            gru_dim: 256,
            decoder: DecoderKind::Markovian,
            frame: FrameKind::RotoTranslated,
            filters: FilterKind::Anisotropic,
            no_edge_hardcoded: true,
            sigma_sq: 1e-5,
            gumbel_temperature: 0.5,
            no_edge_prior: None,
            edge_policy: EdgePolicy::Sample,
        }
    }
}

impl ModelConfig {
    /// Compact configuration for tests and property suites.
    pub fn small(dim: usize) -> Self {
        Self {
            dim,
            hidden_dim: 32,
            lstm_dim: 16,
            head_hidden_dim: 16,
            filter_hidden_dim: 16,
            gru_dim: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> ModelResult<()> {
        if self.n_edge_types < 2 {
            return Err(ModelError::InvalidConfig(
                "need at least two edge types".into(),
            ));
        }
        if !(self.sigma_sq > 0.0) {
            return Err(ModelError::InvalidConfig("sigma_sq must be positive".into()));
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(ModelError::InvalidConfig(
                "gumbel_temperature must be positive".into(),
            ));
        }
        angular_dim(self.dim).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("lstm_dim", self.lstm_dim),
            ("head_hidden_dim", self.head_hidden_dim),
            ("filter_hidden_dim", self.filter_hidden_dim),
            ("gru_dim", self.gru_dim),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if let Some(p) = self.no_edge_prior {
            if !(0.0..1.0).contains(&p) || p <= 0.0 {
                return Err(ModelError::InvalidConfig(
                    "no_edge_prior must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn angular_dim(&self) -> usize {
        angular_dim(self.dim).expect("validated")
    }

    /// Width of one canonicalized state feature `[r, ω, u]` with the angle
    /// block normalized by π.
    pub fn v_dim(&self) -> usize {
        2 * self.dim + self.angular_dim()
    }

    /// Width of the polar/spherical relative-position feature.
    pub fn sph_dim(&self) -> usize {
        self.dim
    }

    /// Width of the edge input `[v_{j|i}, s_{j,i}, v_{i|i}]`.
    pub fn edge_in_dim(&self) -> usize {
        2 * self.v_dim() + self.sph_dim()
    }

    /// Width of the filter-network input `[s_{j,i}, relative ω]`.
    pub fn filter_in_dim(&self) -> usize {
        self.sph_dim() + self.angular_dim()
    }

    /// Width of a state vector `[p, u]`.
    pub fn state_dim(&self) -> usize {
        2 * self.dim
    }

    /// First edge type contributing decoder messages.
    pub fn first_message_type(&self) -> usize {
        usize::from(self.no_edge_hardcoded)
    }

    /// The fixed prior distribution when `no_edge_prior` is set.
    pub fn fixed_prior(&self) -> Option<Vec<f64>> {
        self.no_edge_prior.map(|p0| {
            let rest = (1.0 - p0) / (self.n_edge_types - 1) as f64;
            let mut probs = vec![rest; self.n_edge_types];
            probs[0] = p0;
            probs
        })
    }
}
