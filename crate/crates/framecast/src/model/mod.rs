//! The variational forecaster: edge-embedding encoder with forward/backward
//! LSTMs over latent edge types, Gumbel-softmax sampling, Markovian and
//! recurrent decoders with inverse-rotation output heads, and anisotropic
//! filter-generating networks. Everything operates on canonicalized local
//! frames, so the encoder is roto-translation invariant and the decoder
//! equivariant (subject to the frame ablation in the config).

mod config;
mod decoder;
mod encoder;
mod features;
mod filters;
mod forecaster;
mod gumbel;
mod loss;

pub use config::{DecoderKind, EdgePolicy, FilterKind, ModelConfig};
pub use decoder::Decoder;
pub use encoder::{EdgeBeliefs, Encoder, EncoderStream};
pub use features::{build_step_features, EdgeLayout, StepFeatures, StepInput};
pub use filters::FilterNet;
pub use forecaster::{Forecaster, LossParts, RolloutOptions};
pub use gumbel::{
    categorical_sample_onehot, gumbel_noise, gumbel_softmax_sample, gumbel_softmax_with_noise,
    sample_in_graph,
};
pub use loss::{categorical_kl, categorical_kl_to_fixed, gaussian_nll};

use thiserror::Error;

use crate::frames::FrameError;
use crate::tape::TapeError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("batch is empty or scenes disagree in shape: {0}")]
    BadBatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("checkpoint config does not describe this model: {0}")]
    BadCheckpointConfig(String),
}

pub type ModelResult<V> = Result<V, ModelError>;
