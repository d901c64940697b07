//! Training loop: Adam on the teacher-forced negative ELBO, deterministic
//! in the seed.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frames::SceneStates;
use crate::model::{Forecaster, ModelConfig};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::sim::DatasetBundle;
use crate::tape::{GradMap, Graph};
use crate::tensor::Tensor;

use super::norm::{NormMode, NormSpec};
use super::{HarnessError, HarnessResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub norm: NormMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 5e-4,
            batch_size: 8,
            seed: 0,
            norm: NormMode::Speed,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

pub struct TrainedModel<T: Scalar> {
    pub model: Forecaster<T>,
    pub norm: NormSpec,
    pub log: Vec<EpochLog>,
}

/// Adam with conventional defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam<T> {
    m: HashMap<String, Tensor<T>>,
    v: HashMap<String, Tensor<T>>,
    step: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self {
            m: HashMap::new(),
            v: HashMap::new(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over the trainable parameters present in `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &GradMap<T>, lr: f64) {
        self.step += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let eps = T::lit(self.eps);
        let corr1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let lr_t = T::lit(lr);
        let names: Vec<String> = params
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(n, _)| n.to_string())
            .collect();
        for name in names {
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            *m = m
                .scale(b1)
                .add(&grad.scale(T::one() - b1))
                .expect("shapes fixed");
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            *v = v
                .scale(b2)
                .add(&grad.mul(grad).expect("same shape").scale(T::one() - b2))
                .expect("shapes fixed");
            let m_hat = m.scale(T::one() / corr1);
            let v_hat = v.scale(T::one() / corr2);
            let current = params.get(&name).expect("trainable parameter exists");
            let update = m_hat
                .zip_map(&v_hat, "adam update", |mh, vh| {
                    lr_t * mh / (vh.sqrt() + eps)
                })
                .expect("shapes fixed");
            let next = current.sub(&update).expect("shapes fixed");
            params.set(&name, next).expect("same shape");
        }
    }
}

/// Seed for the shuffle/noise stream of one (seed, epoch, batch) triple.
fn stream_seed(base: u64, epoch: usize, batch: usize) -> u64 {
    crate::sim::scene_seed(base.wrapping_add(0x5851_F42D_4C95_7F2D), epoch * 1_000_003 + batch)
}

/// Trains a fresh model on a dataset bundle. Deterministic: identical
/// `(bundle, model_cfg, train_cfg)` produce bit-identical parameters.
pub fn train<T: Scalar>(
    bundle: &DatasetBundle<T>,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
) -> HarnessResult<TrainedModel<T>> {
    let norm = NormSpec::fit(bundle, train_cfg.norm)?;
    let mut scenes: Vec<SceneStates<T>> = Vec::with_capacity(bundle.n_scenes());
    for s in 0..bundle.n_scenes() {
        scenes.push(norm.normalize_scene(&bundle.scene_states(s)?));
    }
    let mut model = Forecaster::new(model_cfg, train_cfg.seed)?;
    train_in_place(&mut model, &scenes, train_cfg).map(|log| TrainedModel { model, norm, log })
}

/// Runs the optimization loop against pre-normalized scenes.
pub fn train_in_place<T: Scalar>(
    model: &mut Forecaster<T>,
    scenes: &[SceneStates<T>],
    train_cfg: &TrainConfig,
) -> HarnessResult<Vec<EpochLog>> {
    if scenes.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let batch_size = train_cfg.batch_size.max(1);
    let mut adam = Adam::new();
    let mut log = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(train_cfg.seed, epoch, usize::MAX));
        shuffle(&mut order, &mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_nll = 0.0;
        let mut epoch_kl = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&SceneStates<T>> = chunk.iter().map(|&i| &scenes[i]).collect();
            let mut g = Graph::new();
            let mut noise_rng =
                ChaCha8Rng::seed_from_u64(stream_seed(train_cfg.seed, epoch, batch_idx));
            let pass = model.teacher_forced_loss(&mut g, &batch, true, &mut noise_rng)?;
            if !pass.parts.total.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    loss: pass.parts.total,
                });
            }
            let grads = g.gradients(pass.loss)?;
            adam.step(&mut model.params, &grads, train_cfg.lr);
            for (name, value) in pass.stat_updates {
                model
                    .params
                    .set(&name, value)
                    .expect("running stats exist with fixed shapes");
            }
            epoch_loss += pass.parts.total;
            epoch_nll += pass.parts.nll;
            epoch_kl += pass.parts.kl;
            batches += 1;
        }
        let inv = 1.0 / batches as f64;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss * inv,
            nll: epoch_nll * inv,
            kl: epoch_kl * inv,
        });
    }
    Ok(log)
}

/// Fisher-Yates with our own RNG calls so the permutation is stable across
/// `rand` versions.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Writes the per-epoch loss log as CSV (`epoch,loss,nll,kl`).
pub fn write_loss_log(path: &std::path::Path, log: &[EpochLog]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,loss,nll,kl")?;
    for row in log {
        writeln!(f, "{},{},{},{}", row.epoch, row.loss, row.nll, row.kl)?;
    }
    Ok(())
}
