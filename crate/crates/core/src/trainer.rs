//! Deterministic mini-batch training of the toy encoder.
//!
//! Every epoch makes `captions_per_image` passes over a shuffled image order;
//! in each pass an image contributes one of its captions (a fresh per-image
//! caption permutation every epoch), so a batch never holds two captions of the
//! same image. Views are re-sampled for every item from the state RNG.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aeom::{MetaBlockConfig, ScoreMethod};
use crate::encoder::{pooled_groups, ToyEncoderParams};
use crate::error::{AvseError, Result};
use crate::linalg::Matrix;
use crate::objectives::{grad_total_loss, Batch, LossBreakdown, LossConfig, ObjectiveConfig};
use crate::sampler::{sample_plan_with_rng, PatchGrid, SamplingConfig};
use crate::synth::Dataset;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decayed: f64,
    /// First epoch (0-based) trained with `lr_decayed`.
    pub decay_epoch: usize,
    /// Per-step multiplicative shrinkage `theta *= 1 - weight_decay`, applied
    /// independently of the learning rate.
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_method")]
    pub method: ScoreMethod,
    pub loss_cfg: LossConfig,
    pub block_cfg: MetaBlockConfig,
    pub sampling_cfg: SamplingConfig,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::AdamW
}

fn default_method() -> ScoreMethod {
    ScoreMethod::Aeom
}

impl TrainConfig {
    /// Desk-scale schedule: 30 epochs, batch 32, lr 5e-4 dropping to 5e-5 at
    /// epoch 20, weight decay 1e-4, `d1 = 64`, `d2 = 32`, two views.
    pub fn desk(grid: PatchGrid, seed: u64) -> Self {
        let d1 = 64;
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr_initial: 5e-4,
            lr_decayed: 5e-5,
            decay_epoch: 20,
            weight_decay: 1e-4,
            seed,
            optimizer: OptimizerKind::AdamW,
            method: ScoreMethod::Aeom,
            loss_cfg: LossConfig::for_dim(d1),
            block_cfg: MetaBlockConfig {
                d1,
                d2: d1 / 2,
                n_views: 2,
            },
            sampling_cfg: SamplingConfig::for_grid(grid, 0.5, seed),
        }
    }

    pub fn validate(&self, grid: PatchGrid) -> Result<()> {
        if self.epochs == 0 {
            return Err(AvseError::domain("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(AvseError::domain("batch_size must be at least 2"));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_decayed > 0.0) {
            return Err(AvseError::domain("learning rates must be positive"));
        }
        if self.decay_epoch > self.epochs {
            return Err(AvseError::domain(format!(
                "decay_epoch {} exceeds epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(AvseError::domain(format!(
                "weight_decay must be in [0, 1), got {}",
                self.weight_decay
            )));
        }
        self.sampling_cfg.validate(grid)?;
        if self.sampling_cfg.group_count != self.block_cfg.n_views {
            return Err(AvseError::domain(format!(
                "sampling draws {} groups but the block config has {} views",
                self.sampling_cfg.group_count, self.block_cfg.n_views
            )));
        }
        self.objective().validate()
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            loss: self.loss_cfg,
            blocks: self.block_cfg,
            method: self.method,
        }
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.lr_initial
        } else {
            self.lr_decayed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub loss: LossBreakdown,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ToyEncoderParams,
    /// Adam first moments (same layout as `params`).
    pub moment1: ToyEncoderParams,
    /// Adam second moments.
    pub moment2: ToyEncoderParams,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    /// Fresh state: random projections from `config.seed`, zero moments.
    pub fn new(config: TrainConfig, d_in: usize) -> Self {
        let d1 = config.block_cfg.d1;
        TrainState {
            params: ToyEncoderParams::random(d_in, d1, config.seed),
            moment1: ToyEncoderParams::zeros(d_in, d1),
            moment2: ToyEncoderParams::zeros(d_in, d1),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a1e),
            history: Vec::new(),
            config,
        }
    }

    pub fn losses(&self) -> impl Iterator<Item = &LossBreakdown> {
        self.history.iter().map(|r| &r.loss)
    }
}

/// A batch together with the dataset items it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub batch: Batch,
    /// `(image, caption)` per row.
    pub items: Vec<(usize, usize)>,
}

/// One optimizer update at learning rate `lr`.
pub fn train_step(state: &mut TrainState, batch: &TrainBatch, lr: f64) -> Result<()> {
    if batch.batch.len() < 2 {
        return Err(AvseError::domain("batch size must be at least 2"));
    }
    let cfg = state.config.objective();
    let (loss, grads) = grad_total_loss(&batch.batch, &state.params, &cfg)?;
    if !loss.total.is_finite() || !grads.is_finite() {
        return Err(AvseError::NonFinite {
            step: state.step,
            batch_items: batch.items.iter().map(|&(img, _)| img).collect(),
            param_norms: state.params.norms(),
        });
    }
    state.step += 1;
    let decay = 1.0 - state.config.weight_decay;
    match state.config.optimizer {
        OptimizerKind::AdamW => {
            let t = state.step as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            let params = state.params.tensors_mut();
            let m1 = state.moment1.tensors_mut();
            let m2 = state.moment2.tensors_mut();
            for (((p, m), v), g) in params.into_iter().zip(m1).zip(m2).zip(grads.tensors()) {
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                    p[i] = p[i] * decay - lr * update;
                }
            }
        }
        OptimizerKind::Sgd => {
            for (p, g) in state.params.tensors_mut().into_iter().zip(grads.tensors()) {
                for i in 0..p.len() {
                    p[i] = p[i] * decay - lr * g[i];
                }
            }
        }
    }
    state.history.push(StepRecord { loss, lr });
    Ok(())
}

/// Samples fresh views for `items` and pools their features.
pub fn build_batch(
    dataset: &Dataset,
    pooled_captions: &[Vec<f64>],
    items: &[(usize, usize)],
    sampling: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainBatch> {
    let n = sampling.group_count;
    let d_in = dataset.d_in();
    let mut views: Vec<Matrix> = (0..n).map(|_| Matrix::zeros(items.len(), d_in)).collect();
    let mut texts = Matrix::zeros(items.len(), d_in);
    for (row, &(img, cap)) in items.iter().enumerate() {
        let plan = sample_plan_with_rng(dataset.grid(), sampling, rng)?;
        for (g, pooled) in pooled_groups(&plan, &dataset.images[img])?.into_iter().enumerate() {
            views[g].row_mut(row).copy_from_slice(&pooled);
        }
        texts.row_mut(row).copy_from_slice(&pooled_captions[cap]);
    }
    Ok(TrainBatch {
        batch: Batch {
            image_views: views,
            texts,
        },
        items: items.to_vec(),
    })
}

/// `(image, caption)` pairs of one epoch, in training order.
fn epoch_order(dataset: &Dataset, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize)>> {
    let mut captions_of = dataset.gt.captions_of();
    for caps in captions_of.iter_mut() {
        caps.shuffle(rng);
    }
    let passes = captions_of.iter().map(Vec::len).max().unwrap_or(0);
    (0..passes)
        .map(|pass| {
            let mut order: Vec<usize> = (0..dataset.num_images()).collect();
            order.shuffle(rng);
            order
                .into_iter()
                .map(|img| (img, captions_of[img][pass % captions_of[img].len()]))
                .collect()
        })
        .collect()
}

/// Trains from a fresh state.
pub fn fit(config: &TrainConfig, dataset: &Dataset) -> Result<TrainState> {
    config.validate(dataset.grid())?;
    if dataset.num_images() < 2 {
        return Err(AvseError::domain("training needs at least 2 images"));
    }
    let mut state = TrainState::new(config.clone(), dataset.d_in());
    let pooled = dataset.pooled_captions();
    for epoch in 0..config.epochs {
        let lr = config.lr_for_epoch(epoch);
        let passes = epoch_order(dataset, &mut state.rng);
        for pass in passes {
            for chunk in pass.chunks(config.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let batch = build_batch(dataset, &pooled, chunk, &config.sampling_cfg, &mut state.rng)?;
                train_step(&mut state, &batch, lr)?;
            }
        }
    }
    Ok(state)
}

/// Number of optimizer steps per epoch for `dataset`.
pub fn steps_per_epoch(config: &TrainConfig, dataset: &Dataset) -> usize {
    let passes = dataset.gt.captions_of().iter().map(Vec::len).max().unwrap_or(0);
    let n = dataset.num_images();
    let full = n / config.batch_size;
    let rest = n % config.batch_size;
    passes * (full + usize::from(rest >= 2))
}
