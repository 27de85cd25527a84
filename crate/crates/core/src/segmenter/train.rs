use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid};
use crate::loss::{LossKind, LossSpec};
use crate::rng::{self, Purpose};

use super::adam::{adam_step, AdamState, DEFAULT_LR};
use super::net::Network;
use super::{init_params, ArchConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossSpec,
    pub shuffle_seed: u64,
    /// Adam step size.
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            loss: LossSpec::dice(),
            shuffle_seed: 0,
            lr: DEFAULT_LR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", format!("{} must be positive", self.lr)));
        }
        self.loss.validate()
    }
}

/// Per-epoch progress reported to a training observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-image loss over the epoch, measured before each batch's update.
    pub mean_loss: f64,
}

pub fn train_model(
    dataset: &[(ImageGrid, BinaryMask)],
    arch: &ArchConfig,
    train: &TrainConfig,
    init_seed: u64,
) -> Result<ModelParams> {
    train_model_with(dataset, arch, train, init_seed, |_| {})
}

/// Mini-batch Adam on `train.loss`, starting from `init_params(arch, init_seed)`.
///
/// Batches are means of per-image losses; the final short batch of an epoch
/// is kept. The result is rounded to `f32` precision so that a saved and
/// reloaded model is identical to the in-memory one.
pub fn train_model_with(
    dataset: &[(ImageGrid, BinaryMask)],
    arch: &ArchConfig,
    train: &TrainConfig,
    init_seed: u64,
    mut observer: impl FnMut(EpochStats),
) -> Result<ModelParams> {
    train.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()));
    }
    for (image, mask) in dataset {
        image.dims().ensure_same(mask.dims())?;
        if image.width() < arch.kernel_size || image.height() < arch.kernel_size {
            return Err(Error::InvalidDimension {
                width: image.width(),
                height: image.height(),
            });
        }
    }

    let mut params = init_params(arch, init_seed)?;
    let mut adam = AdamState::with_lr(params.weights.len(), train.lr);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffler = rng::stream(train.shuffle_seed, 0, Purpose::Shuffle);
    let mut grad = vec![0.0; params.weights.len()];

    for epoch in 0..train.epochs {
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(train.batch_size).enumerate() {
            let scale = 1.0 / chunk.len() as f64;
            grad.fill(0.0);
            let net = Network::new(&params)?;
            for &idx in chunk {
                let (image, mask) = &dataset[idx];
                let cache = net.forward_cached(image)?;
                let mut loss = train.loss.evaluate_slices(mask.bits(), cache.probs());
                loss_sum += loss.value;
                for g in &mut loss.grad {
                    *g *= scale;
                }
                let g = net.backward_cached(&cache, &loss.grad)?;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            adam_step(&mut params.weights, &grad, &mut adam).map_err(|e| Error::Training {
                epoch,
                batch,
                source: Box::new(e),
            })?;
        }
        observer(EpochStats {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
        });
    }

    params.quantize();
    params.provenance.beta_used = match train.loss.kind {
        LossKind::Tversky | LossKind::BalancedCE => Some(train.loss.beta),
        LossKind::Dice | LossKind::CrossEntropy => None,
    };
    params.provenance.bag_indices = (0..dataset.len()).collect();
    params.provenance.loss = Some(train.loss);
    Ok(params)
}
