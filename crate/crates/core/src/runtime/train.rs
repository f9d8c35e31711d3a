use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::attack::{attack, AttackConfig};
use super::{Architecture, ToyModel};
use crate::metrics::check_labels;
use crate::sampling;
use crate::{Error, Matrix, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

// Independent random streams so that ERM and adversarial runs with the same
// seed share initialisation and batch order.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const ATTACK_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainingMode {
    Erm,
    /// Every mini-batch is replaced by its attacked version before the update.
    Adversarial(AttackConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub mode: TrainingMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp { hidden: 16 },
            mode: TrainingMode::Erm,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 32,
            seed: sampling::DEFAULT_SEED,
        }
    }
}

/// A trained model with its clean training-loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ToyModel,
    /// Mean clean cross-entropy over the training set before any update.
    pub initial_loss: f64,
    /// Mean clean cross-entropy after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean cross-entropy of `model` over a labeled set.
pub fn mean_loss(model: &ToyModel, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut total = 0.0;
    for (x, &y) in inputs.iter_rows().zip(labels) {
        total += model.loss(x, y)?;
    }
    Ok(total / labels.len() as f64)
}

/// Seeded mini-batch gradient descent on cross-entropy.
pub fn train(inputs: &Matrix, labels: &[i32], num_classes: usize, config: &TrainConfig) -> Result<TrainedModel> {
    if inputs.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySplit);
    }
    check_labels(labels, num_classes)?;
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("batch size and learning rate must be positive"));
    }
    if let TrainingMode::Adversarial(attack_config) = &config.mode {
        attack_config.validate()?;
    }
    let labels: Vec<usize> = labels.iter().map(|&y| y as usize).collect();

    let mut model = ToyModel::init(
        config.architecture,
        inputs.cols(),
        num_classes,
        &mut sampling::rng(config.seed, INIT_STREAM),
    )?;
    let initial_loss = mean_loss(&model, inputs, &labels)?;
    let mut shuffle_rng = sampling::rng(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad = alloc::vec![0.0; model.params().len()];
    let mut attack_counter: u64 = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let y = labels[i];
                let g = match &config.mode {
                    TrainingMode::Erm => model.gradients(inputs.row(i), y)?,
                    TrainingMode::Adversarial(attack_config) => {
                        let stream = ATTACK_STREAM_BASE + attack_counter;
                        attack_counter += 1;
                        let adv = attack(&model, inputs.row(i), y, attack_config, stream)?;
                        model.gradients(&adv, y)?
                    }
                };
                for (acc, v) in grad.iter_mut().zip(&g.params) {
                    *acc += v;
                }
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= scale * g;
            }
        }
        epoch_losses.push(mean_loss(&model, inputs, &labels)?);
    }
    model.validate()?;
    Ok(TrainedModel {
        model,
        initial_loss,
        epoch_losses,
    })
}
