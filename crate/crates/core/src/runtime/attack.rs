//! L∞ sign-gradient attacks and the adversarial accuracy evaluator.

use alloc::vec::Vec;

use rand::Rng;

use super::ToyModel;
use crate::math;
use crate::metrics::argmax;
use crate::sampling::{self, sample_indices};
use crate::{Error, Matrix, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default attack budget, `3/255`.
pub const DEFAULT_EPSILON: f64 = 3.0 / 255.0;
/// Default PGD iteration count.
pub const DEFAULT_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AttackMethod {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// L∞ radius of the perturbation ball.
    pub epsilon: f64,
    /// PGD iterations; ignored by FGSM.
    pub steps: usize,
    pub step_size: f64,
    /// Start PGD from a uniform point in the ball instead of the clean input.
    pub random_start: bool,
    pub seed: u64,
    /// Optional box every adversarial input is clipped into.
    pub clip: Option<(f64, f64)>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::pgd(DEFAULT_EPSILON)
    }
}

impl AttackConfig {
    /// PGD with 10 steps, step size `ε/4` and a random start.
    pub fn pgd(epsilon: f64) -> Self {
        Self {
            method: AttackMethod::Pgd,
            epsilon,
            steps: DEFAULT_STEPS,
            step_size: epsilon / 4.0,
            random_start: true,
            seed: sampling::DEFAULT_SEED,
            clip: None,
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            method: AttackMethod::Fgsm,
            epsilon,
            steps: 1,
            step_size: epsilon,
            random_start: false,
            seed: sampling::DEFAULT_SEED,
            clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be finite and nonnegative"));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("attack needs at least one step"));
        }
        // a zero budget makes the step size irrelevant
        if self.epsilon > 0.0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step size must be positive"));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::InvalidConfig("clip range must satisfy lo < hi"));
            }
        }
        Ok(())
    }
}

fn clip(x: &mut [f64], range: Option<(f64, f64)>) {
    if let Some((lo, hi)) = range {
        for v in x {
            *v = v.clamp(lo, hi);
        }
    }
}

/// One sign-gradient ascent step: `x + ε · sign(∇ₓ loss)`.
pub fn fgsm(model: &ToyModel, x: &[f64], y: usize, epsilon: f64) -> Result<Vec<f64>> {
    let g = model.input_gradient(x, y)?;
    Ok(x.iter().zip(&g).map(|(v, d)| v + epsilon * math::sign(*d)).collect())
}

/// Projected gradient ascent on the loss inside the L∞ ball around `x`,
/// drawing the random start from `rng`.
pub fn pgd_with_rng<R: Rng>(
    model: &ToyModel,
    x: &[f64],
    y: usize,
    config: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    let eps = config.epsilon;
    let mut adv = x.to_vec();
    if config.random_start {
        for v in adv.iter_mut() {
            *v += eps * (2.0 * rng.random::<f64>() - 1.0);
        }
        clip(&mut adv, config.clip);
    }
    for _ in 0..config.steps {
        let g = model.input_gradient(&adv, y)?;
        for ((a, x0), d) in adv.iter_mut().zip(x).zip(&g) {
            let stepped = *a + config.step_size * math::sign(*d);
            *a = stepped.clamp(x0 - eps, x0 + eps);
        }
        clip(&mut adv, config.clip);
    }
    Ok(adv)
}

/// PGD seeded from `config.seed`.
pub fn pgd(model: &ToyModel, x: &[f64], y: usize, config: &AttackConfig) -> Result<Vec<f64>> {
    pgd_with_rng(model, x, y, config, &mut sampling::rng(config.seed, 0))
}

/// Runs the configured attack on one sample. `stream` selects an
/// independent random stream so batches are order-independent.
pub fn attack(model: &ToyModel, x: &[f64], y: usize, config: &AttackConfig, stream: u64) -> Result<Vec<f64>> {
    config.validate()?;
    match config.method {
        AttackMethod::Fgsm => {
            let mut adv = fgsm(model, x, y, config.epsilon)?;
            clip(&mut adv, config.clip);
            Ok(adv)
        }
        AttackMethod::Pgd => pgd_with_rng(model, x, y, config, &mut sampling::rng(config.seed, stream)),
    }
}

/// Attacks every row of `inputs`; row `i` uses random stream `i`.
pub fn attack_batch(model: &ToyModel, inputs: &Matrix, labels: &[usize], config: &AttackConfig) -> Result<Matrix> {
    if inputs.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: labels.len(),
        });
    }
    let mut out = Matrix::zeros(inputs.rows(), inputs.cols());
    for (i, (x, &y)) in inputs.iter_rows().zip(labels).enumerate() {
        out.row_mut(i).copy_from_slice(&attack(model, x, y, config, i as u64)?);
    }
    Ok(out)
}

/// Clean and adversarial accuracy on the same seeded subset.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AdversarialEvaluation {
    pub n_evaluated: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

/// Subsamples `cap` labeled inputs, attacks each and reports clean and
/// adversarial accuracy on that subset.
///
/// A sample counts as adversarially correct only if it is classified
/// correctly both before and after the attack: the clean point is itself
/// inside the ball.
pub fn evaluate_adversarial(
    model: &ToyModel,
    inputs: &Matrix,
    labels: &[i32],
    config: &AttackConfig,
    cap: usize,
    seed: u64,
) -> Result<AdversarialEvaluation> {
    if inputs.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySplit);
    }
    if cap == 0 {
        return Err(Error::InvalidConfig("sample cap must be at least 1"));
    }
    crate::metrics::check_labels(labels, model.num_classes())?;
    config.validate()?;
    let subset = sample_indices(labels.len(), cap, seed);
    let mut clean = 0usize;
    let mut robust = 0usize;
    for (pos, &i) in subset.iter().enumerate() {
        let x = inputs.row(i);
        let y = labels[i] as usize;
        if argmax(&model.logits(x)?) != y {
            continue;
        }
        clean += 1;
        let adv = attack(model, x, y, config, pos as u64)?;
        if argmax(&model.logits(&adv)?) == y {
            robust += 1;
        }
    }
    let n = subset.len() as f64;
    Ok(AdversarialEvaluation {
        n_evaluated: subset.len(),
        clean_accuracy: clean as f64 / n,
        adversarial_accuracy: robust as f64 / n,
    })
}
