//! Minimal differentiable classifier runtime: linear and one-hidden-layer
//! rectifier models with exact reverse-mode gradients, FGSM/PGD attacks and
//! ERM or adversarial training.

mod attack;
mod model;
mod train;

pub use attack::{
    attack, attack_batch, evaluate_adversarial, fgsm, pgd, pgd_with_rng, AdversarialEvaluation, AttackConfig,
    AttackMethod, DEFAULT_EPSILON, DEFAULT_STEPS,
};
pub use model::{Architecture, Gradients, ToyModel};
pub use train::{mean_loss, train, TrainConfig, TrainedModel, TrainingMode};
