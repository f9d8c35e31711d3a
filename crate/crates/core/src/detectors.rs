//! Out-of-distribution scores. Every detector returns a score where higher
//! means "more in-distribution", so AUROC is always computed with the ID
//! samples as the positive class.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::math;
use crate::metrics::{argmax, auroc, check_temperature, confidence};
use crate::runtime::ToyModel;
use crate::{Error, Matrix, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const DEFAULT_ODIN_TEMPERATURE: f64 = 1000.0;
pub const DEFAULT_ODIN_EPSILON: f64 = 0.0014;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Detector {
    MaxSoftmax,
    MaxLogit,
    Energy,
    Odin,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::MaxSoftmax, Detector::MaxLogit, Detector::Energy, Detector::Odin];

    pub fn name(self) -> &'static str {
        match self {
            Detector::MaxSoftmax => "max_softmax",
            Detector::MaxLogit => "max_logit",
            Detector::Energy => "energy",
            Detector::Odin => "odin",
        }
    }

    /// Whether the detector needs input gradients of a live model.
    pub fn needs_model(self) -> bool {
        self == Detector::Odin
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownDetector(pub String);

impl fmt::Display for UnknownDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown detector `{}` (expected max_softmax, max_logit, energy or odin)", self.0)
    }
}

impl core::error::Error for UnknownDetector {}

impl FromStr for Detector {
    type Err = UnknownDetector;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        Detector::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| UnknownDetector(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DetectorConfig {
    pub enabled: Vec<Detector>,
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub energy_temperature: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            enabled: Detector::ALL.to_vec(),
            odin_temperature: DEFAULT_ODIN_TEMPERATURE,
            odin_epsilon: DEFAULT_ODIN_EPSILON,
            energy_temperature: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled.is_empty() {
            return Err(Error::InvalidConfig("at least one detector must be enabled"));
        }
        check_temperature(self.odin_temperature)?;
        check_temperature(self.energy_temperature)?;
        if !(self.odin_epsilon >= 0.0 && self.odin_epsilon.is_finite()) {
            return Err(Error::InvalidConfig("odin_epsilon must be nonnegative"));
        }
        Ok(())
    }
}

/// Maximum softmax probability.
pub fn max_softmax_score(logits: &[f64]) -> f64 {
    confidence(logits)
}

pub fn max_logit_score(logits: &[f64]) -> f64 {
    math::max(logits)
}

/// Negative free energy, `T · log Σ exp(z_k / T)`.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    Ok(temperature * math::log_sum_exp(logits, temperature))
}

/// ODIN at an explicit temperature and perturbation size: nudge the input
/// against the gradient of the NLL of the model's own prediction, then take
/// the temperature-scaled max softmax.
pub fn odin_score_at(model: &ToyModel, input: &[f64], temperature: f64, epsilon: f64) -> Result<f64> {
    check_temperature(temperature)?;
    let z = model.logits(input)?;
    let scaled_max = |z: &[f64]| {
        let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
        confidence(&scaled)
    };
    if epsilon == 0.0 {
        return Ok(scaled_max(&z));
    }
    let predicted = argmax(&z);
    let g = model.gradients_at(input, predicted, temperature)?.input;
    let perturbed: Vec<f64> = input
        .iter()
        .zip(&g)
        .map(|(x, d)| x - epsilon * math::sign(*d))
        .collect();
    Ok(scaled_max(&model.logits(&perturbed)?))
}

pub fn odin_score(model: &ToyModel, input: &[f64], config: &DetectorConfig) -> Result<f64> {
    odin_score_at(model, input, config.odin_temperature, config.odin_epsilon)
}

/// AUROC of one detector.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DetectorAuroc {
    pub detector: Detector,
    pub auroc: f64,
}

/// Model and raw inputs that make ODIN computable.
#[derive(Debug, Clone, Copy)]
pub struct GradientOracle<'a> {
    pub model: &'a ToyModel,
    pub id_inputs: &'a Matrix,
    pub ood_inputs: &'a Matrix,
    /// Temperature already applied to the model's logits (1 when unscaled).
    pub logit_temperature: f64,
}

/// Scores every row of `logits` with a logit-only detector.
pub fn logit_scores(detector: Detector, logits: &Matrix, config: &DetectorConfig) -> Result<Vec<f64>> {
    logits
        .iter_rows()
        .map(|row| match detector {
            Detector::MaxSoftmax => Ok(max_softmax_score(row)),
            Detector::MaxLogit => Ok(max_logit_score(row)),
            Detector::Energy => energy_score(row, config.energy_temperature),
            Detector::Odin => Err(Error::NoGradientOracle),
        })
        .collect()
}

fn odin_scores(inputs: &Matrix, oracle: &GradientOracle<'_>, config: &DetectorConfig) -> Result<Vec<f64>> {
    let t = config.odin_temperature * oracle.logit_temperature;
    inputs
        .iter_rows()
        .map(|x| odin_score_at(oracle.model, x, t, config.odin_epsilon))
        .collect()
}

/// One AUROC per enabled detector, in `config.enabled` order, separating
/// `id_logits` (positives) from `ood_logits`.
pub fn detect(
    id_logits: &Matrix,
    ood_logits: &Matrix,
    oracle: Option<&GradientOracle<'_>>,
    config: &DetectorConfig,
) -> Result<Vec<DetectorAuroc>> {
    config.validate()?;
    if id_logits.rows() == 0 || ood_logits.rows() == 0 {
        return Err(Error::EmptyClass);
    }
    config
        .enabled
        .iter()
        .map(|&detector| {
            let (id, ood) = if detector.needs_model() {
                let oracle = oracle.ok_or(Error::NoGradientOracle)?;
                (
                    odin_scores(oracle.id_inputs, oracle, config)?,
                    odin_scores(oracle.ood_inputs, oracle, config)?,
                )
            } else {
                (
                    logit_scores(detector, id_logits, config)?,
                    logit_scores(detector, ood_logits, config)?,
                )
            };
            Ok(DetectorAuroc {
                detector,
                auroc: auroc(&id, &ood)?,
            })
        })
        .collect()
}
