//! Evaluation plans: which runs to score and how.
//!
//! ```toml
//! runs = ["runs/a/run.toml", "runs/b/run.toml"]
//!
//! [score]
//! weights = [0.2, 0.2, 0.2, 0.2, 0.2]
//! ece_bins = 15
//! id_split = "id_test"
//! id_cap = 1024
//!
//! [detectors]
//! enabled = ["max_softmax", "max_logit", "energy", "odin"]
//!
//! [adversarial]
//! mode = "auto"        # auto | external_dump | toy_attack | skip
//! epsilon = "3/255"
//!
//! [temperature]
//! mode = "fit_and_report_both"   # or "none"
//!
//! [seeds]
//! subsample = 0
//! attack = 0
//! ```
//!
//! Every section is optional. Run paths resolve against the plan's directory.

use std::fs;
use std::path::{Path, PathBuf};

use reliascore_core::detectors::{Detector, DetectorConfig, DEFAULT_ODIN_EPSILON, DEFAULT_ODIN_TEMPERATURE};
use reliascore_core::metrics::{ScoreConfig, DEFAULT_ECE_BINS, DEFAULT_ECE_MAX, EQUAL_WEIGHTS};
use reliascore_core::runtime::{AttackConfig, AttackMethod, DEFAULT_EPSILON, DEFAULT_STEPS};
use reliascore_core::sampling::{ADV_SAMPLE_CAP, DEFAULT_SEED, ID_SAMPLE_CAP};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::store::{resolve, Role};
use crate::{Error, Result};

/// Parses an attack budget written as a decimal (`0.0118`) or a fraction
/// (`3/255`).
pub fn parse_epsilon(s: &str) -> Result<f64> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad_eps(s))?;
            let b: f64 = b.trim().parse().map_err(|_| bad_eps(s))?;
            if b == 0.0 {
                return Err(bad_eps(s));
            }
            a / b
        }
        None => s.parse().map_err(|_| bad_eps(s))?,
    };
    if !(value >= 0.0 && value.is_finite()) {
        return Err(bad_eps(s));
    }
    Ok(value)
}

fn bad_eps(s: &str) -> Error {
    Error::Value(format!("epsilon `{s}` is not a non-negative number or fraction a/b"))
}

/// An epsilon that keeps the text it was written as, so `3/255` survives a
/// round trip through a plan file.
#[derive(Debug, Clone, PartialEq)]
pub struct Epsilon {
    pub value: f64,
    pub text: String,
}

impl Epsilon {
    pub fn new(text: &str) -> Result<Self> {
        Ok(Self {
            value: parse_epsilon(text)?,
            text: text.trim().to_string(),
        })
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Self {
            value: DEFAULT_EPSILON,
            text: "3/255".into(),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(x) => format!("{x:?}"),
            Raw::Text(t) => t,
        };
        Epsilon::new(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub weights: [f64; 5],
    pub ece_bins: usize,
    pub ece_max: f64,
    pub id_rescale: Option<(f64, f64)>,
    /// Split feeding the headline `p_ID`.
    pub id_split: Role,
    pub id_cap: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            weights: EQUAL_WEIGHTS,
            ece_bins: DEFAULT_ECE_BINS,
            ece_max: DEFAULT_ECE_MAX,
            id_rescale: None,
            id_split: Role::IdTest,
            id_cap: ID_SAMPLE_CAP,
        }
    }
}

impl ScoreSection {
    pub fn config(&self) -> ScoreConfig {
        ScoreConfig {
            weights: self.weights,
            ece_bins: self.ece_bins,
            ece_max: self.ece_max,
            id_rescale: self.id_rescale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub enabled: Vec<Detector>,
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub energy_temperature: f64,
    /// ID side of the detection task.
    pub id_split: Role,
    /// Optional cap on the rows taken from each OOD source before pooling.
    pub ood_cap_per_source: Option<usize>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            enabled: Detector::ALL.to_vec(),
            odin_temperature: DEFAULT_ODIN_TEMPERATURE,
            odin_epsilon: DEFAULT_ODIN_EPSILON,
            energy_temperature: 1.0,
            id_split: Role::IdVal,
            ood_cap_per_source: None,
        }
    }
}

impl DetectorSection {
    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            enabled: self.enabled.clone(),
            odin_temperature: self.odin_temperature,
            odin_epsilon: self.odin_epsilon,
            energy_temperature: self.energy_temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// External dump when the run has one, else a toy attack when the run
    /// has a model and features, else skip.
    Auto,
    ExternalDump,
    ToyAttack,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSection {
    pub mode: AdversarialMode,
    pub method: AttackMethod,
    pub epsilon: Epsilon,
    pub steps: usize,
    /// Defaults to a quarter of epsilon.
    pub step_size: Option<f64>,
    pub random_start: bool,
    pub cap: usize,
    /// Split whose features are attacked in toy mode.
    pub source: Role,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        Self {
            mode: AdversarialMode::Auto,
            method: AttackMethod::Pgd,
            epsilon: Epsilon::default(),
            steps: DEFAULT_STEPS,
            step_size: None,
            random_start: true,
            cap: ADV_SAMPLE_CAP,
            source: Role::IdTest,
        }
    }
}

impl AdversarialSection {
    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        let eps = self.epsilon.value;
        let mut config = match self.method {
            AttackMethod::Pgd => AttackConfig::pgd(eps),
            AttackMethod::Fgsm => AttackConfig::fgsm(eps),
        };
        if self.method == AttackMethod::Pgd {
            config.steps = self.steps;
            config.random_start = self.random_start;
            if let Some(a) = self.step_size {
                config.step_size = a;
            }
        }
        config.seed = seed;
        config
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMode {
    None,
    FitAndReportBoth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSection {
    pub mode: TemperatureMode,
}

impl Default for TemperatureSection {
    fn default() -> Self {
        Self {
            mode: TemperatureMode::FitAndReportBoth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub subsample: u64,
    pub attack: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            subsample: DEFAULT_SEED,
            attack: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationPlan {
    pub runs: Vec<PathBuf>,
    pub score: ScoreSection,
    pub detectors: DetectorSection,
    pub adversarial: AdversarialSection,
    pub temperature: TemperatureSection,
    pub seeds: Seeds,
}

impl EvaluationPlan {
    /// Reads and validates a plan; run paths come back resolved.
    pub fn read(path: &Path) -> Result<EvaluationPlan> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: EvaluationPlan = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        plan.runs = plan.runs.iter().map(|r| resolve(base, r)).collect();
        plan.validate()?;
        Ok(plan)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Value(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::write(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let plan_err = |e: reliascore_core::Error| Error::Plan(e.to_string());
        self.score.config().validate().map_err(plan_err)?;
        self.detectors.config().validate().map_err(plan_err)?;
        if self.score.id_cap == 0 || self.adversarial.cap == 0 {
            return Err(Error::Plan("sample caps must be at least 1".into()));
        }
        if self.detectors.ood_cap_per_source == Some(0) {
            return Err(Error::Plan("ood_cap_per_source must be at least 1".into()));
        }
        for (what, role) in [
            ("score.id_split", &self.score.id_split),
            ("detectors.id_split", &self.detectors.id_split),
            ("adversarial.source", &self.adversarial.source),
        ] {
            if !matches!(role, Role::IdVal | Role::IdTest) {
                return Err(Error::Plan(format!("{what} must be id_val or id_test")));
            }
        }
        self.adversarial
            .attack_config(self.seeds.attack)
            .validate()
            .map_err(plan_err)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_grammar() {
        assert_eq!(parse_epsilon("3/255").unwrap(), 3.0 / 255.0);
        assert_eq!(parse_epsilon(" 8 / 255 ").unwrap(), 8.0 / 255.0);
        assert_eq!(parse_epsilon("0").unwrap(), 0.0);
        assert_eq!(parse_epsilon("0.5").unwrap(), 0.5);
        for bad in ["", "1/0", "-1", "a/255", "nan", "1/2/3"] {
            assert!(parse_epsilon(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn empty_plan_uses_defaults() {
        let plan: EvaluationPlan = toml::from_str("").unwrap();
        assert_eq!(plan, EvaluationPlan::default());
        assert_eq!(plan.score.id_cap, 1024);
        assert_eq!(plan.adversarial.cap, 128);
        assert_eq!(plan.adversarial.epsilon.value, 3.0 / 255.0);
        assert_eq!(plan.detectors.enabled.len(), 4);
        plan.validate().unwrap();
    }

    #[test]
    fn plan_round_trips_through_toml() {
        let mut plan = EvaluationPlan::default();
        plan.runs = vec!["a/run.toml".into()];
        plan.adversarial.epsilon = Epsilon::new("8/255").unwrap();
        plan.detectors.enabled = vec![Detector::Energy];
        plan.score.id_rescale = Some((0.7, 1.0));
        let text = toml::to_string_pretty(&plan).unwrap();
        assert!(text.contains("\"8/255\""));
        assert_eq!(toml::from_str::<EvaluationPlan>(&text).unwrap(), plan);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let bad = [
            "[score]\nweights = [0.5, 0.5, 0.5, 0.0, 0.0]",
            "[detectors]\nenabled = []",
            "[score]\nid_split = \"ds_val\"",
            "[adversarial]\nepsilon = \"-1\"",
            "[score]\nunknown = 1",
        ];
        for text in bad {
            let parsed = toml::from_str::<EvaluationPlan>(text);
            assert!(parsed.is_err() || parsed.unwrap().validate().is_err(), "{text}");
        }
    }
}
