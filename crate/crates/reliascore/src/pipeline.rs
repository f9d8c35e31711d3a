//! Scoring of whole runs and pools of runs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use reliascore_core::analysis::{MetricRow, MetricTable};
use reliascore_core::detectors::{detect, Detector, DetectorAuroc, GradientOracle};
use reliascore_core::metrics::{
    accuracy, ece, score_adv, score_cal, score_ds, score_hr_available, score_id, score_ood, ScoreCard, ShiftResult,
    ECE_BINNING,
};
use reliascore_core::posthoc::{apply_temperature, fit_temperature, TemperatureScaler};
use reliascore_core::runtime::evaluate_adversarial;
use reliascore_core::sampling::sample_indices;
use reliascore_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::formats;
use crate::plan::{AdversarialMode, EvaluationPlan, TemperatureMode};
use crate::store::{load_run, LoadedSplit, ModelRun, SplitDump};
use crate::{Error, Result};

/// Outcome of the adversarial part of an evaluation. It depends only on the
/// model's decisions, so it is shared by the raw and temperature-scaled cards.
#[derive(Debug, Clone, PartialEq)]
pub enum Adversarial {
    Measured {
        p_adv: f64,
        /// Clean accuracy on the attacked subset, when known.
        p_clean: Option<f64>,
        n_evaluated: usize,
        source: &'static str,
    },
    Absent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub card: ScoreCard,
    pub calibrated: Option<ScoreCard>,
    pub scaler: Option<TemperatureScaler>,
}

impl RunEvaluation {
    /// The card that represents the run in a pool: the calibrated one when
    /// temperature scaling ran.
    pub fn headline(&self) -> &ScoreCard {
        self.calibrated.as_ref().unwrap_or(&self.card)
    }
}

fn scaled(m: Matrix, temperature: Option<f64>) -> Result<Matrix> {
    match temperature {
        Some(t) => Ok(apply_temperature(&m, t)?),
        None => Ok(m),
    }
}

fn split_of<'a>(run: &'a ModelRun, role: &crate::store::Role) -> Result<&'a LoadedSplit> {
    run.split(role).ok_or_else(|| Error::MissingSplit(role.to_string()))
}

/// The capped sample of the split feeding `p_ID`.
fn id_sample(run: &ModelRun, plan: &EvaluationPlan) -> Result<SplitDump> {
    split_of(run, &plan.score.id_split)?
        .logits
        .subsample(plan.score.id_cap, plan.seeds.subsample)
}

pub fn measure_adversarial(run: &ModelRun, plan: &EvaluationPlan) -> Result<Adversarial> {
    let adv = &plan.adversarial;
    let toy_ready = |run: &ModelRun| {
        run.model.is_some()
            && run
                .split(&adv.source)
                .is_some_and(|s| s.features.is_some())
    };
    let mode = match adv.mode {
        AdversarialMode::Auto if run.adv.is_some() => AdversarialMode::ExternalDump,
        AdversarialMode::Auto if toy_ready(run) => AdversarialMode::ToyAttack,
        AdversarialMode::Auto => {
            return Ok(Adversarial::Absent(
                "no adversarial dump and no model with features".into(),
            ))
        }
        other => other,
    };
    match mode {
        AdversarialMode::Skip => Ok(Adversarial::Absent("adversarial evaluation skipped by plan".into())),
        AdversarialMode::ExternalDump => {
            let Some(split) = &run.adv else {
                return Ok(Adversarial::Absent("run has no adv_id split".into()));
            };
            let logits = split.logits.to_matrix();
            let p_adv = accuracy(&logits, split.logits.labels())?;
            let p_clean = match &run.adv_derivation {
                Some(d) => {
                    let source = split_of(run, &d.role)?;
                    let idx = sample_indices(source.logits.rows(), d.cap.max(1), d.seed);
                    let subset = source.logits.select(&idx);
                    Some(accuracy(&subset.to_matrix(), subset.labels())?)
                }
                None => None,
            };
            Ok(Adversarial::Measured {
                p_adv,
                p_clean,
                n_evaluated: split.logits.rows(),
                source: "external_dump",
            })
        }
        AdversarialMode::ToyAttack => {
            if !toy_ready(run) {
                return Ok(Adversarial::Absent(format!(
                    "toy attack needs a model and features for `{}`",
                    adv.source
                )));
            }
            let model = run.model.as_ref().expect("checked above");
            let split = split_of(run, &adv.source)?;
            let features = split.features.as_ref().expect("checked above");
            let eval = evaluate_adversarial(
                model,
                &features.to_matrix(),
                features.labels(),
                &adv.attack_config(plan.seeds.attack),
                adv.cap,
                plan.seeds.subsample,
            )?;
            Ok(Adversarial::Measured {
                p_adv: eval.adversarial_accuracy,
                p_clean: Some(eval.clean_accuracy),
                n_evaluated: eval.n_evaluated,
                source: "toy_attack",
            })
        }
        AdversarialMode::Auto => unreachable!(),
    }
}

fn ood_pool(run: &ModelRun, plan: &EvaluationPlan) -> Result<(SplitDump, Option<SplitDump>)> {
    let cap = plan.detectors.ood_cap_per_source;
    let take = |d: &SplitDump| match cap {
        Some(c) => d.subsample(c, plan.seeds.subsample),
        None => Ok(d.clone()),
    };
    let logits: Vec<SplitDump> = run.ood.iter().map(|s| take(&s.logits)).collect::<Result<_>>()?;
    let features: Option<Vec<SplitDump>> = run
        .ood
        .iter()
        .map(|s| s.features.as_ref().map(take))
        .collect::<Option<Result<_>>>()
        .transpose()?;
    let logits = SplitDump::concat(&logits.iter().collect::<Vec<_>>())?;
    let features = match features {
        Some(f) => Some(SplitDump::concat(&f.iter().collect::<Vec<_>>())?),
        None => None,
    };
    Ok((logits, features))
}

fn detector_aurocs(
    run: &ModelRun,
    plan: &EvaluationPlan,
    temperature: Option<f64>,
    notes: &mut Vec<String>,
) -> Result<Vec<DetectorAuroc>> {
    let id = split_of(run, &plan.detectors.id_split)?;
    let (ood_logits, ood_features) = ood_pool(run, plan)?;
    let mut config = plan.detectors.config();
    let oracle_parts = match (&run.model, &id.features, &ood_features) {
        (Some(m), Some(idf), Some(oodf)) => Some((m, idf.to_matrix(), oodf.to_matrix())),
        _ => None,
    };
    if oracle_parts.is_none() && config.enabled.contains(&Detector::Odin) {
        config.enabled.retain(|d| !d.needs_model());
        notes.push("odin skipped: run has no model with features for the ID and every OOD split".into());
        if config.enabled.is_empty() {
            return Err(reliascore_core::Error::NoGradientOracle.into());
        }
    }
    let oracle = oracle_parts.as_ref().map(|(model, id_inputs, ood_inputs)| GradientOracle {
        model,
        id_inputs,
        ood_inputs,
        logit_temperature: temperature.unwrap_or(1.0),
    });
    let id_logits = scaled(id.logits.to_matrix(), temperature)?;
    let ood_logits = scaled(ood_logits.to_matrix(), temperature)?;
    Ok(detect(&id_logits, &ood_logits, oracle.as_ref(), &config)?)
}

/// Metrics whose value does not depend on the temperature.
struct DecisionMetrics {
    p_id: f64,
    n_id: usize,
    shift_performance: Vec<f64>,
}

fn decision_metrics(run: &ModelRun, plan: &EvaluationPlan) -> Result<DecisionMetrics> {
    let id = id_sample(run, plan)?;
    let shift_performance = run
        .shifts
        .iter()
        .map(|s| Ok(accuracy(&s.logits.to_matrix(), s.logits.labels())?))
        .collect::<Result<_>>()?;
    Ok(DecisionMetrics {
        p_id: accuracy(&id.to_matrix(), id.labels())?,
        n_id: id.rows(),
        shift_performance,
    })
}

fn build_card(
    run: &ModelRun,
    plan: &EvaluationPlan,
    decisions: &DecisionMetrics,
    adversarial: &Adversarial,
    temperature: Option<f64>,
) -> Result<ScoreCard> {
    let config = plan.score.config();
    config.validate()?;
    let bins = config.ece_bins;
    let mut notes = Vec::new();

    let id = id_sample(run, plan)?;
    let ece_id = ece(&scaled(id.to_matrix(), temperature)?, id.labels(), bins)?;
    let mut per_shift = Vec::with_capacity(run.shifts.len());
    for (s, &performance) in run.shifts.iter().zip(&decisions.shift_performance) {
        per_shift.push(ShiftResult {
            name: s.role.to_string(),
            performance,
            ece: ece(&scaled(s.logits.to_matrix(), temperature)?, s.logits.labels(), bins)?,
            n_evaluated: s.logits.rows(),
        });
    }
    let per_detector_auroc = detector_aurocs(run, plan, temperature, &mut notes)?;

    let p_id = decisions.p_id;
    let s_id = score_id(p_id, config.id_rescale);
    let s_ds = score_ds(p_id, &decisions.shift_performance)?;
    let shift_eces: Vec<f64> = per_shift.iter().map(|s| s.ece).collect();
    let s_cal = score_cal(ece_id, &shift_eces, config.ece_max)?;
    let aurocs: Vec<f64> = per_detector_auroc.iter().map(|d| d.auroc).collect();
    let s_ood = score_ood(&aurocs)?;
    let (s_adv, p_adv, p_id_adv_subset) = match adversarial {
        Adversarial::Measured {
            p_adv,
            p_clean,
            n_evaluated,
            source,
        } => {
            notes.push(format!("adversarial accuracy from {source} on {n_evaluated} samples"));
            (Some(score_adv(*p_adv, p_id)?), Some(*p_adv), *p_clean)
        }
        Adversarial::Absent(reason) => {
            notes.push(format!(
                "s_adv unavailable ({reason}); weights renormalised over the remaining scores"
            ));
            (None, None, None)
        }
    };
    let scores = [Some(s_id), Some(s_ds), s_adv, Some(s_cal), Some(s_ood)];
    let (s_hr, weights) = score_hr_available(&scores, &config.weights)?;

    Ok(ScoreCard {
        model_id: run.model_id.clone(),
        group: run.group.clone(),
        s_id,
        s_ds,
        s_adv,
        s_cal,
        s_ood,
        s_hr,
        weights,
        p_id,
        ece_id,
        n_id: decisions.n_id,
        per_shift,
        per_detector_auroc,
        p_adv,
        p_id_adv_subset,
        temperature,
        ece_bins: bins,
        ece_binning: ECE_BINNING.into(),
        notes,
    })
}

/// Scores one run; with temperature scaling on, also fits `T` on `id_val`
/// and scores the run again on `z / T`.
pub fn evaluate_run(run: &ModelRun, plan: &EvaluationPlan) -> Result<RunEvaluation> {
    let decisions = decision_metrics(run, plan)?;
    let adversarial = measure_adversarial(run, plan)?;
    let card = build_card(run, plan, &decisions, &adversarial, None)?;
    let (calibrated, scaler) = match plan.temperature.mode {
        TemperatureMode::None => (None, None),
        TemperatureMode::FitAndReportBoth => {
            let scaler = fit_temperature(&run.id_val.logits.to_matrix(), run.id_val.logits.labels())?;
            let card = build_card(run, plan, &decisions, &adversarial, Some(scaler.temperature))?;
            (Some(card), Some(scaler))
        }
    };
    Ok(RunEvaluation {
        card,
        calibrated,
        scaler,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub manifest: PathBuf,
    pub error: String,
}

/// A run that was scored but left out of the metric table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutcome {
    /// Sorted by model id.
    pub evaluations: Vec<RunEvaluation>,
    pub table: MetricTable,
    pub failures: Vec<RunFailure>,
    pub excluded: Vec<Exclusion>,
}

/// Scores every run of the plan on up to `jobs` threads. A run that fails
/// to load or score is recorded and the rest of the pool carries on.
pub fn evaluate_pool(plan: &EvaluationPlan, jobs: usize) -> Result<PoolOutcome> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Value(e.to_string()))?;
    let results: Vec<(PathBuf, Result<RunEvaluation>)> = pool.install(|| {
        plan.runs
            .par_iter()
            .map(|path| (path.clone(), load_run(path).and_then(|run| evaluate_run(&run, plan))))
            .collect()
    });

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (manifest, result) in results {
        match result {
            Ok(e) => ok.push((manifest, e)),
            Err(e) => failures.push(RunFailure {
                manifest,
                error: e.to_string(),
            }),
        }
    }
    ok.sort_by(|a, b| (&a.1.card.model_id, &a.0).cmp(&(&b.1.card.model_id, &b.0)));

    let mut evaluations: Vec<RunEvaluation> = Vec::with_capacity(ok.len());
    for (manifest, e) in ok {
        if evaluations.last().is_some_and(|l| l.card.model_id == e.card.model_id) {
            failures.push(RunFailure {
                manifest,
                error: format!("duplicate model_id `{}`", e.card.model_id),
            });
        } else {
            evaluations.push(e);
        }
    }
    failures.sort_by(|a, b| a.manifest.cmp(&b.manifest));

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for e in &evaluations {
        let card = e.headline();
        match card.s_adv {
            Some(s_adv) => rows.push(MetricRow {
                model_id: card.model_id.clone(),
                group: card.group.clone(),
                scores: [card.s_id, card.s_ds, s_adv, card.s_cal, card.s_ood],
                s_hr: card.s_hr,
            }),
            None => excluded.push(Exclusion {
                model_id: card.model_id.clone(),
                reason: "s_adv unavailable".into(),
            }),
        }
    }
    Ok(PoolOutcome {
        evaluations,
        table: MetricTable::new(rows)?,
        failures,
        excluded,
    })
}

pub const METRICS_FILE: &str = "pool.metrics";
pub const FAILURES_FILE: &str = "pool.failures";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub failures: Vec<RunFailure>,
    pub excluded: Vec<Exclusion>,
}

pub fn scorecard_path(dir: &Path, model_id: &str) -> PathBuf {
    dir.join(format!("{model_id}.scorecard"))
}

pub fn calibrated_scorecard_path(dir: &Path, model_id: &str) -> PathBuf {
    dir.join(format!("{model_id}.calibrated.scorecard"))
}

/// Writes `{model_id}.scorecard`, `{model_id}.calibrated.scorecard`,
/// `pool.metrics` and `pool.failures` into `dir`.
pub fn write_pool(dir: &Path, outcome: &PoolOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    for e in &outcome.evaluations {
        formats::write_scorecard(&scorecard_path(dir, &e.card.model_id), &e.card)?;
        if let Some(c) = &e.calibrated {
            formats::write_scorecard(&calibrated_scorecard_path(dir, &c.model_id), c)?;
        }
    }
    formats::write_metric_table(&dir.join(METRICS_FILE), &outcome.table)?;
    formats::write_json(
        &dir.join(FAILURES_FILE),
        &FailureReport {
            failures: outcome.failures.clone(),
            excluded: outcome.excluded.clone(),
        },
    )
}
