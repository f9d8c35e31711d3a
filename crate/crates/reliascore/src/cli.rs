//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage or input errors, 2 when the engine
//! fails internally or cannot write its outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use reliascore_core::analysis::{correlation_matrix, histogram, hr_improvement_across, MetricTable};
use reliascore_core::metrics::{accuracy, SCORE_NAMES};
use reliascore_core::posthoc::{
    ensemble_logits, random_ensemble_search, EnsembleMember, EnsembleSpec, DEFAULT_ENSEMBLE_TRIALS,
};
use reliascore_core::runtime::{
    evaluate_adversarial, train, Architecture, AttackConfig, AttackMethod, TrainConfig, TrainingMode,
    DEFAULT_STEPS,
};
use reliascore_core::sampling::{ADV_SAMPLE_CAP, DEFAULT_SEED};
use reliascore_core::Matrix;
use serde::Serialize;

use crate::fixture;
use crate::formats;
use crate::pipeline::{self, evaluate_run};
use crate::plan::{parse_epsilon, EvaluationPlan, TemperatureMode};
use crate::store::{load_run, resolve, ModelRun, Role, RunManifest, SplitDump, SplitEntry, SCHEMA_VERSION};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "reliascore", version, about = "Holistic reliability scoring for classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Pgd,
    Fgsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Erm,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterBy {
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Three runs over a Gaussian-blob task, with plan and pool list.
    Blobs,
    /// Train and test features for the robust/non-robust feature task.
    Robust,
}

fn epsilon_arg(s: &str) -> std::result::Result<f64, String> {
    parse_epsilon(s).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every run of a plan and write score cards and the metric table.
    Score {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; output does not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit a temperature on id_val and emit the scaler with both score cards.
    Calibrate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plan supplying scoring settings; its run list is ignored.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Search random ensembles of a pool for the lowest validation loss.
    Ensemble {
        /// File listing one run manifest per line.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_ENSEMBLE_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the best ensemble as a run directory.
        #[arg(long)]
        emit_run: Option<PathBuf>,
    },
    /// Attack a toy model on a features dump and report clean and
    /// adversarial accuracy.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Pgd)]
        method: Method,
        #[arg(long, value_parser = epsilon_arg, default_value = "3/255")]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        /// Defaults to eps/4.
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        no_random_start: bool,
        #[arg(long, default_value_t = ADV_SAMPLE_CAP)]
        cap: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a toy model on a features dump.
    TrainToy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Erm)]
        mode: Mode,
        #[arg(long, value_parser = epsilon_arg, default_value = "3/255")]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Arch::Mlp)]
        arch: Arch,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Defaults to the largest label plus one.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson r and R² between the five scores of a metric table.
    Correlate {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum)]
        center_by: Option<CenterBy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// HR improvement over a baseline group and per-metric histograms.
    Report {
        /// One or more metric tables; improvements are averaged across them.
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Generate a synthetic fixture.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Blobs)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub method: AttackMethod,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub seed: u64,
    pub n_evaluated: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub scaler: reliascore_core::posthoc::TemperatureScaler,
    pub card: reliascore_core::metrics::ScoreCard,
    pub calibrated: reliascore_core::metrics::ScoreCard,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_args(std::env::args_os())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Score { plan, out, jobs } => score(&plan, &out, jobs),
        Command::Calibrate { run, out, plan } => calibrate(&run, &out, plan.as_deref()),
        Command::Ensemble {
            pool,
            k,
            trials,
            seed,
            out,
            emit_run,
        } => ensemble(&pool, k, trials, seed, &out, emit_run.as_deref()),
        Command::Attack {
            model,
            data,
            method,
            eps,
            steps,
            step_size,
            no_random_start,
            cap,
            seed,
            out,
        } => {
            let mut config = match method {
                Method::Pgd => AttackConfig::pgd(eps),
                Method::Fgsm => AttackConfig::fgsm(eps),
            };
            if method == Method::Pgd {
                config.steps = steps;
                config.random_start = !no_random_start;
                if let Some(a) = step_size {
                    config.step_size = a;
                }
            }
            config.seed = seed;
            attack(&model, &data, &config, cap, out.as_deref())
        }
        Command::TrainToy {
            data,
            mode,
            eps,
            epochs,
            seed,
            arch,
            hidden,
            lr,
            batch_size,
            classes,
            out,
        } => {
            let config = TrainConfig {
                architecture: match arch {
                    Arch::Linear => Architecture::Linear,
                    Arch::Mlp => Architecture::Mlp { hidden },
                },
                mode: match mode {
                    Mode::Erm => TrainingMode::Erm,
                    Mode::Adversarial => TrainingMode::Adversarial(AttackConfig {
                        seed,
                        ..AttackConfig::pgd(eps)
                    }),
                },
                epochs,
                learning_rate: lr,
                batch_size,
                seed,
            };
            train_toy(&data, classes, &config, &out)
        }
        Command::Correlate {
            metrics,
            center_by,
            out,
        } => correlate(&metrics, center_by.is_some(), &out),
        Command::Report {
            metrics,
            baseline,
            out,
            bins,
        } => report(&metrics, &baseline, &out, bins),
        Command::Synth { kind, out, seed } => synth(kind, &out, seed),
    }
}

fn score(plan_path: &Path, out: &Path, jobs: usize) -> Result<()> {
    let plan = EvaluationPlan::read(plan_path)?;
    if plan.runs.is_empty() {
        return Err(Error::Plan("plan lists no runs".into()));
    }
    let outcome = pipeline::evaluate_pool(&plan, jobs)?;
    pipeline::write_pool(out, &outcome)?;
    for f in &outcome.failures {
        eprintln!("run failed: {}: {}", f.manifest.display(), f.error);
    }
    for x in &outcome.excluded {
        eprintln!("left out of {}: {}: {}", pipeline::METRICS_FILE, x.model_id, x.reason);
    }
    println!(
        "scored {} of {} runs; {} rows in {}",
        outcome.evaluations.len(),
        plan.runs.len(),
        outcome.table.len(),
        out.join(pipeline::METRICS_FILE).display()
    );
    if outcome.evaluations.is_empty() {
        return Err(Error::Value("no run could be scored".into()));
    }
    Ok(())
}

fn calibrate(run_path: &Path, out: &Path, plan_path: Option<&Path>) -> Result<()> {
    let mut plan = match plan_path {
        Some(p) => EvaluationPlan::read(p)?,
        None => EvaluationPlan::default(),
    };
    plan.temperature.mode = TemperatureMode::FitAndReportBoth;
    let run = load_run(run_path)?;
    let eval = evaluate_run(&run, &plan)?;
    let report = CalibrationReport {
        scaler: eval.scaler.expect("temperature mode is on"),
        card: eval.card,
        calibrated: eval.calibrated.expect("temperature mode is on"),
    };
    formats::write_json(out, &report)?;
    println!(
        "T = {}; s_cal {} -> {}",
        report.scaler.temperature, report.card.s_cal, report.calibrated.s_cal
    );
    Ok(())
}

/// Manifest paths listed in a pool file, one per line; blank lines and lines
/// starting with `#` are skipped.
pub fn read_pool_list(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| resolve(base, Path::new(l)))
        .collect())
}

fn ensemble(pool_path: &Path, k: usize, trials: usize, seed: u64, out: &Path, emit: Option<&Path>) -> Result<()> {
    let runs: Vec<ModelRun> = read_pool_list(pool_path)?
        .iter()
        .map(|p| load_run(p))
        .collect::<Result<_>>()?;
    let Some(first) = runs.first() else {
        return Err(Error::Value(format!("{}: pool is empty", pool_path.display())));
    };
    let labels = first.id_val.logits.labels().to_vec();
    for r in &runs {
        if r.id_val.logits.labels() != labels.as_slice() || r.num_classes != first.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "run `{}` does not share id_val labels and classes with `{}`",
                r.model_id, first.model_id
            )));
        }
    }
    let val: Vec<Matrix> = runs.iter().map(|r| r.id_val.logits.to_matrix()).collect();
    let members: Vec<EnsembleMember<'_>> = runs
        .iter()
        .zip(&val)
        .map(|(r, m)| EnsembleMember {
            id: &r.model_id,
            val_logits: m,
        })
        .collect();
    let search = random_ensemble_search(&members, &labels, k, trials, seed)?;
    formats::write_ensemble_spec(out, &search.best)?;
    println!(
        "best of {} trials: [{}] val_loss {}",
        search.trials.len(),
        search.best.member_ids.join(", "),
        search.best.val_loss
    );
    if let Some(dir) = emit {
        emit_ensemble_run(&runs, &search.best, dir)?;
    }
    Ok(())
}

/// Writes the ensemble's combined logits for every role all members share
/// (with matching labels), plus a manifest with group `ensemble`.
pub fn emit_ensemble_run(runs: &[ModelRun], spec: &EnsembleSpec, dir: &Path) -> Result<PathBuf> {
    let members: Vec<&ModelRun> = spec
        .member_ids
        .iter()
        .map(|id| {
            runs.iter()
                .find(|r| &r.model_id == id)
                .ok_or_else(|| Error::Value(format!("ensemble member `{id}` not in pool")))
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    let lead = members[0];
    let mut roles: Vec<Role> = [Role::IdVal, Role::IdTest]
        .into_iter()
        .chain(lead.shifts.iter().map(|s| s.role.clone()))
        .chain(lead.ood.iter().map(|s| s.role.clone()))
        .collect();
    if lead.adv.is_some() {
        roles.push(Role::AdvId);
    }
    let mut splits = Vec::new();
    for role in roles {
        let parts: Option<Vec<&SplitDump>> = members.iter().map(|m| m.split(&role).map(|s| &s.logits)).collect();
        let Some(parts) = parts else { continue };
        if parts.iter().any(|p| p.labels() != parts[0].labels()) {
            continue;
        }
        let matrices: Vec<Matrix> = parts.iter().map(|p| p.to_matrix()).collect();
        let refs: Vec<&Matrix> = matrices.iter().collect();
        let combined = ensemble_logits(&refs, &spec.weights)?;
        let file = PathBuf::from(format!("{role}.hre"));
        SplitDump::from_matrix(&combined, parts[0].labels())?.write(&dir.join(&file))?;
        let derived_from = if role == Role::AdvId {
            members.iter().map(|m| m.adv_derivation.clone()).reduce(|a, b| if a == b { a } else { None }).flatten()
        } else {
            None
        };
        splits.push(SplitEntry {
            role,
            path: file,
            features: None,
            derived_from,
        });
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        model_id: format!("ensemble-{}", spec.member_ids.join("+")),
        group: "ensemble".into(),
        num_classes: lead.num_classes,
        model: None,
        splits,
    };
    let path = dir.join("run.toml");
    manifest.write(&path)?;
    Ok(path)
}

fn read_features(path: &Path) -> Result<(Matrix, Vec<i32>)> {
    let d = SplitDump::read(path)?;
    if d.has_unlabeled() {
        return Err(Error::Value(format!("{}: features must be fully labeled", path.display())));
    }
    Ok((d.to_matrix(), d.labels().to_vec()))
}

fn attack(model_path: &Path, data: &Path, config: &AttackConfig, cap: usize, out: Option<&Path>) -> Result<()> {
    let model = formats::read_toy_model(model_path)?;
    let (x, y) = read_features(data)?;
    if x.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have width {}, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    let eval = evaluate_adversarial(&model, &x, &y, config, cap, config.seed)?;
    let report = AttackReport {
        method: config.method,
        epsilon: config.epsilon,
        steps: config.steps,
        step_size: config.step_size,
        random_start: config.random_start,
        seed: config.seed,
        n_evaluated: eval.n_evaluated,
        clean_accuracy: eval.clean_accuracy,
        adversarial_accuracy: eval.adversarial_accuracy,
    };
    match out {
        Some(p) => formats::write_json(p, &report),
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Value(e.to_string()))?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::write("<stdout>", e))
        }
    }
}

fn train_toy(data: &Path, classes: Option<usize>, config: &TrainConfig, out: &Path) -> Result<()> {
    let (x, y) = read_features(data)?;
    let classes = match classes {
        Some(k) => k,
        None => y.iter().copied().max().map_or(0, |m| m as usize + 1),
    };
    let trained = train(&x, &y, classes, config)?;
    formats::write_toy_model(out, &trained.model)?;
    println!(
        "loss {} -> {}; training accuracy {}",
        trained.initial_loss,
        trained.epoch_losses.last().copied().unwrap_or(trained.initial_loss),
        accuracy(&trained.model.forward(&x)?, &y)?
    );
    Ok(())
}

fn correlate(metrics: &Path, centered: bool, out: &Path) -> Result<()> {
    let table = formats::read_metric_table(metrics)?;
    let matrix = correlation_matrix(&table, centered)?;
    formats::write_correlation(out, &matrix)?;
    let undefined = matrix.r.iter().flatten().filter(|v| v.is_none()).count();
    println!("{undefined} of 25 entries undefined");
    Ok(())
}

pub const HR_IMPROVEMENT_FILE: &str = "hr_improvement.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";

fn report(metrics: &[PathBuf], baseline: &str, out: &Path, bins: usize) -> Result<()> {
    let tables: Vec<MetricTable> = metrics.iter().map(|p| formats::read_metric_table(p)).collect::<Result<_>>()?;
    let improvement = hr_improvement_across(&tables, baseline)?;
    fs::create_dir_all(out).map_err(|e| Error::write(out, e))?;
    formats::write_hr_improvement(&out.join(HR_IMPROVEMENT_FILE), &improvement)?;

    let mut histograms = Vec::new();
    for (i, name) in SCORE_NAMES.iter().enumerate() {
        let values: Vec<f64> = tables.iter().flat_map(|t| t.column(i)).collect();
        histograms.push((*name, histogram(&values, bins)?));
    }
    let hr: Vec<f64> = tables.iter().flat_map(|t| t.hr_column()).collect();
    histograms.push(("s_hr", histogram(&hr, bins)?));
    formats::write_histograms(&out.join(HISTOGRAMS_FILE), &histograms)?;
    for d in &improvement.average {
        println!("{}: {:+}", d.group, d.delta);
    }
    Ok(())
}

fn synth(kind: SynthKind, out: &Path, seed: u64) -> Result<()> {
    match kind {
        SynthKind::Blobs => {
            let f = fixture::write_blob_fixture(out, seed)?;
            println!("wrote {} runs; plan {}", f.manifests.len(), f.plan.display());
        }
        SynthKind::Robust => {
            let [train, test] = fixture::write_robust_task(out, 1000, 1000, seed)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
    }
    Ok(())
}
