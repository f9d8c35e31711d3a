//! Seeded synthetic fixtures.
//!
//! [`write_blob_fixture`] builds a small pool of runs over a three-class
//! Gaussian-blob task: each run is a linear model close to the Bayes
//! classifier with its logits scaled by a different factor, so the pool
//! holds one calibrated, one overconfident and one underconfident model.
//! Every split ships with its raw features, and every run with its model
//! and an adversarial split attacked with PGD.
//!
//! [`robust_task`] is a binary task with one robust feature and many
//! weakly predictive features that are smaller than a typical attack budget.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use reliascore_core::runtime::{attack, AttackConfig, ToyModel};
use reliascore_core::sampling::{self, sample_indices, ADV_SAMPLE_CAP, DEFAULT_SEED};
use reliascore_core::Matrix;

use crate::plan::EvaluationPlan;
use crate::store::{Derivation, Role, RunManifest, SplitDump, SplitEntry, SCHEMA_VERSION};
use crate::{formats, Error, Result};

pub const BLOB_CLASSES: usize = 3;
pub const BLOB_DIM: usize = 8;
const BLOB_SEPARATION: f64 = 2.0;
const WEIGHT_NOISE: f64 = 0.15;

/// Model id, group and logit scale of each generated run.
pub const BLOB_RUNS: [(&str, &str, f64); 3] = [
    ("calibrated", "baseline", 1.0),
    ("overconfident", "baseline", 4.0),
    ("underconfident", "finetune", 0.4),
];

/// Paths of a generated fixture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    pub manifests: Vec<PathBuf>,
    pub plan: PathBuf,
    pub pool_list: PathBuf,
}

fn mean(class: usize) -> [f64; BLOB_DIM] {
    let mut m = [0.0; BLOB_DIM];
    m[class] = BLOB_SEPARATION;
    m
}

/// How a split's inputs are drawn.
#[derive(Debug, Clone, Copy)]
enum Source {
    /// Class blobs moved by `shift` along a seeded random direction, with
    /// extra isotropic noise of standard deviation `noise`.
    Blobs { shift: f64, noise: f64 },
    /// Unlabeled Gaussian around `center` on the first axes.
    Ood { center: f64, spread: f64 },
}

/// Draws `n` samples, rounded to `f32` so features on disk and in memory agree.
fn draw(n: usize, source: Source, seed: u64, stream: u64) -> (Matrix, Vec<i32>) {
    let mut rng = sampling::rng(seed, stream);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(n * BLOB_DIM);
    let mut labels = Vec::with_capacity(n);
    let mut direction = [0.0; BLOB_DIM];
    for d in direction.iter_mut() {
        *d = normal.sample(&mut rng);
    }
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    for _ in 0..n {
        match source {
            Source::Blobs { shift, noise } => {
                let y = rng.random_range(0..BLOB_CLASSES);
                let mu = mean(y);
                for j in 0..BLOB_DIM {
                    let mut x = mu[j] + normal.sample(&mut rng) + shift * direction[j] / norm;
                    if noise > 0.0 {
                        x += noise * normal.sample(&mut rng);
                    }
                    data.push(x as f32 as f64);
                }
                labels.push(y as i32);
            }
            Source::Ood { center, spread } => {
                for j in 0..BLOB_DIM {
                    let c = if (BLOB_CLASSES..2 * BLOB_CLASSES).contains(&j) { center } else { 0.0 };
                    data.push((c + spread * normal.sample(&mut rng)) as f32 as f64);
                }
                labels.push(-1);
            }
        }
    }
    (Matrix::new(n, BLOB_DIM, data).expect("consistent shape"), labels)
}

/// A linear model near the Bayes rule of the blob task, scaled by `factor`.
pub fn blob_model(factor: f64, seed: u64, stream: u64) -> ToyModel {
    let mut rng = sampling::rng(seed, stream);
    let noise = Normal::new(0.0, WEIGHT_NOISE).expect("positive spread");
    let mut w = Vec::with_capacity(BLOB_CLASSES * BLOB_DIM);
    let mut b = Vec::with_capacity(BLOB_CLASSES);
    for k in 0..BLOB_CLASSES {
        let mu = mean(k);
        for m in mu {
            w.push(factor * (m + noise.sample(&mut rng)));
        }
        b.push(-factor * mu.iter().map(|m| m * m).sum::<f64>() / 2.0);
    }
    let w = Matrix::new(BLOB_CLASSES, BLOB_DIM, w).expect("consistent shape");
    ToyModel::linear(&w, &b).expect("finite parameters")
}

struct SplitSpec {
    role: &'static str,
    n: usize,
    source: Source,
}

const SPLITS: [SplitSpec; 7] = [
    SplitSpec {
        role: "id_val",
        n: 600,
        source: Source::Blobs { shift: 0.0, noise: 0.0 },
    },
    SplitSpec {
        role: "id_test",
        n: 2000,
        source: Source::Blobs { shift: 0.0, noise: 0.0 },
    },
    SplitSpec {
        role: "ds_val",
        n: 600,
        source: Source::Blobs { shift: 0.5, noise: 0.0 },
    },
    SplitSpec {
        role: "ds_test",
        n: 600,
        source: Source::Blobs { shift: 1.0, noise: 0.0 },
    },
    SplitSpec {
        role: "ds_c1",
        n: 600,
        source: Source::Blobs { shift: 0.0, noise: 0.7 },
    },
    SplitSpec {
        role: "ood_noise",
        n: 400,
        source: Source::Ood { center: 0.0, spread: 0.5 },
    },
    SplitSpec {
        role: "ood_other",
        n: 400,
        source: Source::Ood { center: 3.0, spread: 1.0 },
    },
];

fn write_dump(path: &Path, matrix: &Matrix, labels: &[i32]) -> Result<()> {
    SplitDump::from_matrix(matrix, labels)?.write(path)
}

fn file_name(p: &Path) -> PathBuf {
    PathBuf::from(p.file_name().expect("file path"))
}

/// Writes the blob pool under `dir`: one directory per run with its dumps,
/// features, model and manifest, plus `plan.toml` and `pool.txt` at the top.
/// Data is shared across runs; models differ.
pub fn write_blob_fixture(dir: &Path, seed: u64) -> Result<Fixture> {
    let data: Vec<(Matrix, Vec<i32>)> = SPLITS
        .iter()
        .enumerate()
        .map(|(i, s)| draw(s.n, s.source, seed, 100 + i as u64))
        .collect();
    let attack_config = AttackConfig {
        seed,
        ..AttackConfig::default()
    };
    let mut manifests = Vec::new();
    for (r, (id, group, factor)) in BLOB_RUNS.iter().enumerate() {
        let run_dir = dir.join(id);
        fs::create_dir_all(&run_dir).map_err(|e| Error::write(&run_dir, e))?;
        let model = blob_model(*factor, seed, 10 + r as u64);
        let model_path = run_dir.join("model.json");
        formats::write_toy_model(&model_path, &model)?;

        let mut splits = Vec::new();
        for (spec, (x, y)) in SPLITS.iter().zip(&data) {
            let logits_path = run_dir.join(format!("{}.hre", spec.role));
            let features_path = run_dir.join(format!("{}.features.hre", spec.role));
            write_dump(&logits_path, &model.forward(x)?, y)?;
            write_dump(&features_path, x, y)?;
            splits.push(SplitEntry {
                role: spec.role.parse()?,
                path: file_name(&logits_path),
                features: Some(file_name(&features_path)),
                derived_from: None,
            });
        }

        let (x, y) = &data[1];
        let idx = sample_indices(x.rows(), ADV_SAMPLE_CAP, DEFAULT_SEED);
        let mut adv = Vec::with_capacity(idx.len() * BLOB_DIM);
        for (pos, &i) in idx.iter().enumerate() {
            adv.extend(attack(&model, x.row(i), y[i] as usize, &attack_config, pos as u64)?);
        }
        let adv_x = Matrix::new(idx.len(), BLOB_DIM, adv.iter().map(|&v| v as f32 as f64).collect())?;
        let adv_y: Vec<i32> = idx.iter().map(|&i| y[i]).collect();
        write_dump(&run_dir.join("adv_id.hre"), &model.forward(&adv_x)?, &adv_y)?;
        write_dump(&run_dir.join("adv_id.features.hre"), &adv_x, &adv_y)?;
        splits.push(SplitEntry {
            role: Role::AdvId,
            path: "adv_id.hre".into(),
            features: Some("adv_id.features.hre".into()),
            derived_from: Some(Derivation {
                role: Role::IdTest,
                cap: ADV_SAMPLE_CAP,
                seed: DEFAULT_SEED,
            }),
        });

        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            model_id: id.to_string(),
            group: group.to_string(),
            num_classes: BLOB_CLASSES,
            model: Some("model.json".into()),
            splits,
        };
        let path = run_dir.join("run.toml");
        manifest.write(&path)?;
        manifests.push(path);
    }

    let relative: Vec<PathBuf> = BLOB_RUNS.iter().map(|(id, _, _)| Path::new(id).join("run.toml")).collect();
    let plan = EvaluationPlan {
        runs: relative.clone(),
        ..EvaluationPlan::default()
    };
    let plan_path = dir.join("plan.toml");
    plan.write(&plan_path)?;
    let pool_list = dir.join("pool.txt");
    let listing: String = relative.iter().map(|p| format!("{}\n", p.display())).collect();
    fs::write(&pool_list, listing).map_err(|e| Error::write(&pool_list, e))?;
    Ok(Fixture {
        manifests,
        plan: plan_path,
        pool_list,
    })
}

pub const ROBUST_NONROBUST_FEATURES: usize = 40;
const ROBUST_SIGNAL: f64 = 1.0;
const ROBUST_NOISE: f64 = 1.0;
const NONROBUST_SIGNAL: f64 = 0.01;
const NONROBUST_NOISE: f64 = 0.02;

/// Binary task: feature 0 is `±1` plus unit noise; the remaining features
/// carry a `±0.01` signal under `0.02` noise, so together they predict the
/// label well but an L∞ budget of `3/255` can erase them.
pub fn robust_task(n: usize, seed: u64) -> (Matrix, Vec<i32>) {
    let d = 1 + ROBUST_NONROBUST_FEATURES;
    let mut rng = sampling::rng(seed, 200);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..2usize);
        let s = if y == 1 { 1.0 } else { -1.0 };
        data.push((s * ROBUST_SIGNAL + ROBUST_NOISE * normal.sample(&mut rng)) as f32 as f64);
        for _ in 0..ROBUST_NONROBUST_FEATURES {
            data.push((s * NONROBUST_SIGNAL + NONROBUST_NOISE * normal.sample(&mut rng)) as f32 as f64);
        }
        labels.push(y as i32);
    }
    (Matrix::new(n, d, data).expect("consistent shape"), labels)
}

/// Writes `train.features.hre` and `test.features.hre` for [`robust_task`].
pub fn write_robust_task(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<[PathBuf; 2]> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    let train = dir.join("train.features.hre");
    let test = dir.join("test.features.hre");
    let (x, y) = robust_task(n_train, seed);
    write_dump(&train, &x, &y)?;
    let (x, y) = robust_task(n_test, seed.wrapping_add(1));
    write_dump(&test, &x, &y)?;
    Ok([train, test])
}
