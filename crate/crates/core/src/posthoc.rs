//! Post-training interventions: temperature scaling and logit ensembles
//! with validation-fitted weights.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::math;
use crate::metrics::{check_labels, check_temperature};
use crate::sampling;
use crate::{Error, Matrix, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const MAX_TEMPERATURE: f64 = 1e3;
/// Bracket width at which the golden-section search on `log T` stops.
pub const LOG_TEMPERATURE_TOLERANCE: f64 = 1e-6;

pub const ENSEMBLE_MAX_ITERATIONS: usize = 500;
pub const ENSEMBLE_GRADIENT_TOLERANCE: f64 = 1e-6;
/// Number of random member subsets tried by default.
pub const DEFAULT_ENSEMBLE_TRIALS: usize = 50;
pub const MAX_ENSEMBLE_SIZE: usize = 5;

fn check_split(logits: &Matrix, labels: &[i32]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: logits.rows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySplit);
    }
    check_labels(labels, logits.cols())
}

fn nll_unchecked(logits: &Matrix, labels: &[i32], temperature: f64) -> f64 {
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(z, &y)| math::log_sum_exp(z, temperature) - z[y as usize] / temperature)
        .sum();
    total / labels.len() as f64
}

/// Mean negative log-likelihood of `softmax(z / T)`.
pub fn mean_nll(logits: &Matrix, labels: &[i32], temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    check_split(logits, labels)?;
    Ok(nll_unchecked(logits, labels, temperature))
}

/// A fitted temperature together with the validation NLL at `T = 1` and at
/// the fitted value.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TemperatureScaler {
    pub temperature: f64,
    pub val_nll_before: f64,
    pub val_nll_after: f64,
}

/// Fits `T` by golden-section search on `log T` over
/// `[log MIN_TEMPERATURE, log MAX_TEMPERATURE]`.
///
/// The bracket end points and `T = 1` are also evaluated, so the fit never
/// does worse than leaving the logits alone.
pub fn fit_temperature(logits: &Matrix, labels: &[i32]) -> Result<TemperatureScaler> {
    check_split(logits, labels)?;
    let f = |u: f64| nll_unchecked(logits, labels, math::exp(u));
    let inv_phi = (math::sqrt(5.0) - 1.0) / 2.0;
    let (mut a, mut b) = (math::ln(MIN_TEMPERATURE), math::ln(MAX_TEMPERATURE));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LOG_TEMPERATURE_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let before = f(0.0);
    let mid = 0.5 * (a + b);
    let mut best = (1.0, before);
    let interior = math::exp(mid);
    let v = nll_unchecked(logits, labels, interior);
    if v < best.1 {
        best = (interior, v);
    }
    // a bracket collapsed onto an end point means the NLL is monotone there
    for t in [MIN_TEMPERATURE, MAX_TEMPERATURE] {
        let v = nll_unchecked(logits, labels, t);
        if v <= best.1 && (math::ln(t) - mid).abs() < 1e-3 {
            best = (t, v);
        }
    }
    Ok(TemperatureScaler {
        temperature: best.0,
        val_nll_before: before,
        val_nll_after: best.1,
    })
}

/// Divides every logit by `T`.
pub fn apply_temperature(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    if temperature == 1.0 {
        return Ok(logits.clone());
    }
    Ok(logits.map(|z| z / temperature))
}

fn check_members(members: &[&Matrix]) -> Result<(usize, usize)> {
    let first = members.first().ok_or(Error::EmptyList)?;
    let (n, k) = (first.rows(), first.cols());
    for m in members {
        if m.rows() != n {
            return Err(Error::ShapeMismatch {
                what: "ensemble member rows",
                expected: n,
                found: m.rows(),
            });
        }
        if m.cols() != k {
            return Err(Error::ShapeMismatch {
                what: "ensemble member classes",
                expected: k,
                found: m.cols(),
            });
        }
    }
    Ok((n, k))
}

/// `Σ_j w_j Z_j`, elementwise.
pub fn ensemble_logits(members: &[&Matrix], weights: &[f64]) -> Result<Matrix> {
    let (n, k) = check_members(members)?;
    if weights.len() != members.len() {
        return Err(Error::LengthMismatch {
            left: members.len(),
            right: weights.len(),
        });
    }
    let mut out = Matrix::zeros(n, k);
    for (m, &w) in members.iter().zip(weights) {
        for (o, z) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *o += w * z;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of the weighted ensemble and its gradient in the
/// weights.
fn ensemble_loss(members: &[&Matrix], labels: &[i32], weights: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let k = members[0].cols();
    let n = labels.len();
    let mut z = vec![0.0; k];
    let mut p = Vec::with_capacity(k);
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for (i, &y) in labels.iter().enumerate() {
        z.iter_mut().for_each(|v| *v = 0.0);
        for (m, &w) in members.iter().zip(weights) {
            for (zc, mc) in z.iter_mut().zip(m.row(i)) {
                *zc += w * mc;
            }
        }
        let y = y as usize;
        total += math::log_sum_exp(&z, 1.0) - z[y];
        if let Some(g) = grad.as_deref_mut() {
            math::softmax_into(&z, 1.0, &mut p);
            p[y] -= 1.0;
            for (gj, m) in g.iter_mut().zip(members) {
                *gj += m.row(i).iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v /= n as f64);
    }
    total / n as f64
}

/// Result of fitting ensemble weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct WeightFit {
    pub weights: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Fits unconstrained member weights minimising validation cross-entropy.
///
/// Plain gradient descent from `1/k`, with the step halved until the
/// sufficient-decrease condition holds and doubled after each accepted step.
/// Stops after [`ENSEMBLE_MAX_ITERATIONS`] or once the gradient norm drops
/// below [`ENSEMBLE_GRADIENT_TOLERANCE`].
pub fn fit_ensemble_weights(members: &[&Matrix], labels: &[i32]) -> Result<WeightFit> {
    let (n, k) = check_members(members)?;
    if n != labels.len() {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    check_labels(labels, k)?;

    let m = members.len();
    let mut w = vec![1.0 / m as f64; m];
    let mut g = vec![0.0; m];
    let mut trial_w = vec![0.0; m];
    let mut loss = ensemble_loss(members, labels, &w, Some(&mut g));
    let initial_loss = loss;
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < ENSEMBLE_MAX_ITERATIONS {
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        if math::sqrt(g_sq) < ENSEMBLE_GRADIENT_TOLERANCE {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, wi), gi) in trial_w.iter_mut().zip(&w).zip(&g) {
                *t = wi - step * gi;
            }
            let trial_loss = ensemble_loss(members, labels, &trial_w, None);
            if trial_loss <= loss - 1e-4 * step * g_sq {
                w.copy_from_slice(&trial_w);
                loss = ensemble_loss(members, labels, &w, Some(&mut g));
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    Ok(WeightFit {
        weights: w,
        initial_loss,
        final_loss: loss,
        iterations,
    })
}

/// A chosen ensemble: member ids, fitted weights and validation loss.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EnsembleSpec {
    pub member_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub val_loss: f64,
}

/// A candidate ensemble member: model id and its ID-validation logits.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleMember<'a> {
    pub id: &'a str,
    pub val_logits: &'a Matrix,
}

/// Outcome of [`random_ensemble_search`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EnsembleSearch {
    pub best: EnsembleSpec,
    pub best_trial: usize,
    pub trials: Vec<EnsembleSpec>,
}

/// Member subsets (ascending pool indices) drawn for each trial. Members are
/// distinct within a trial; subsets may repeat across trials.
pub fn ensemble_trials(pool_size: usize, k: usize, trials: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > pool_size {
        return Err(Error::PoolTooSmall { pool: pool_size, k });
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("at least one trial is required"));
    }
    let mut rng = sampling::rng(seed, 0);
    let mut idx: Vec<usize> = (0..pool_size).collect();
    Ok((0..trials)
        .map(|_| {
            let (chosen, _) = idx.partial_shuffle(&mut rng, k);
            let mut chosen = chosen.to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect())
}

/// Fits weights for `trials` random member subsets of size `k` and returns
/// the one with the lowest validation loss (ties go to the earliest trial).
pub fn random_ensemble_search(
    pool: &[EnsembleMember<'_>],
    labels: &[i32],
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<EnsembleSearch> {
    let subsets = ensemble_trials(pool.len(), k, trials, seed)?;
    let mut specs = Vec::with_capacity(trials);
    for subset in &subsets {
        let members: Vec<&Matrix> = subset.iter().map(|&i| pool[i].val_logits).collect();
        let fit = fit_ensemble_weights(&members, labels)?;
        specs.push(EnsembleSpec {
            member_ids: subset.iter().map(|&i| String::from(pool[i].id)).collect(),
            weights: fit.weights,
            val_loss: fit.final_loss,
        });
    }
    let mut best_trial = 0;
    for (i, s) in specs.iter().enumerate() {
        if s.val_loss < specs[best_trial].val_loss {
            best_trial = i;
        }
    }
    Ok(EnsembleSearch {
        best: specs[best_trial].clone(),
        best_trial,
        trials: specs,
    })
}
