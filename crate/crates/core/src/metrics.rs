//! Metric kernels and the five reliability property scores.
//!
//! Every kernel is a pure function of its inputs. Labels use `i32` with `-1`
//! marking an unlabeled sample; kernels that need ground truth reject it.

use alloc::string::String;
use alloc::vec::Vec;

use crate::detectors::DetectorAuroc;
use crate::math;
use crate::{Error, Matrix, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default number of equal-width confidence bins for ECE.
pub const DEFAULT_ECE_BINS: usize = 15;
/// ECE of a binary classifier that is always fully confident and right half
/// the time; used to normalise the calibration score.
pub const DEFAULT_ECE_MAX: f64 = 0.5;
/// Equal weighting of the five properties.
pub const EQUAL_WEIGHTS: [f64; 5] = [0.2; 5];
/// Allowed deviation of the weight sum from one.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;
/// Human-readable description of the ECE binning, recorded in score cards.
pub const ECE_BINNING: &str = "equal-width, right-closed, L1, temperature-1 max softmax";

/// Column names of the five property scores, in weight-vector order.
pub const SCORE_NAMES: [&str; 5] = ["s_id", "s_ds", "s_adv", "s_cal", "s_ood"];

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Checks that every label is a valid class index for `classes` classes.
pub fn check_labels(labels: &[i32], classes: usize) -> Result<()> {
    for &l in labels {
        if l == -1 {
            return Err(Error::UnlabeledData);
        }
        if l < 0 || l as usize >= classes {
            return Err(Error::LabelOutOfRange {
                label: l as i64,
                classes,
            });
        }
    }
    Ok(())
}

fn check_labeled_split(logits: &Matrix, labels: &[i32]) -> Result<()> {
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

/// Top-1 accuracy.
pub fn accuracy(logits: &Matrix, labels: &[i32]) -> Result<f64> {
    check_labeled_split(logits, labels)?;
    let correct = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y as usize)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut out = Vec::with_capacity(logits.len());
    math::softmax_into(logits, temperature, &mut out);
    Ok(out)
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

/// Maximum softmax probability at temperature one.
pub fn confidence(logits: &[f64]) -> f64 {
    // max_k p_k = 1 / Σ exp(z_k - max z)
    let m = math::max(logits);
    let s: f64 = logits.iter().map(|&z| math::exp(z - m)).sum();
    1.0 / s
}

/// Right-closed equal-width bin of a confidence in `[0, 1]`; zero lands in
/// the first bin.
fn confidence_bin(c: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut i = (math::ceil(c * b) as isize - 1).clamp(0, bins as isize - 1) as usize;
    while i > 0 && c <= i as f64 / b {
        i -= 1;
    }
    while i + 1 < bins && c > (i + 1) as f64 / b {
        i += 1;
    }
    i
}

/// ECE from precomputed confidences and correctness flags.
pub fn ece_from_confidences(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if confidences.is_empty() {
        return Err(Error::EmptySplit);
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin"));
    }
    let mut count = alloc::vec![0usize; bins];
    let mut hits = alloc::vec![0usize; bins];
    let mut conf_sum = alloc::vec![0.0f64; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::NonFinite("confidence"));
        }
        let b = confidence_bin(c, bins);
        count[b] += 1;
        hits[b] += ok as usize;
        conf_sum[b] += c;
    }
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let nb = count[b] as f64;
        let acc = hits[b] as f64 / nb;
        let conf = conf_sum[b] / nb;
        ece += nb / n * (acc - conf).abs();
    }
    Ok(ece)
}

/// Expected calibration error of temperature-one softmax outputs.
pub fn ece(logits: &Matrix, labels: &[i32], bins: usize) -> Result<f64> {
    check_labeled_split(logits, labels)?;
    let mut confidences = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    for (row, &y) in logits.iter_rows().zip(labels) {
        confidences.push(confidence(row));
        correct.push(argmax(row) == y as usize);
    }
    ece_from_confidences(&confidences, &correct, bins)
}

/// Area under the ROC curve with ID samples as the positive class.
///
/// Uses the Mann–Whitney rank-sum with mid-ranks for ties, so the result is
/// `P(id > ood) + P(id = ood) / 2` over all pairs.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::EmptyClass);
    }
    if id_scores.iter().chain(ood_scores).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("detector scores"));
    }
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of (1-based) ranks of the ID scores, ties sharing their mid-rank.
    let mut id_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let id_in_run = all[i..j].iter().filter(|(_, is_id)| *is_id).count();
        id_rank_sum += mid_rank * id_in_run as f64;
        i = j;
    }
    let n_id = id_scores.len() as f64;
    let n_ood = ood_scores.len() as f64;
    let u = id_rank_sum - n_id * (n_id + 1.0) / 2.0;
    Ok(u / (n_id * n_ood))
}

/// Accuracy and ECE of one split.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SplitEvaluation {
    pub performance: f64,
    pub ece: f64,
    pub n_evaluated: usize,
}

pub fn evaluate_split(logits: &Matrix, labels: &[i32], bins: usize) -> Result<SplitEvaluation> {
    Ok(SplitEvaluation {
        performance: accuracy(logits, labels)?,
        ece: ece(logits, labels, bins)?,
        n_evaluated: labels.len(),
    })
}

/// Scoring parameters: property weights, ECE binning and normalisation, and
/// an optional linear rescale of ID accuracy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScoreConfig {
    pub weights: [f64; 5],
    pub ece_bins: usize,
    pub ece_max: f64,
    pub id_rescale: Option<(f64, f64)>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            weights: EQUAL_WEIGHTS,
            ece_bins: DEFAULT_ECE_BINS,
            ece_max: DEFAULT_ECE_MAX,
            id_rescale: None,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(&self.weights)?;
        if self.ece_bins == 0 {
            return Err(Error::InvalidConfig("ece_bins must be at least 1"));
        }
        if !(self.ece_max > 0.0 && self.ece_max.is_finite()) {
            return Err(Error::InvalidConfig("ece_max must be positive"));
        }
        if let Some((lo, hi)) = self.id_rescale {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::InvalidConfig("id_rescale needs 0 <= lo < hi <= 1"));
            }
        }
        Ok(())
    }
}

fn check_weights(weights: &[f64; 5]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::WeightError { sum });
    }
    Ok(())
}

/// `s_ID`: ID accuracy, optionally mapped linearly from `(lo, hi)` onto
/// `(0, 1)` and clamped.
pub fn score_id(p_id: f64, rescale: Option<(f64, f64)>) -> f64 {
    match rescale {
        None => p_id,
        Some((lo, hi)) => ((p_id - lo) / (hi - lo)).clamp(0.0, 1.0),
    }
}

/// `s_DS`: mean ratio of shifted to ID accuracy. Not clipped at one.
pub fn score_ds(p_id: f64, p_shifts: &[f64]) -> Result<f64> {
    if p_shifts.is_empty() {
        return Err(Error::EmptyList);
    }
    if p_id <= 0.0 {
        return Err(Error::DegeneratePerformance);
    }
    let sum: f64 = p_shifts.iter().map(|p| p / p_id).sum();
    Ok(sum / p_shifts.len() as f64)
}

/// `s_ADV`: adversarial over clean accuracy.
pub fn score_adv(p_adv: f64, p_id: f64) -> Result<f64> {
    if p_id <= 0.0 {
        return Err(Error::DegeneratePerformance);
    }
    Ok(p_adv / p_id)
}

/// `s_CAL = 1 - (ECE_ID + Σ ECE_i) / ((N + 1) ECE_max)`.
pub fn score_cal(ece_id: f64, ece_shifts: &[f64], ece_max: f64) -> Result<f64> {
    if !(ece_max > 0.0) {
        return Err(Error::InvalidConfig("ece_max must be positive"));
    }
    let mut total = 0.0;
    for &e in core::iter::once(&ece_id).chain(ece_shifts) {
        if !(0.0..=ece_max).contains(&e) {
            return Err(Error::EceOutOfRange { ece: e, max: ece_max });
        }
        total += e;
    }
    let terms = (ece_shifts.len() + 1) as f64;
    Ok(1.0 - total / (terms * ece_max))
}

/// `s_OOD`: mean AUROC over detectors.
pub fn score_ood(aurocs: &[f64]) -> Result<f64> {
    if aurocs.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(aurocs.iter().sum::<f64>() / aurocs.len() as f64)
}

/// `s_HR = wᵀs`.
pub fn score_hr(scores: &[f64; 5], weights: &[f64; 5]) -> Result<f64> {
    check_weights(weights)?;
    Ok(dot(scores, weights))
}

fn dot(scores: &[f64; 5], weights: &[f64; 5]) -> f64 {
    scores.iter().zip(weights).map(|(s, w)| s * w).sum()
}

/// `s_HR` when some property scores are unavailable: the weights of the
/// missing properties are dropped and the rest renormalised to sum to one.
/// Returns the score and the effective weights (zero for missing entries).
pub fn score_hr_available(scores: &[Option<f64>; 5], weights: &[f64; 5]) -> Result<(f64, [f64; 5])> {
    check_weights(weights)?;
    let mut effective = [0.0; 5];
    let kept: f64 = scores
        .iter()
        .zip(weights)
        .filter(|(s, _)| s.is_some())
        .map(|(_, w)| w)
        .sum();
    if kept <= 0.0 {
        return Err(Error::WeightError { sum: kept });
    }
    let mut values = [0.0; 5];
    for i in 0..5 {
        if let Some(s) = scores[i] {
            values[i] = s;
            effective[i] = if kept == 1.0 { weights[i] } else { weights[i] / kept };
        }
    }
    Ok((dot(&values, &effective), effective))
}

/// Per-shift accuracy and ECE as recorded in a [`ScoreCard`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ShiftResult {
    pub name: String,
    pub performance: f64,
    pub ece: f64,
    pub n_evaluated: usize,
}

/// All scores of one evaluated model together with the intermediate metrics
/// they were computed from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScoreCard {
    pub model_id: String,
    pub group: String,
    pub s_id: f64,
    pub s_ds: f64,
    /// `None` when no adversarial evaluation was possible for the run.
    pub s_adv: Option<f64>,
    pub s_cal: f64,
    pub s_ood: f64,
    pub s_hr: f64,
    /// Weights actually applied to produce `s_hr`.
    pub weights: [f64; 5],
    pub p_id: f64,
    pub ece_id: f64,
    pub n_id: usize,
    pub per_shift: Vec<ShiftResult>,
    pub per_detector_auroc: Vec<DetectorAuroc>,
    pub p_adv: Option<f64>,
    /// Clean accuracy on the attacked subset, when it is known.
    pub p_id_adv_subset: Option<f64>,
    /// Temperature applied to every split before scoring, if any.
    pub temperature: Option<f64>,
    pub ece_bins: usize,
    pub ece_binning: String,
    pub notes: Vec<String>,
}

impl ScoreCard {
    pub fn scores(&self) -> [Option<f64>; 5] {
        [Some(self.s_id), Some(self.s_ds), self.s_adv, Some(self.s_cal), Some(self.s_ood)]
    }

    /// `wᵀs` recomputed from the card's own fields.
    pub fn recompute_hr(&self) -> f64 {
        let s = self.scores().map(|v| v.unwrap_or(0.0));
        dot(&s, &self.weights)
    }
}
