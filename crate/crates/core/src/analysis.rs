//! Cross-model analysis of reliability scores: group-mean centring, Pearson
//! correlation matrices and per-group HR improvements.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// One evaluated model in a [`MetricTable`]. Scores follow the order of
/// [`crate::metrics::SCORE_NAMES`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricRow {
    pub model_id: String,
    pub group: String,
    pub scores: [f64; 5],
    pub s_hr: f64,
}

/// Rows of per-model scores with unique model ids.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricTable {
    rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn new(rows: Vec<MetricRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.model_id.as_str()) {
                return Err(Error::DuplicateModel(r.model_id.clone()));
            }
            if r.scores.iter().chain(core::iter::once(&r.s_hr)).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("metric table scores"));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of score column `metric` (0..5).
    pub fn column(&self, metric: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores[metric]).collect()
    }

    pub fn hr_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.s_hr).collect()
    }

    /// Distinct group labels, sorted.
    pub fn groups(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.group.as_str()).collect();
        set.into_iter().collect()
    }

    /// Sorts rows by model id.
    pub fn sort_by_model_id(&mut self) {
        self.rows.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    }
}

/// Subtracts, within each group, the group mean of every score column
/// (including `s_hr`).
pub fn group_center(table: &MetricTable) -> Result<MetricTable> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut sums: BTreeMap<&str, ([f64; 6], usize)> = BTreeMap::new();
    for r in table.rows() {
        let e = sums.entry(r.group.as_str()).or_insert(([0.0; 6], 0));
        for (acc, v) in e.0.iter_mut().zip(r.scores.iter().chain(core::iter::once(&r.s_hr))) {
            *acc += v;
        }
        e.1 += 1;
    }
    let means: BTreeMap<&str, [f64; 6]> = sums
        .into_iter()
        .map(|(g, (s, n))| (g, s.map(|v| v / n as f64)))
        .collect();
    let rows = table
        .rows()
        .iter()
        .map(|r| {
            let m = &means[r.group.as_str()];
            let mut scores = r.scores;
            for (s, mu) in scores.iter_mut().zip(m) {
                *s -= mu;
            }
            MetricRow {
                model_id: r.model_id.clone(),
                group: r.group.clone(),
                scores,
                s_hr: r.s_hr - m[5],
            }
        })
        .collect();
    Ok(MetricTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Correlation {
    pub r: f64,
    pub r_squared: f64,
}

/// Sample Pearson correlation and its square.
///
/// The `n` vs `n - 1` normalisation cancels, so no choice is made here.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let r = (sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    Ok(Correlation { r, r_squared: r * r })
}

/// Pairwise correlations of the five score columns. `None` marks an
/// undefined entry (a zero-variance column).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CorrelationMatrix {
    pub r: [[Option<f64>; 5]; 5],
    pub r_squared: [[Option<f64>; 5]; 5],
}

/// Correlation matrix over the pooled rows, optionally group-centred first.
pub fn correlation_matrix(table: &MetricTable, centered: bool) -> Result<CorrelationMatrix> {
    let centred_table;
    let table = if centered {
        centred_table = group_center(table)?;
        &centred_table
    } else {
        table
    };
    if table.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let columns: Vec<Vec<f64>> = (0..5).map(|m| table.column(m)).collect();
    let mut r = [[None; 5]; 5];
    let mut r_squared = [[None; 5]; 5];
    for i in 0..5 {
        for j in i..5 {
            let c = match pearson(&columns[i], &columns[j]) {
                Ok(_) if i == j => Some(Correlation { r: 1.0, r_squared: 1.0 }),
                Ok(c) => Some(c),
                Err(Error::ZeroVariance) => None,
                Err(e) => return Err(e),
            };
            if let Some(c) = c {
                r[i][j] = Some(c.r);
                r[j][i] = Some(c.r);
                r_squared[i][j] = Some(c.r_squared);
                r_squared[j][i] = Some(c.r_squared);
            }
        }
    }
    Ok(CorrelationMatrix { r, r_squared })
}

/// Best HR score of a group minus the best HR score of the baseline group.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GroupDelta {
    pub group: String,
    pub delta: f64,
}

fn best_hr_by_group(table: &MetricTable) -> BTreeMap<&str, f64> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in table.rows() {
        let e = best.entry(r.group.as_str()).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.s_hr);
    }
    best
}

/// Per non-baseline group, `max s_hr(group) - max s_hr(baseline)`, sorted by
/// group name.
pub fn hr_improvement(table: &MetricTable, baseline_group: &str) -> Result<Vec<GroupDelta>> {
    let best = best_hr_by_group(table);
    let base = *best
        .get(baseline_group)
        .ok_or_else(|| Error::MissingGroup(baseline_group.into()))?;
    Ok(best
        .iter()
        .filter(|(g, _)| **g != baseline_group)
        .map(|(g, v)| GroupDelta {
            group: String::from(*g),
            delta: v - base,
        })
        .collect())
}

/// HR improvements for several tables (e.g. one per dataset) and their
/// per-group average over the tables that contain the group.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HrImprovement {
    pub per_table: Vec<Vec<GroupDelta>>,
    pub average: Vec<GroupDelta>,
}

pub fn hr_improvement_across(tables: &[MetricTable], baseline_group: &str) -> Result<HrImprovement> {
    if tables.is_empty() {
        return Err(Error::EmptyList);
    }
    let per_table = tables
        .iter()
        .map(|t| hr_improvement(t, baseline_group))
        .collect::<Result<Vec<_>>>()?;
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for deltas in &per_table {
        for d in deltas {
            let e = acc.entry(d.group.as_str()).or_insert((0.0, 0));
            e.0 += d.delta;
            e.1 += 1;
        }
    }
    let average = acc
        .into_iter()
        .map(|(g, (s, n))| GroupDelta {
            group: String::from(g),
            delta: s / n as f64,
        })
        .collect();
    Ok(HrImprovement { per_table, average })
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        (0..=bins)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / bins as f64)
            .collect()
    }
}

/// Histogram of `values` over their own range (a degenerate range is widened
/// by 0.5 on each side).
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram values"));
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let mut counts = alloc::vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[i.min(bins - 1)] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}
