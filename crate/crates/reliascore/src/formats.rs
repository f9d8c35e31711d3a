//! Readers and writers for every file the engine emits or consumes besides
//! split dumps: JSON documents (toy models, score cards, ensemble specs) and
//! CSV tables (metric tables, correlation matrices, report tables).

use std::fs;
use std::path::Path;

use reliascore_core::analysis::{CorrelationMatrix, GroupDelta, Histogram, HrImprovement, MetricRow, MetricTable};
use reliascore_core::metrics::{ScoreCard, SCORE_NAMES};
use reliascore_core::posthoc::EnsembleSpec;
use reliascore_core::runtime::ToyModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const METRIC_HEADER: [&str; 8] = ["model_id", "group", "s_id", "s_ds", "s_adv", "s_cal", "s_ood", "s_hr"];

/// Marker written for correlations that are undefined.
pub const UNDEFINED: &str = "undefined";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Value(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::write(path, e))
}

pub fn read_toy_model(path: &Path) -> Result<ToyModel> {
    let model: ToyModel = read_json(path)?;
    model.validate().map_err(|e| Error::parse(path, e))?;
    Ok(model)
}

pub fn write_toy_model(path: &Path, model: &ToyModel) -> Result<()> {
    write_json(path, model)
}

pub fn read_scorecard(path: &Path) -> Result<ScoreCard> {
    read_json(path)
}

pub fn write_scorecard(path: &Path, card: &ScoreCard) -> Result<()> {
    write_json(path, card)
}

pub fn read_ensemble_spec(path: &Path) -> Result<EnsembleSpec> {
    read_json(path)
}

pub fn write_ensemble_spec(path: &Path, spec: &EnsembleSpec) -> Result<()> {
    write_json(path, spec)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_write_error(path, e))
}

fn csv_write_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::write(path, io),
        other => Error::Value(format!("{other:?}")),
    }
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::write(path, e))
}

/// Shortest decimal representation that round-trips exactly.
fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricRecord {
    model_id: String,
    group: String,
    s_id: f64,
    s_ds: f64,
    s_adv: f64,
    s_cal: f64,
    s_ood: f64,
    s_hr: f64,
}

pub fn read_metric_table(path: &Path) -> Result<MetricTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let header = reader.headers().map_err(|e| Error::parse(path, e))?;
    if header.iter().ne(METRIC_HEADER) {
        return Err(Error::parse(
            path,
            format!("metric table header must be `{}`", METRIC_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.deserialize::<MetricRecord>() {
        let r = record.map_err(|e| Error::parse(path, e))?;
        rows.push(MetricRow {
            model_id: r.model_id,
            group: r.group,
            scores: [r.s_id, r.s_ds, r.s_adv, r.s_cal, r.s_ood],
            s_hr: r.s_hr,
        });
    }
    MetricTable::new(rows).map_err(|e| Error::parse(path, e))
}

pub fn write_metric_table(path: &Path, table: &MetricTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(METRIC_HEADER).map_err(|e| csv_write_error(path, e))?;
    for row in table.rows() {
        let mut record = vec![row.model_id.clone(), row.group.clone()];
        record.extend(row.scores.iter().map(|&s| num(s)));
        record.push(num(row.s_hr));
        w.write_record(&record).map_err(|e| csv_write_error(path, e))?;
    }
    finish(path, w)
}

fn cell(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| UNDEFINED.to_string())
}

/// Long form: one line per metric pair, `row,col,r,r_squared`.
pub fn write_correlation(path: &Path, matrix: &CorrelationMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["row", "col", "r", "r_squared"])
        .map_err(|e| csv_write_error(path, e))?;
    for i in 0..5 {
        for j in 0..5 {
            w.write_record([
                SCORE_NAMES[i].to_string(),
                SCORE_NAMES[j].to_string(),
                cell(matrix.r[i][j]),
                cell(matrix.r_squared[i][j]),
            ])
            .map_err(|e| csv_write_error(path, e))?;
        }
    }
    finish(path, w)
}

pub fn read_correlation(path: &Path) -> Result<CorrelationMatrix> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut out = CorrelationMatrix {
        r: [[None; 5]; 5],
        r_squared: [[None; 5]; 5],
    };
    let index = |name: &str| {
        SCORE_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::parse(path, format!("unknown metric `{name}`")))
    };
    let value = |s: &str| -> Result<Option<f64>> {
        if s == UNDEFINED {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::parse(path, format!("bad value `{s}`")))
        }
    };
    for record in reader.records() {
        let rec = record.map_err(|e| Error::parse(path, e))?;
        if rec.len() != 4 {
            return Err(Error::parse(path, "expected 4 columns"));
        }
        let (i, j) = (index(&rec[0])?, index(&rec[1])?);
        out.r[i][j] = value(&rec[2])?;
        out.r_squared[i][j] = value(&rec[3])?;
    }
    Ok(out)
}

/// `table,group,delta` rows; the cross-table average uses table `average`.
pub fn write_hr_improvement(path: &Path, report: &HrImprovement) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["table", "group", "delta"])
        .map_err(|e| csv_write_error(path, e))?;
    let mut put = |table: String, deltas: &[GroupDelta]| -> Result<()> {
        for d in deltas {
            w.write_record([table.clone(), d.group.clone(), num(d.delta)])
                .map_err(|e| csv_write_error(path, e))?;
        }
        Ok(())
    };
    for (i, deltas) in report.per_table.iter().enumerate() {
        put(i.to_string(), deltas)?;
    }
    put("average".into(), &report.average)?;
    finish(path, w)
}

/// `metric,bin,lo,hi,count` rows, one per histogram bin.
pub fn write_histograms(path: &Path, histograms: &[(&str, Histogram)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["metric", "bin", "lo", "hi", "count"])
        .map_err(|e| csv_write_error(path, e))?;
    for (name, h) in histograms {
        let edges = h.edges();
        for (b, count) in h.counts.iter().enumerate() {
            w.write_record([
                name.to_string(),
                b.to_string(),
                num(edges[b]),
                num(edges[b + 1]),
                count.to_string(),
            ])
            .map_err(|e| csv_write_error(path, e))?;
        }
    }
    finish(path, w)
}
