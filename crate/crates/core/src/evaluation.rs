//! Confusion counts, per-class metrics, the detect × lookahead accuracy grid
//! and prediction traces. Stiction (label 1) is the positive class.

use std::fmt::Write as _;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use thiserror::Error;

use crate::labeling::LabeledWindow;
use crate::models::{ModelError, TrainedModel};
use crate::series::{parse_timestamp, UniformSeries, TIMESTAMP_FORMAT};
use crate::windowing::{pair_detect_lookahead, split_normalize, DatasetMode, Sample, WindowDataset, WindowSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {predicted} predictions for {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Malformed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with non-stiction treated as positive.
    pub fn swapped(&self) -> Self {
        ConfusionCounts { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }
}

pub fn confusion(predicted: &[u8], actual: &[u8]) -> Result<ConfusionCounts, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch { predicted: predicted.len(), actual: actual.len() });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == 1, a == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub stiction: ClassMetrics,
    pub non_stiction: ClassMetrics,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    ClassMetrics { precision, recall, f1, support: tp + fn_ }
}

pub fn metrics(counts: &ConfusionCounts) -> MetricReport {
    let c = counts;
    let stiction = class_metrics(c.tp, c.fp, c.fn_);
    let non_stiction = class_metrics(c.tn, c.fn_, c.fp);
    let total = c.total();
    let macro_avg = Averages {
        precision: (stiction.precision + non_stiction.precision) / 2.0,
        recall: (stiction.recall + non_stiction.recall) / 2.0,
        f1: (stiction.f1 + non_stiction.f1) / 2.0,
    };
    let (ws, wn) = (ratio(stiction.support, total), ratio(non_stiction.support, total));
    let weighted_avg = Averages {
        precision: ws * stiction.precision + wn * non_stiction.precision,
        recall: ws * stiction.recall + wn * non_stiction.recall,
        f1: ws * stiction.f1 + wn * non_stiction.f1,
    };
    MetricReport { counts: *c, accuracy: ratio(c.tp + c.tn, total), stiction, non_stiction, macro_avg, weighted_avg }
}

impl MetricReport {
    /// `key: value` lines in a fixed order, reals to 4 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_), ("total", c.total())] {
            let _ = writeln!(s, "{k}: {v}");
        }
        let mut real = |k: &str, v: f64| {
            let _ = writeln!(s, "{k}: {v:.4}");
        };
        real("accuracy", self.accuracy);
        for (name, m) in [("stiction", &self.stiction), ("non_stiction", &self.non_stiction)] {
            real(&format!("{name}.precision"), m.precision);
            real(&format!("{name}.recall"), m.recall);
            real(&format!("{name}.f1"), m.f1);
        }
        for (name, a) in [("macro_avg", &self.macro_avg), ("weighted_avg", &self.weighted_avg)] {
            real(&format!("{name}.precision"), a.precision);
            real(&format!("{name}.recall"), a.recall);
            real(&format!("{name}.f1"), a.f1);
        }
        let _ = writeln!(s, "stiction.support: {}", self.stiction.support);
        let _ = writeln!(s, "non_stiction.support: {}", self.non_stiction.support);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub window_index: usize,
    pub start_timestamp: NaiveDateTime,
    pub actual: u8,
    pub predicted: u8,
    pub probability: f64,
}

/// Writes `window_index,start_timestamp,actual,predicted,probability`.
pub fn export_trace<W: Write>(rows: &[TraceRow], writer: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["window_index", "start_timestamp", "actual", "predicted", "probability"])?;
    for r in rows {
        out.write_record([
            r.window_index.to_string(),
            r.start_timestamp.format(TIMESTAMP_FORMAT).to_string(),
            r.actual.to_string(),
            r.predicted.to_string(),
            r.probability.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["window_index", "start_timestamp", "actual", "predicted", "probability"] {
        return Err(EvalError::Malformed(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| EvalError::Malformed(format!("bad {what} at line {line}"));
        let bit = |v: &str, what: &str| match v {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad(what)),
        };
        rows.push(TraceRow {
            window_index: rec[0].parse().map_err(|_| bad("window_index"))?,
            start_timestamp: parse_timestamp(&rec[1]).ok_or_else(|| bad("start_timestamp"))?,
            actual: bit(&rec[2], "actual")?,
            predicted: bit(&rec[3], "predicted")?,
            probability: rec[4].parse().map_err(|_| bad("probability"))?,
        });
    }
    Ok(rows)
}

pub fn trace_confusion(rows: &[TraceRow]) -> Result<ConfusionCounts, EvalError> {
    let p: Vec<u8> = rows.iter().map(|r| r.predicted).collect();
    let a: Vec<u8> = rows.iter().map(|r| r.actual).collect();
    confusion(&p, &a)
}

/// Classifies the test split of `dataset` and returns its trace.
pub fn evaluate_test_split(model: &TrainedModel, dataset: &WindowDataset) -> Result<Vec<TraceRow>, ModelError> {
    evaluate_samples(model, dataset, dataset.test())
}

/// Classifies `samples` (drawn from `dataset`) and returns their trace.
pub fn evaluate_samples(model: &TrainedModel, dataset: &WindowDataset, samples: &[Sample]) -> Result<Vec<TraceRow>, ModelError> {
    let preds = model.classify_all(samples)?;
    Ok(samples
        .iter()
        .zip(preds)
        .map(|(s, (probability, predicted))| TraceRow {
            window_index: s.window_index,
            start_timestamp: dataset.timestamp(s.origin),
            actual: s.label,
            predicted,
            probability,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapCell {
    pub accuracy: f64,
    pub seed: u64,
    pub epochs: usize,
    pub test_samples: usize,
}

/// Test accuracy for every (D, K) in 1..=4; `Err` cells record why a cell is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub cells: Vec<Vec<Result<HeatmapCell, String>>>,
}

pub const GRID: usize = 4;

pub fn cell_seed(seed: u64, d: usize, k: usize) -> u64 {
    seed + 16 * d as u64 + k as u64
}

/// Builds pairs, splits, trains and scores one model per (D, K) cell.
///
/// Cells run in parallel; each uses its own seed `seed + 16·D + K`, so the
/// grid does not depend on scheduling.
pub fn heatmap<T>(series: &UniformSeries, labels: &[LabeledWindow], base: WindowSpec, seed: u64, train: T) -> HeatmapGrid
where
    T: Fn(&WindowDataset, u64) -> Result<TrainedModel, ModelError> + Sync,
{
    let coords: Vec<(usize, usize)> = (1..=GRID).flat_map(|d| (1..=GRID).map(move |k| (d, k))).collect();
    let results: Vec<Result<HeatmapCell, String>> = coords
        .par_iter()
        .map(|&(d, k)| {
            let spec = WindowSpec { detect_windows_d: d, lookahead_windows_k: k, ..base };
            let s = cell_seed(seed, d, k);
            let samples = pair_detect_lookahead(series, labels, &spec).map_err(|e| e.to_string())?;
            let ds = split_normalize(samples, spec, DatasetMode::Predict, series.t0).map_err(|e| e.to_string())?;
            let model = train(&ds, s).map_err(|e| e.to_string())?;
            let trace = evaluate_test_split(&model, &ds).map_err(|e| e.to_string())?;
            let acc = metrics(&trace_confusion(&trace).map_err(|e| e.to_string())?).accuracy;
            Ok(HeatmapCell { accuracy: acc, seed: s, epochs: model.history().epochs.len(), test_samples: trace.len() })
        })
        .collect();
    let mut cells: Vec<Vec<_>> = (0..GRID).map(|_| Vec::with_capacity(GRID)).collect();
    for ((d, _), r) in coords.into_iter().zip(results) {
        cells[d - 1].push(r);
    }
    HeatmapGrid { cells }
}

impl HeatmapGrid {
    pub fn get(&self, d: usize, k: usize) -> Option<&HeatmapCell> {
        self.cells.get(d - 1)?.get(k - 1)?.as_ref().ok()
    }

    /// Rows are detect windows, columns lookahead windows; absent cells are `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("detect");
        for k in 1..=GRID {
            let _ = write!(s, ",k{k}");
        }
        s.push('\n');
        for (d, row) in self.cells.iter().enumerate() {
            let _ = write!(s, "{}", d + 1);
            for cell in row {
                match cell {
                    Ok(c) => {
                        let _ = write!(s, ",{:.4}", c.accuracy);
                    }
                    Err(_) => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Per-cell seeds, epochs and failure reasons.
    pub fn metadata(&self) -> String {
        let mut s = String::from("detect,lookahead,seed,epochs,test_samples,status\n");
        for (d, row) in self.cells.iter().enumerate() {
            for (k, cell) in row.iter().enumerate() {
                match cell {
                    Ok(c) => {
                        let _ = writeln!(s, "{},{},{},{},{},ok", d + 1, k + 1, c.seed, c.epochs, c.test_samples);
                    }
                    Err(e) => {
                        let _ = writeln!(s, "{},{},,,,\"{}\"", d + 1, k + 1, e.replace('"', "'"));
                    }
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LSTM: ConfusionCounts = ConfusionCounts { tp: 282_240, fn_: 0, tn: 106_560, fp: 136_800 };
    const CNN: ConfusionCounts = ConfusionCounts { tp: 282_240, fn_: 0, tn: 47_520, fp: 195_840 };

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap(), ConfusionCounts { tp: 2, tn: 2, fp: 0, fn_: 0 });
        assert_eq!(confusion(&[1, 1], &[1, 0]).unwrap(), ConfusionCounts { tp: 1, fp: 1, tn: 0, fn_: 0 });
        assert!(matches!(confusion(&[1], &[1, 0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn table_fixed_points() {
        let m = metrics(&LSTM);
        assert!((m.accuracy - 0.7397).abs() < 5e-5);
        assert!((m.stiction.precision - 282_240.0 / 419_040.0).abs() < 1e-15);
        assert!((m.non_stiction.recall - 106_560.0 / 243_360.0).abs() < 1e-15);
        assert_eq!((m.stiction.support, m.non_stiction.support), (282_240, 243_360));
        let m = metrics(&CNN);
        assert!((m.accuracy - 0.6274).abs() < 5e-5);
        assert!((m.stiction.precision - 0.5904).abs() < 5e-5);
    }

    #[test]
    fn perfect_and_degenerate_counts() {
        let m = metrics(&ConfusionCounts { tp: 5, tn: 3, fp: 0, fn_: 0 });
        for v in [m.accuracy, m.stiction.f1, m.non_stiction.f1, m.macro_avg.f1, m.weighted_avg.precision] {
            assert_eq!(v, 1.0);
        }
        let m = metrics(&ConfusionCounts { tp: 0, tn: 4, fp: 0, fn_: 0 });
        assert_eq!((m.stiction.precision, m.stiction.recall, m.stiction.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identities() {
        for c in [LSTM, CNN, ConfusionCounts { tp: 7, fp: 3, tn: 11, fn_: 5 }] {
            let m = metrics(&c);
            assert!((m.weighted_avg.recall - m.accuracy).abs() < 1e-12);
            let s = metrics(&c.swapped());
            assert_eq!(s.stiction, m.non_stiction);
            assert_eq!(s.non_stiction, m.stiction);
            assert_eq!(s.accuracy, m.accuracy);
            for cm in [m.stiction, m.non_stiction] {
                if cm.precision > 0.0 && cm.recall > 0.0 {
                    assert!(cm.f1 <= cm.precision.max(cm.recall) + 1e-15 && cm.f1 >= cm.precision.min(cm.recall) - 1e-15);
                }
            }
        }
    }

    #[test]
    fn report_text_is_stable() {
        let text = metrics(&LSTM).to_text();
        assert!(text.starts_with("tp: 282240\nfp: 136800\ntn: 106560\nfn: 0\ntotal: 525600\naccuracy: 0.7397\n"));
        assert!(text.contains("stiction.precision: 0.6735\n"));
        assert!(text.contains("non_stiction.recall: 0.4379\n"));
        assert!(text.ends_with("non_stiction.support: 243360\n"));
    }

    #[test]
    fn trace_round_trip() {
        let t0 = crate::loopsim::default_start();
        let rows: Vec<TraceRow> = (0..10)
            .map(|i| TraceRow {
                window_index: i,
                start_timestamp: t0 + chrono::Duration::hours(i as i64),
                actual: (i % 2) as u8,
                predicted: (i % 3 == 0) as u8,
                probability: i as f64 / 9.7,
            })
            .collect();
        let mut buf = Vec::new();
        export_trace(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("window_index,start_timestamp,actual,predicted,probability\n0,2024-01-01T00:00:00,0,1,0\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn heatmap_csv_marks_absent_cells() {
        let ok = |a: f64| Ok(HeatmapCell { accuracy: a, seed: 1, epochs: 2, test_samples: 3 });
        let mut cells: Vec<Vec<Result<HeatmapCell, String>>> = (0..4).map(|_| (0..4).map(|_| ok(0.5)).collect()).collect();
        cells[3][3] = Err("series too short".into());
        let g = HeatmapGrid { cells };
        let csv = g.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "detect,k1,k2,k3,k4");
        assert_eq!(csv.lines().nth(4).unwrap(), "4,0.5000,0.5000,0.5000,NA");
        assert!(g.get(4, 4).is_none() && g.get(1, 1).is_some());
        assert_eq!(cell_seed(10, 2, 3), 10 + 32 + 3);
    }
}
