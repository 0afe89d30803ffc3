//! Automatic stiction labels for fixed-length OP/PV windows.
//!
//! Two labelers are provided: the slope-ratio index ([`slope_ratio_labels`])
//! and a Hotelling T² anomaly score thresholded at a percentile
//! ([`t2_labels`]). Both emit [`LabeledWindow`] records that tile the series
//! with a stride equal to the window length.

mod hotelling;
mod slope_ratio;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::series::{parse_timestamp, TIMESTAMP_FORMAT};

pub use hotelling::{hotelling_t2, percentile, t2_features, t2_labels, t2_threshold_labels, HotellingModel, Ridge, T2Config, T2Features};
pub use slope_ratio::{ols_slope, slope_ratio_labels, slope_ratio_windows, stiction_index_beta, SlopeRatioConfig, WindowRegression};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("series too short: need {needed} minutes, have {available}")]
    SeriesTooShort { needed: usize, available: usize },
    #[error("window {index} has only {available} preceding windows, index needs {needed}")]
    InsufficientHistory { index: usize, needed: usize, available: usize },
    #[error("covariance matrix is singular; increase ridge_lambda")]
    SingularCovariance,
    #[error("need at least {needed} windows for a {dim}-feature covariance, have {available}")]
    TooFewWindows { needed: usize, dim: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty score list")]
    EmptyScores,
    #[error("malformed label table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for LabelError {
    fn from(err: csv::Error) -> Self {
        LabelError::Malformed(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelMethod {
    SlopeRatio,
    HotellingT2,
    GroundTruth,
}

impl LabelMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMethod::SlopeRatio => "slope_ratio",
            LabelMethod::HotellingT2 => "hotelling_t2",
            LabelMethod::GroundTruth => "ground_truth",
        }
    }
}

impl fmt::Display for LabelMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMethod {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slope_ratio" => Ok(LabelMethod::SlopeRatio),
            "hotelling_t2" | "t2" => Ok(LabelMethod::HotellingT2),
            "ground_truth" => Ok(LabelMethod::GroundTruth),
            other => Err(LabelError::Malformed(format!("unknown label method {other:?}"))),
        }
    }
}

/// One labeled window. `score` holds β for slope-ratio labels, the T² value
/// for Hotelling labels and the flagged fraction for ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window_index: usize,
    pub start_minute: usize,
    pub label: u8,
    pub score: f64,
    pub method: LabelMethod,
    /// β computed from fewer than `n` windows.
    pub warmup: bool,
}

/// Window labels from per-minute ground-truth flags: a window is labeled
/// stiction when at least half of its minutes are flagged.
pub fn ground_truth_labels(flags: &[bool], window_minutes: usize) -> Vec<LabeledWindow> {
    flags
        .chunks_exact(window_minutes.max(1))
        .enumerate()
        .map(|(i, chunk)| {
            let frac = chunk.iter().filter(|&&f| f).count() as f64 / chunk.len() as f64;
            LabeledWindow {
                window_index: i,
                start_minute: i * window_minutes,
                label: u8::from(frac >= 0.5),
                score: frac,
                method: LabelMethod::GroundTruth,
                warmup: false,
            }
        })
        .collect()
}

/// Writes `window_index,start_timestamp,score,label,method,warmup`.
pub fn write_labels<W: Write>(labels: &[LabeledWindow], t0: NaiveDateTime, writer: W) -> Result<(), LabelError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["window_index", "start_timestamp", "score", "label", "method", "warmup"])?;
    for w in labels {
        let ts = t0 + chrono::Duration::minutes(w.start_minute as i64);
        out.write_record([
            w.window_index.to_string(),
            ts.format(TIMESTAMP_FORMAT).to_string(),
            w.score.to_string(),
            w.label.to_string(),
            w.method.as_str().to_string(),
            u8::from(w.warmup).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a label table; start minutes are measured from the series origin `t0`.
pub fn read_labels<R: Read>(reader: R, t0: NaiveDateTime) -> Result<Vec<LabeledWindow>, LabelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut labels = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let bad = |what: &str| LabelError::Malformed(format!("bad {what} at line {line}"));
        let get = |i: usize| record.get(i).ok_or_else(|| bad("row"));
        let window_index = get(0)?.parse().map_err(|_| bad("window_index"))?;
        let ts = parse_timestamp(get(1)?).ok_or_else(|| bad("start_timestamp"))?;
        let offset = (ts - t0).num_minutes();
        if offset < 0 {
            return Err(bad("start_timestamp (before series start)"));
        }
        let score = get(2)?.parse().map_err(|_| bad("score"))?;
        let label = match get(3)? {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("label")),
        };
        let method = get(4)?.parse()?;
        let warmup = matches!(get(5)?, "1" | "true");
        labels.push(LabeledWindow { window_index, start_minute: offset as usize, label, score, method, warmup });
    }
    Ok(labels)
}

/// Writes per-minute simulator truth as `timestamp,ground_truth` (0 or 1).
pub fn write_ground_truth<W: Write>(flags: &[bool], t0: NaiveDateTime, writer: W) -> Result<(), LabelError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["timestamp", "ground_truth"])?;
    for (i, &f) in flags.iter().enumerate() {
        let ts = t0 + chrono::Duration::minutes(i as i64);
        out.write_record([ts.format(TIMESTAMP_FORMAT).to_string(), u8::from(f).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `timestamp,ground_truth` table on a gap-free one-minute axis.
pub fn read_ground_truth<R: Read>(reader: R) -> Result<(NaiveDateTime, Vec<bool>), LabelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut t0 = None;
    let mut flags = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let bad = |what: &str| LabelError::Malformed(format!("bad {what} at line {line}"));
        let ts = record.get(0).and_then(parse_timestamp).ok_or_else(|| bad("timestamp"))?;
        let start = *t0.get_or_insert(ts);
        if (ts - start).num_minutes() != flags.len() as i64 {
            return Err(bad("timestamp (not a gap-free one-minute axis)"));
        }
        flags.push(match record.get(1) {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad("ground_truth")),
        });
    }
    t0.map(|t| (t, flags)).ok_or_else(|| LabelError::Malformed("ground truth table has no rows".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_round_trip() {
        let t0 = crate::loopsim::default_start();
        let flags = vec![false, true, true, false, true];
        let mut buf = Vec::new();
        write_ground_truth(&flags, t0, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("timestamp,ground_truth\n2024-01-01T00:00:00,0\n"));
        assert_eq!(read_ground_truth(buf.as_slice()).unwrap(), (t0, flags));
        let gap = "timestamp,ground_truth\n2024-01-01T00:00:00,0\n2024-01-01T00:02:00,1\n";
        assert!(matches!(read_ground_truth(gap.as_bytes()), Err(LabelError::Malformed(_))));
    }

    #[test]
    fn label_table_round_trip() {
        let t0 = crate::loopsim::default_start();
        let labels = vec![
            LabeledWindow { window_index: 0, start_minute: 0, label: 1, score: 0.25, method: LabelMethod::SlopeRatio, warmup: true },
            LabeledWindow { window_index: 1, start_minute: 60, label: 0, score: -1e-3, method: LabelMethod::SlopeRatio, warmup: false },
        ];
        let mut buf = Vec::new();
        write_labels(&labels, t0, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("window_index,start_timestamp,score,label,method,warmup\n0,2024-01-01T00:00:00,0.25,1,slope_ratio,1\n"));
        assert_eq!(read_labels(buf.as_slice(), t0).unwrap(), labels);
    }

    #[test]
    fn ground_truth_majority_rule() {
        let mut flags = vec![false; 180];
        flags[60..90].iter_mut().for_each(|f| *f = true);
        flags[120..170].iter_mut().for_each(|f| *f = true);
        let labels = ground_truth_labels(&flags, 60);
        assert_eq!(labels.iter().map(|l| l.label).collect::<Vec<_>>(), vec![0, 1, 1]);
    }
}
