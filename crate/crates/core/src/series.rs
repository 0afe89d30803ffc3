//! Historian export ingestion and per-minute alignment of OP/PV signals.
//!
//! Raw exports are delimited `timestamp,value` tables. They are parsed into
//! [`RawSeries`], then projected onto a uniform one-minute axis where missing
//! minutes carry the last observation forward. Minutes before a signal's
//! first observation take that first observation (backward fill), which can
//! only happen at the head of the axis.

use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDateTime, Timelike};
use thiserror::Error;

/// ISO-8601 rendering used by every table this crate writes.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Accepted timestamp layouts, tried in order. Slash dates are day-first.
const ACCEPTED_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%d/%m/%Y %H:%M:%S%.f",
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
];

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("input contains no valid rows")]
    EmptyInput,
    #[error("no row had a parseable timestamp (first failure at line {line}: {text:?})")]
    UnparseableTimestamp { line: u64, text: String },
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error("table axis is not a gap-free one-minute grid at line {line}")]
    NonUniformAxis { line: u64 },
    #[error("op and pv columns differ in length ({op} vs {pv})")]
    LengthMismatch { op: usize, pv: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for SeriesError {
    fn from(err: csv::Error) -> Self {
        SeriesError::Malformed(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalKind {
    Op,
    Pv,
}

impl SignalKind {
    pub fn default_unit(self) -> &'static str {
        match self {
            SignalKind::Op => "percent",
            SignalKind::Pv => "engineering unit",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalKind::Op => f.write_str("OP"),
            SignalKind::Pv => f.write_str("PV"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub timestamp: NaiveDateTime,
    pub value: f64,
}

/// A row that was skipped during parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseDiagnostic {
    UnparseableTimestamp { line: u64, text: String },
    NonNumericValue { line: u64, text: String },
    MissingField { line: u64 },
}

/// Parsed historian export for one signal: sorted, minute-truncated and
/// free of duplicate minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub kind: SignalKind,
    pub unit: String,
    pub points: Vec<RawPoint>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl RawSeries {
    /// Builds a series from in-memory points, applying the same
    /// truncate/sort/keep-last normalization as [`parse_raw`].
    pub fn from_points(kind: SignalKind, points: Vec<RawPoint>) -> Self {
        RawSeries { kind, unit: kind.default_unit().to_string(), points: normalize_points(points), diagnostics: Vec::new() }
    }

    pub fn first_timestamp(&self) -> Option<NaiveDateTime> {
        self.points.first().map(|p| p.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<NaiveDateTime> {
        self.points.last().map(|p| p.timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FillKind {
    Observed,
    ForwardFilled,
    BackwardFilled,
}

impl FillKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FillKind::Observed => "observed",
            FillKind::ForwardFilled => "forward_filled",
            FillKind::BackwardFilled => "backward_filled",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "observed" => Some(FillKind::Observed),
            "forward_filled" => Some(FillKind::ForwardFilled),
            "backward_filled" => Some(FillKind::BackwardFilled),
            _ => None,
        }
    }
}

/// Gap-free per-minute OP/PV record set. Sample `i` sits at `t0 + i` minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub t0: NaiveDateTime,
    pub op: Vec<f64>,
    pub pv: Vec<f64>,
    pub op_fill: Vec<FillKind>,
    pub pv_fill: Vec<FillKind>,
}

impl UniformSeries {
    /// Wraps fully observed signals; lengths must agree.
    pub fn from_observed(t0: NaiveDateTime, op: Vec<f64>, pv: Vec<f64>) -> Result<Self, SeriesError> {
        if op.len() != pv.len() {
            return Err(SeriesError::LengthMismatch { op: op.len(), pv: pv.len() });
        }
        if op.is_empty() {
            return Err(SeriesError::EmptyInput);
        }
        let n = op.len();
        Ok(UniformSeries { t0: truncate_to_minute(t0), op, pv, op_fill: vec![FillKind::Observed; n], pv_fill: vec![FillKind::Observed; n] })
    }

    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op.is_empty()
    }

    pub fn timestamp(&self, minute: usize) -> NaiveDateTime {
        self.t0 + Duration::minutes(minute as i64)
    }

    /// Copy of minutes `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> UniformSeries {
        UniformSeries {
            t0: self.timestamp(start),
            op: self.op[start..end].to_vec(),
            pv: self.pv[start..end].to_vec(),
            op_fill: self.op_fill[start..end].to_vec(),
            pv_fill: self.pv_fill[start..end].to_vec(),
        }
    }

    /// Writes the canonical unified table `timestamp,op,pv,op_fill,pv_fill`.
    ///
    /// Values use the shortest representation that parses back to the same
    /// `f64`, so a write/read cycle is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SeriesError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["timestamp", "op", "pv", "op_fill", "pv_fill"])?;
        for i in 0..self.len() {
            out.write_record([
                self.timestamp(i).format(TIMESTAMP_FORMAT).to_string(),
                self.op[i].to_string(),
                self.pv[i].to_string(),
                self.op_fill[i].as_str().to_string(),
                self.pv_fill[i].as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes one signal as a two-column `timestamp,value` export, the shape
    /// [`parse_raw`] accepts.
    pub fn write_signal<W: Write>(&self, kind: SignalKind, writer: W) -> Result<(), SeriesError> {
        let values = match kind {
            SignalKind::Op => &self.op,
            SignalKind::Pv => &self.pv,
        };
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["timestamp", "value"])?;
        for (i, v) in values.iter().enumerate() {
            out.write_record([self.timestamp(i).format(TIMESTAMP_FORMAT).to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a canonical unified table, checking the axis is a contiguous
    /// one-minute grid.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SeriesError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| SeriesError::Malformed(format!("missing column `{name}`")))
        };
        let (ts_col, op_col, pv_col) = (col("timestamp")?, col("op")?, col("pv")?);
        let op_fill_col = headers.iter().position(|h| h == "op_fill");
        let pv_fill_col = headers.iter().position(|h| h == "pv_fill");

        let mut t0 = None;
        let mut series =
            UniformSeries { t0: NaiveDateTime::default(), op: Vec::new(), pv: Vec::new(), op_fill: Vec::new(), pv_fill: Vec::new() };
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = idx as u64 + 2;
            let field = |c: usize| record.get(c).ok_or(SeriesError::Malformed(format!("short row at line {line}")));
            let ts = parse_timestamp(field(ts_col)?).ok_or_else(|| SeriesError::Malformed(format!("bad timestamp at line {line}")))?;
            let start = *t0.get_or_insert(ts);
            if ts != start + Duration::minutes(idx as i64) {
                return Err(SeriesError::NonUniformAxis { line });
            }
            let number = |c: usize| -> Result<f64, SeriesError> {
                let text = field(c)?;
                text.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SeriesError::Malformed(format!("bad value {text:?} at line {line}")))
            };
            let fill = |c: Option<usize>| -> Result<FillKind, SeriesError> {
                match c {
                    None => Ok(FillKind::Observed),
                    Some(c) => FillKind::parse(field(c)?).ok_or_else(|| SeriesError::Malformed(format!("bad fill flag at line {line}"))),
                }
            };
            series.op.push(number(op_col)?);
            series.pv.push(number(pv_col)?);
            series.op_fill.push(fill(op_fill_col)?);
            series.pv_fill.push(fill(pv_fill_col)?);
        }
        series.t0 = t0.ok_or(SeriesError::EmptyInput)?;
        Ok(series)
    }
}

/// Parses one timestamp in any accepted layout, truncated to the minute.
///
/// RFC 3339 stamps with an offset keep their wall-clock reading; no timezone
/// conversion is performed.
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    let parsed = ACCEPTED_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .or_else(|| DateTime::parse_from_rfc3339(text).ok().map(|dt| dt.naive_local()))
        .or_else(|| {
            let stripped = text.strip_suffix('Z')?;
            ACCEPTED_FORMATS.iter().find_map(|fmt| NaiveDateTime::parse_from_str(stripped, fmt).ok())
        })?;
    Some(truncate_to_minute(parsed))
}

fn truncate_to_minute(ts: NaiveDateTime) -> NaiveDateTime {
    ts.with_second(0).and_then(|t| t.with_nanosecond(0)).unwrap_or(ts)
}

/// Stable sort by minute, then keep the last occurrence of each minute.
fn normalize_points(points: Vec<RawPoint>) -> Vec<RawPoint> {
    let mut points: Vec<RawPoint> =
        points.into_iter().map(|p| RawPoint { timestamp: truncate_to_minute(p.timestamp), value: p.value }).collect();
    points.sort_by_key(|p| p.timestamp);
    let mut out: Vec<RawPoint> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(last) if last.timestamp == p.timestamp => *last = p,
            _ => out.push(p),
        }
    }
    out
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else if header.contains(',') {
        b','
    } else if header.contains(';') {
        b';'
    } else {
        b','
    }
}

/// Parses a delimited `timestamp,value` export (comma or tab, header row
/// required). Bad rows are skipped and reported in `diagnostics`.
pub fn parse_raw<R: Read>(mut source: R, kind: SignalKind) -> Result<RawSeries, SeriesError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut rdr =
        csv::ReaderBuilder::new().delimiter(detect_delimiter(&text)).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)));
    let ts_col = find(&["timestamp", "time", "datetime"]).unwrap_or(0);
    let value_col = find(&["value", "op", "pv"]).unwrap_or(if ts_col == 0 { 1 } else { 0 });

    let mut points = Vec::new();
    let mut diagnostics = Vec::new();
    let mut rows = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows += 1;
        let (Some(ts_text), Some(value_text)) = (record.get(ts_col), record.get(value_col)) else {
            diagnostics.push(ParseDiagnostic::MissingField { line });
            continue;
        };
        let Some(timestamp) = parse_timestamp(ts_text) else {
            diagnostics.push(ParseDiagnostic::UnparseableTimestamp { line, text: ts_text.to_string() });
            continue;
        };
        match value_text.parse::<f64>() {
            Ok(value) if value.is_finite() => points.push(RawPoint { timestamp, value }),
            _ => diagnostics.push(ParseDiagnostic::NonNumericValue { line, text: value_text.to_string() }),
        }
    }

    if points.is_empty() {
        let all_timestamps = rows > 0 && diagnostics.iter().all(|d| matches!(d, ParseDiagnostic::UnparseableTimestamp { .. }));
        if all_timestamps {
            if let Some(ParseDiagnostic::UnparseableTimestamp { line, text }) = diagnostics.first() {
                return Err(SeriesError::UnparseableTimestamp { line: *line, text: text.clone() });
            }
        }
        return Err(SeriesError::EmptyInput);
    }

    Ok(RawSeries { kind, unit: kind.default_unit().to_string(), points: normalize_points(points), diagnostics })
}

fn minutes_between(from: NaiveDateTime, to: NaiveDateTime) -> i64 {
    (to - from).num_minutes()
}

/// Projects `raw` onto the axis `start, start + 1 min, ..., start + (len-1) min`.
///
/// Observed minutes keep their value, later gaps carry the previous value
/// forward and minutes before the first observation take the first value.
/// Observations outside the axis are ignored.
pub fn resample_onto(raw: &RawSeries, start: NaiveDateTime, len: usize) -> Result<(Vec<f64>, Vec<FillKind>), SeriesError> {
    let first = raw.points.first().ok_or(SeriesError::EmptyInput)?;
    let mut values = vec![first.value; len];
    let mut mask = vec![FillKind::BackwardFilled; len];

    let mut cursor = raw.points.iter().peekable();
    let mut current: Option<f64> = None;
    for j in 0..len {
        while let Some(p) = cursor.peek() {
            let offset = minutes_between(start, p.timestamp);
            if offset < j as i64 {
                // Observation before this slot (or before the axis): becomes the carried value.
                current = Some(p.value);
                cursor.next();
            } else {
                break;
            }
        }
        match cursor.peek() {
            Some(p) if minutes_between(start, p.timestamp) == j as i64 => {
                values[j] = p.value;
                mask[j] = FillKind::Observed;
                current = Some(p.value);
                cursor.next();
            }
            _ => {
                if let Some(v) = current {
                    values[j] = v;
                    mask[j] = FillKind::ForwardFilled;
                }
            }
        }
    }
    Ok((values, mask))
}

/// Resamples one signal onto its own one-minute axis `[t_min, t_max]`.
pub fn resample_fill(raw: &RawSeries) -> Result<(Vec<f64>, Vec<FillKind>), SeriesError> {
    let (first, last) = match (raw.first_timestamp(), raw.last_timestamp()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SeriesError::EmptyInput),
    };
    let len = minutes_between(first, last) as usize + 1;
    resample_onto(raw, first, len)
}

/// Aligns OP and PV on the union of their time ranges.
pub fn merge_op_pv(op: &RawSeries, pv: &RawSeries) -> Result<UniformSeries, SeriesError> {
    let bounds = |s: &RawSeries| match (s.first_timestamp(), s.last_timestamp()) {
        (Some(f), Some(l)) => Ok((f, l)),
        _ => Err(SeriesError::EmptyInput),
    };
    let (op_first, op_last) = bounds(op)?;
    let (pv_first, pv_last) = bounds(pv)?;
    let t0 = op_first.min(pv_first);
    let t_end = op_last.max(pv_last);
    let len = minutes_between(t0, t_end) as usize + 1;
    let (op_values, op_fill) = resample_onto(op, t0, len)?;
    let (pv_values, pv_fill) = resample_onto(pv, t0, len)?;
    Ok(UniformSeries { t0, op: op_values, pv: pv_values, op_fill, pv_fill })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn at(minute: i64) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(minute)
    }

    fn raw(kind: SignalKind, pts: &[(i64, f64)]) -> RawSeries {
        RawSeries::from_points(kind, pts.iter().map(|&(m, v)| RawPoint { timestamp: at(m), value: v }).collect())
    }

    #[test]
    fn signal_exports_merge_back_to_the_table() {
        let pts: Vec<(i64, f64)> = (0..30).map(|m| (m, 40.0 + (m as f64 * 0.37).sin())).collect();
        let table = merge_op_pv(&raw(SignalKind::Op, &pts), &raw(SignalKind::Pv, &pts)).unwrap();
        let (mut op, mut pv) = (Vec::new(), Vec::new());
        table.write_signal(SignalKind::Op, &mut op).unwrap();
        table.write_signal(SignalKind::Pv, &mut pv).unwrap();
        let again =
            merge_op_pv(&parse_raw(op.as_slice(), SignalKind::Op).unwrap(), &parse_raw(pv.as_slice(), SignalKind::Pv).unwrap()).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        table.write_csv(&mut a).unwrap();
        again.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parses_two_rows_and_keeps_gap() {
        let text = "timestamp,value\n2024-01-01 00:00, 50.0\n2024-01-01 00:02, 51.0\n";
        let s = parse_raw(text.as_bytes(), SignalKind::Op).unwrap();
        assert_eq!(s.points.len(), 2);
        assert_eq!(minutes_between(s.points[0].timestamp, s.points[1].timestamp), 2);
        assert_eq!(s.points[1].value, 51.0);
    }

    #[test]
    fn duplicate_minutes_keep_last() {
        let text = "timestamp,value\n2024-01-01 00:00,1.0\n2024-01-01 00:00,2.0\n";
        let s = parse_raw(text.as_bytes(), SignalKind::Pv).unwrap();
        assert_eq!(s.points, vec![RawPoint { timestamp: at(0), value: 2.0 }]);
    }

    #[test]
    fn mixed_formats_sort_chronologically() {
        let text = "timestamp\tvalue\n\
            01/01/2024 00:07\t7\n\
            2024-01-01T00:03:00\t3\n\
            02/01/2024 00:00\t1440\n\
            2024-01-01 00:00\t0\n\
            01/01/2024 00:05:30\t5\n\
            2024-01-01T00:01:59.9\t1\n\
            2024-01-01T00:09Z\t9\n\
            01/01/2024 00:02\t2\n\
            2024-01-01 00:04:00\t4\n\
            2024-01-01T00:08:00+02:00\t8\n";
        let s = parse_raw(text.as_bytes(), SignalKind::Op).unwrap();
        // Hand-sorted expectation; 02/01 is 2 January (day-first).
        let expected: Vec<(i64, f64)> =
            vec![(0, 0.), (1, 1.), (2, 2.), (3, 3.), (4, 4.), (5, 5.), (7, 7.), (8, 8.), (9, 9.), (1440, 1440.)];
        let got: Vec<(i64, f64)> = s.points.iter().map(|p| (minutes_between(at(0), p.timestamp), p.value)).collect();
        assert_eq!(got, expected);
        assert!(s.diagnostics.is_empty());
    }

    #[test]
    fn bad_rows_become_diagnostics() {
        let text = "timestamp,value\nnot a date,1\n2024-01-01 00:00,abc\n2024-01-01 00:01,NaN\n2024-01-01 00:02,3\n";
        let s = parse_raw(text.as_bytes(), SignalKind::Op).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.diagnostics.len(), 3);
        assert!(matches!(s.diagnostics[0], ParseDiagnostic::UnparseableTimestamp { line: 2, .. }));
        assert!(matches!(s.diagnostics[1], ParseDiagnostic::NonNumericValue { line: 3, .. }));
    }

    #[test]
    fn all_bad_timestamps_is_fatal() {
        let text = "timestamp,value\nyesterday,1\ntomorrow,2\n";
        let err = parse_raw(text.as_bytes(), SignalKind::Op).unwrap_err();
        assert!(matches!(err, SeriesError::UnparseableTimestamp { line: 2, .. }));
        let err = parse_raw("timestamp,value\n".as_bytes(), SignalKind::Op).unwrap_err();
        assert!(matches!(err, SeriesError::EmptyInput));
    }

    #[test]
    fn forward_fill_interior_gap() {
        let (v, m) = resample_fill(&raw(SignalKind::Op, &[(0, 10.0), (2, 12.0)])).unwrap();
        assert_eq!(v, vec![10.0, 10.0, 12.0]);
        assert_eq!(m, vec![FillKind::Observed, FillKind::ForwardFilled, FillKind::Observed]);
    }

    #[test]
    fn dense_input_is_identity() {
        let pts: Vec<(i64, f64)> = (0..50).map(|i| (i, (i as f64).sin())).collect();
        let (v, m) = resample_fill(&raw(SignalKind::Pv, &pts)).unwrap();
        assert_eq!(v, pts.iter().map(|p| p.1).collect::<Vec<_>>());
        assert!(m.iter().all(|&k| k == FillKind::Observed));
    }

    #[test]
    fn leading_gap_is_backward_filled() {
        let r = raw(SignalKind::Pv, &[(3, 7.0), (4, 8.0)]);
        let (v, m) = resample_onto(&r, at(0), 6).unwrap();
        assert_eq!(v, vec![7.0, 7.0, 7.0, 7.0, 8.0, 8.0]);
        assert_eq!(&m[..3], &[FillKind::BackwardFilled; 3]);
        assert_eq!(m[3], FillKind::Observed);
        assert_eq!(m[5], FillKind::ForwardFilled);
    }

    #[test]
    fn merge_spans_union() {
        let op = raw(SignalKind::Op, &(0..=5).map(|i| (i, i as f64)).collect::<Vec<_>>());
        let pv = raw(SignalKind::Pv, &(2..=7).map(|i| (i, 10.0 + i as f64)).collect::<Vec<_>>());
        let u = merge_op_pv(&op, &pv).unwrap();
        assert_eq!(u.len(), 8);
        assert_eq!(u.t0, at(0));
        assert_eq!(u.op[7], 5.0);
        assert_eq!(u.op_fill[7], FillKind::ForwardFilled);
        assert_eq!(u.pv[0], 12.0);
        assert_eq!(u.pv_fill[1], FillKind::BackwardFilled);
    }

    #[test]
    fn merge_identical_dense_axes() {
        let pts: Vec<(i64, f64)> = (0..30).map(|i| (i, i as f64 * 0.5)).collect();
        let u = merge_op_pv(&raw(SignalKind::Op, &pts), &raw(SignalKind::Pv, &pts)).unwrap();
        assert_eq!(u.len(), 30);
        assert!(u.op_fill.iter().chain(&u.pv_fill).all(|&k| k == FillKind::Observed));
    }

    #[test]
    fn one_year_feed_has_525600_minutes() {
        let year = 365 * 24 * 60;
        let pts: Vec<RawPoint> = (0..year).step_by(7).map(|m| RawPoint { timestamp: at(m), value: m as f64 }).collect();
        let mut last = pts.clone();
        last.push(RawPoint { timestamp: at(year - 1), value: 0.0 });
        let u = merge_op_pv(&RawSeries::from_points(SignalKind::Op, last), &RawSeries::from_points(SignalKind::Pv, pts)).unwrap();
        assert_eq!(u.len(), 525_600);
    }

    #[test]
    fn canonical_table_round_trip() {
        let op = raw(SignalKind::Op, &[(0, 0.1), (3, 1.0 / 3.0)]);
        let pv = raw(SignalKind::Pv, &[(1, -2.5e-12), (2, 1e300)]);
        let u = merge_op_pv(&op, &pv).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,op,pv,op_fill,pv_fill\n2024-01-01T00:00:00,"));
        assert_eq!(UniformSeries::read_csv(buf.as_slice()).unwrap(), u);
    }

    #[test]
    fn read_rejects_gapped_axis() {
        let text = "timestamp,op,pv\n2024-01-01T00:00:00,1,2\n2024-01-01T00:02:00,1,2\n";
        assert!(matches!(UniformSeries::read_csv(text.as_bytes()), Err(SeriesError::NonUniformAxis { line: 3 })));
    }

    proptest! {
        #[test]
        fn filled_values_come_from_allowed_sources(
            values in prop::collection::vec(-1e3f64..1e3, 2..200),
            keep in prop::collection::vec(any::<bool>(), 200),
        ) {
            let pts: Vec<(i64, f64)> = values.iter().enumerate()
                .filter(|(i, _)| keep[*i] || *i == values.len() - 1)
                .map(|(i, &v)| (i as i64, v)).collect();
            let r = raw(SignalKind::Op, &pts);
            let (out, mask) = resample_onto(&r, at(0), values.len()).unwrap();
            prop_assert_eq!(out.len(), values.len());
            let first = pts[0];
            let mut last_seen: Option<f64> = None;
            for j in 0..values.len() {
                if let Some(&(_, v)) = pts.iter().find(|p| p.0 == j as i64) {
                    prop_assert_eq!(out[j].to_bits(), v.to_bits());
                    prop_assert_eq!(mask[j], FillKind::Observed);
                    last_seen = Some(v);
                } else if let Some(v) = last_seen {
                    prop_assert_eq!(out[j].to_bits(), v.to_bits());
                    prop_assert_eq!(mask[j], FillKind::ForwardFilled);
                } else {
                    prop_assert!((j as i64) < first.0);
                    prop_assert_eq!(out[j].to_bits(), first.1.to_bits());
                    prop_assert_eq!(mask[j], FillKind::BackwardFilled);
                }
            }
            // Backward-filled flags form a prefix.
            let n_back = mask.iter().take_while(|&&k| k == FillKind::BackwardFilled).count();
            prop_assert!(mask[n_back..].iter().all(|&k| k != FillKind::BackwardFilled));
        }
    }
}
