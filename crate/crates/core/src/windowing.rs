//! Model-ready samples from a labeled series.
//!
//! Each base window is decimated to `L` rows of `(PV, OP)`. Detection samples
//! carry their own window's label; early-prediction samples concatenate `D`
//! windows and are labeled positive when any of the following `K` windows is.

use std::io::{self, Read, Write};

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

use crate::labeling::LabeledWindow;
use crate::series::UniformSeries;
use crate::tensor::Tensor2;

pub const PV: usize = 0;
pub const OP: usize = 1;
const MAGIC: &[u8; 4] = b"SGW1";

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("label {index} starts at minute {start}, expected {expected}")]
    LabelMisalignment { index: usize, start: usize, expected: usize },
    #[error("series too short: need {needed} windows, have {available}")]
    SeriesTooShort { needed: usize, available: usize },
    #[error("need at least 5 samples to split, have {0}")]
    TooFewSamples(usize),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub base_minutes: usize,
    pub stride_minutes: usize,
    pub model_len_l: usize,
    pub detect_windows_d: usize,
    pub lookahead_windows_k: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { base_minutes: 60, stride_minutes: 60, model_len_l: 24, detect_windows_d: 1, lookahead_windows_k: 1 }
    }
}

impl WindowSpec {
    pub fn with_pair(d: usize, k: usize) -> Self {
        WindowSpec { detect_windows_d: d, lookahead_windows_k: k, ..WindowSpec::default() }
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        let bad = |m: String| Err(WindowError::InvalidSpec(m));
        if self.base_minutes != self.stride_minutes {
            return bad(format!("stride {} must equal base {}", self.stride_minutes, self.base_minutes));
        }
        if self.model_len_l < 2 || self.model_len_l > self.base_minutes {
            return bad(format!("model_len_l {} must be in 2..={}", self.model_len_l, self.base_minutes));
        }
        if !(1..=4).contains(&self.detect_windows_d) {
            return bad(format!("detect windows {} outside 1..=4", self.detect_windows_d));
        }
        if !(1..=4).contains(&self.lookahead_windows_k) {
            return bad(format!("lookahead windows {} outside 1..=4", self.lookahead_windows_k));
        }
        Ok(())
    }

    /// Rows of one sample's input.
    pub fn input_rows(&self) -> usize {
        self.detect_windows_d * self.model_len_l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    Detect,
    Predict,
}

impl DatasetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetMode::Detect => "detect",
            DatasetMode::Predict => "predict",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(D·L) × 2`, columns `(PV, OP)`.
    pub input: Tensor2,
    pub label: u8,
    /// First minute of the detect span.
    pub origin: usize,
    /// Index of the first detect window.
    pub window_index: usize,
}

/// Row indices `round(i·(W−1)/(l−1))`, always keeping both endpoints.
pub fn decimate_indices(w: usize, l: usize) -> Vec<usize> {
    assert!(l >= 2 && l <= w, "need 2 <= l <= w");
    (0..l).map(|i| ((i * (w - 1)) as f64 / (l - 1) as f64).round() as usize).collect()
}

pub fn decimate_window(pv: &[f64], op: &[f64], l: usize) -> Tensor2 {
    assert_eq!(pv.len(), op.len());
    let mut out = Tensor2::zeros(l, 2);
    for (r, idx) in decimate_indices(pv.len(), l).into_iter().enumerate() {
        out.set(r, PV, pv[idx]);
        out.set(r, OP, op[idx]);
    }
    out
}

fn check_alignment(labels: &[LabeledWindow], spec: &WindowSpec) -> Result<(), WindowError> {
    for (i, w) in labels.iter().enumerate() {
        let expected = i * spec.stride_minutes;
        if w.window_index != i || w.start_minute != expected {
            return Err(WindowError::LabelMisalignment { index: i, start: w.start_minute, expected });
        }
    }
    Ok(())
}

fn decimated_windows(series: &UniformSeries, count: usize, spec: &WindowSpec) -> Vec<Tensor2> {
    (0..count)
        .map(|i| {
            let span = i * spec.base_minutes..(i + 1) * spec.base_minutes;
            decimate_window(&series.pv[span.clone()], &series.op[span], spec.model_len_l)
        })
        .collect()
}

/// Usable window count: labeled windows that fit entirely inside the series.
fn window_count(series: &UniformSeries, labels: &[LabeledWindow], spec: &WindowSpec) -> usize {
    labels.len().min(series.len() / spec.base_minutes)
}

/// One sample per labeled window, input = that window alone.
pub fn segment_detection_samples(series: &UniformSeries, labels: &[LabeledWindow], spec: &WindowSpec) -> Result<Vec<Sample>, WindowError> {
    spec.validate()?;
    check_alignment(labels, spec)?;
    let n = window_count(series, labels, spec);
    Ok(decimated_windows(series, n, spec)
        .into_iter()
        .enumerate()
        .map(|(i, input)| Sample { input, label: labels[i].label, origin: i * spec.base_minutes, window_index: i })
        .collect())
}

/// Labels of every detect/lookahead pair: position `i` looks ahead at
/// windows `i+D .. i+D+K`.
pub fn lookahead_labels(window_labels: &[u8], d: usize, k: usize) -> Vec<u8> {
    if window_labels.len() < d + k {
        return Vec::new();
    }
    (0..=window_labels.len() - d - k).map(|i| u8::from(window_labels[i + d..i + d + k].contains(&1))).collect()
}

/// Detect/lookahead pairs stepping one base window at a time.
pub fn pair_detect_lookahead(series: &UniformSeries, labels: &[LabeledWindow], spec: &WindowSpec) -> Result<Vec<Sample>, WindowError> {
    spec.validate()?;
    check_alignment(labels, spec)?;
    let (d, k) = (spec.detect_windows_d, spec.lookahead_windows_k);
    let n = window_count(series, labels, spec);
    if n < d + k {
        return Err(WindowError::SeriesTooShort { needed: d + k, available: n });
    }
    let windows = decimated_windows(series, n, spec);
    let flags: Vec<u8> = labels[..n].iter().map(|w| w.label).collect();
    Ok(lookahead_labels(&flags, d, k)
        .into_iter()
        .enumerate()
        .map(|(i, label)| Sample {
            input: Tensor2::vstack(&windows[i..i + d]).expect("windows share a column count"),
            label,
            origin: i * spec.base_minutes,
            window_index: i,
        })
        .collect())
}

/// Per-channel z-score statistics fitted on the training block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Normalization {
    const ZERO_STD: f64 = 1e-12;

    pub fn fit(samples: &[Sample]) -> Self {
        let mut sum = [0.0; 2];
        let mut count = 0usize;
        for s in samples {
            for r in 0..s.input.rows() {
                sum[0] += s.input.get(r, 0);
                sum[1] += s.input.get(r, 1);
            }
            count += s.input.rows();
        }
        let n = count.max(1) as f64;
        let mean = [sum[0] / n, sum[1] / n];
        let mut ss = [0.0; 2];
        for s in samples {
            for r in 0..s.input.rows() {
                for c in 0..2 {
                    ss[c] += (s.input.get(r, c) - mean[c]).powi(2);
                }
            }
        }
        Normalization { mean, std: [(ss[0] / n).sqrt(), (ss[1] / n).sqrt()] }
    }

    pub fn apply(&self, input: &mut Tensor2) {
        for r in 0..input.rows() {
            for c in 0..2 {
                let mut v = input.get(r, c) - self.mean[c];
                // A constant channel is only shifted.
                if self.std[c] > Self::ZERO_STD {
                    v /= self.std[c];
                }
                input.set(r, c, v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub spec: WindowSpec,
    pub mode: DatasetMode,
    /// Timestamp of minute 0, for reporting sample origins.
    pub t0: NaiveDateTime,
    pub samples: Vec<Sample>,
    pub train_end: usize,
    pub val_end: usize,
    pub normalization: Normalization,
}

/// Chronological 60:20:20 split, normalized with training-block statistics.
pub fn split_normalize(
    mut samples: Vec<Sample>,
    spec: WindowSpec,
    mode: DatasetMode,
    t0: NaiveDateTime,
) -> Result<WindowDataset, WindowError> {
    let n = samples.len();
    if n < 5 {
        return Err(WindowError::TooFewSamples(n));
    }
    let train_end = (n as f64 * 0.6).round() as usize;
    let val_end = (n as f64 * 0.8).round() as usize;
    let normalization = Normalization::fit(&samples[..train_end]);
    for s in &mut samples {
        normalization.apply(&mut s.input);
    }
    Ok(WindowDataset { spec, mode, t0, samples, train_end, val_end, normalization })
}

impl WindowDataset {
    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.train_end]
    }

    pub fn val(&self) -> &[Sample] {
        &self.samples[self.train_end..self.val_end]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[self.val_end..]
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.samples.first().map_or((self.spec.input_rows(), 2), |s| s.input.shape())
    }

    pub fn timestamp(&self, minute: usize) -> NaiveDateTime {
        self.t0 + chrono::Duration::minutes(minute as i64)
    }

    /// Writes the `SGW1` container: a fixed header followed by one record per sample.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), WindowError> {
        w.write_all(MAGIC)?;
        let mode = match self.mode {
            DatasetMode::Detect => 0u64,
            DatasetMode::Predict => 1,
        };
        let (rows, _) = self.input_shape();
        for v in [
            mode,
            self.spec.base_minutes as u64,
            self.spec.model_len_l as u64,
            self.spec.detect_windows_d as u64,
            self.spec.lookahead_windows_k as u64,
            rows as u64,
            self.samples.len() as u64,
            self.train_end as u64,
            self.val_end as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.t0.and_utc().timestamp().to_le_bytes())?;
        for v in self.normalization.mean.iter().chain(&self.normalization.std) {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in &self.samples {
            w.write_all(&(s.window_index as u64).to_le_bytes())?;
            w.write_all(&(s.origin as u64).to_le_bytes())?;
            w.write_all(&[s.label])?;
            for v in s.input.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, WindowError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(WindowError::Malformed("missing SGW1 magic".into()));
        }
        let mut u64s = [0u64; 9];
        for v in &mut u64s {
            *v = read_u64(&mut r)?;
        }
        let [mode, base, l, d, k, rows, count, train_end, val_end] = u64s.map(|v| v as usize);
        let mode = match mode {
            0 => DatasetMode::Detect,
            1 => DatasetMode::Predict,
            m => return Err(WindowError::Malformed(format!("unknown mode {m}"))),
        };
        let spec = WindowSpec { base_minutes: base, stride_minutes: base, model_len_l: l, detect_windows_d: d, lookahead_windows_k: k };
        spec.validate()?;
        if train_end > val_end || val_end > count || rows > 1 << 20 {
            return Err(WindowError::Malformed("inconsistent header".into()));
        }
        let t0 = DateTime::from_timestamp(read_u64(&mut r)? as i64, 0)
            .ok_or_else(|| WindowError::Malformed("bad origin timestamp".into()))?
            .naive_utc();
        let mut stats = [0.0; 4];
        for v in &mut stats {
            *v = read_f64(&mut r)?;
        }
        let normalization = Normalization { mean: [stats[0], stats[1]], std: [stats[2], stats[3]] };
        let mut samples = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let window_index = read_u64(&mut r)? as usize;
            let origin = read_u64(&mut r)? as usize;
            let mut label = [0u8];
            r.read_exact(&mut label)?;
            if label[0] > 1 {
                return Err(WindowError::Malformed(format!("label {} not in {{0, 1}}", label[0])));
            }
            let mut data = vec![0.0; rows * 2];
            for v in &mut data {
                *v = read_f64(&mut r)?;
            }
            let input = Tensor2::from_vec(rows, 2, data).expect("sized from header");
            if !input.is_finite() {
                return Err(WindowError::Malformed("non-finite input value".into()));
            }
            samples.push(Sample { input, label: label[0], origin, window_index });
        }
        Ok(WindowDataset { spec, mode, t0, samples, train_end, val_end, normalization })
    }
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    read_u64(r).map(f64::from_bits)
}
