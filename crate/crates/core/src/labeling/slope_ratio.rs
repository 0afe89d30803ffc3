use super::{LabelError, LabelMethod, LabeledWindow};
use crate::series::UniformSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeRatioConfig {
    pub window_minutes: usize,
    pub n_consecutive: usize,
    /// PV slopes smaller than this in magnitude give a ratio of 0.
    pub pv_slope_epsilon: f64,
}

impl Default for SlopeRatioConfig {
    fn default() -> Self {
        SlopeRatioConfig { window_minutes: 60, n_consecutive: 24, pv_slope_epsilon: 1e-9 }
    }
}

impl SlopeRatioConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.window_minutes < 2 {
            return Err(LabelError::InvalidConfig("window_minutes must be >= 2".into()));
        }
        if self.n_consecutive < 1 {
            return Err(LabelError::InvalidConfig("n_consecutive must be >= 1".into()));
        }
        if !(self.pv_slope_epsilon >= 0.0) {
            return Err(LabelError::InvalidConfig("pv_slope_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Straight-line fits of OP and PV over one window, plus their slope ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRegression {
    pub m_pv: f64,
    pub b_pv: f64,
    pub m_op: f64,
    pub b_op: f64,
    pub r: f64,
}

/// Least-squares line `y ≈ m·t + b` over `t = 0..len`, returned as `(m, b)`.
///
/// Uses centered sums, so large offsets in `y` do not cost precision.
pub fn ols_slope(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    assert!(n >= 2, "regression needs at least two points");
    let t_mean = (n - 1) as f64 / 2.0;
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, &v) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let m = sxy / sxx;
    (m, y_mean - m * t_mean)
}

/// Fits every complete, non-overlapping window; a trailing partial window is dropped.
pub fn slope_ratio_windows(series: &UniformSeries, cfg: &SlopeRatioConfig) -> Result<Vec<WindowRegression>, LabelError> {
    cfg.validate()?;
    let w = cfg.window_minutes;
    if series.len() < w {
        return Err(LabelError::SeriesTooShort { needed: w, available: series.len() });
    }
    Ok(series
        .op
        .chunks_exact(w)
        .zip(series.pv.chunks_exact(w))
        .map(|(op, pv)| {
            let (m_op, b_op) = ols_slope(op);
            let (m_pv, b_pv) = ols_slope(pv);
            let r = if m_pv.abs() < cfg.pv_slope_epsilon { 0.0 } else { m_op / m_pv };
            WindowRegression { m_pv, b_pv, m_op, b_op, r }
        })
        .collect())
}

/// Trailing mean of the slope ratio over windows `i-n+1 ..= i`.
pub fn stiction_index_beta(regressions: &[WindowRegression], n: usize, i: usize) -> Result<f64, LabelError> {
    if n == 0 {
        return Err(LabelError::InvalidConfig("n must be >= 1".into()));
    }
    if i + 1 < n || i >= regressions.len() {
        return Err(LabelError::InsufficientHistory { index: i, needed: n, available: (i + 1).min(regressions.len()) });
    }
    Ok(regressions[i + 1 - n..=i].iter().map(|w| w.r).sum::<f64>() / n as f64)
}

/// Labels each window 1 when its trailing β is strictly positive.
///
/// The first `n-1` windows average over the history available so far and are
/// flagged as warm-up.
pub fn slope_ratio_labels(series: &UniformSeries, cfg: &SlopeRatioConfig) -> Result<Vec<LabeledWindow>, LabelError> {
    cfg.validate()?;
    let needed = cfg.n_consecutive * cfg.window_minutes;
    if series.len() < needed {
        return Err(LabelError::SeriesTooShort { needed, available: series.len() });
    }
    let regressions = slope_ratio_windows(series, cfg)?;
    let n = cfg.n_consecutive;
    let labels = (0..regressions.len())
        .map(|i| {
            let warmup = i + 1 < n;
            let beta = if warmup {
                regressions[..=i].iter().map(|w| w.r).sum::<f64>() / (i + 1) as f64
            } else {
                stiction_index_beta(&regressions, n, i).expect("index has full history")
            };
            LabeledWindow {
                window_index: i,
                start_minute: i * cfg.window_minutes,
                label: u8::from(beta > 0.0),
                score: beta,
                method: LabelMethod::SlopeRatio,
                warmup,
            }
        })
        .collect();
    Ok(labels)
}
