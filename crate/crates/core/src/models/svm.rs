//! Soft-margin RBF support vector machine trained by SMO.
//!
//! The solver follows the maximal-violating-pair scheme with second-order
//! working-set selection and keeps the dual gradient up to date, so the
//! stopping rule is the usual `m(α) − M(α) < tol` gap.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// `None` picks `1 / (d · variance of all feature values)`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iterations: usize,
    /// Larger training sets are subsampled uniformly to this many rows.
    pub max_train_rows: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, gamma: None, tol: 1e-3, max_iterations: 10_000_000, max_train_rows: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
}

#[inline]
pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn default_gamma(features: &[Vec<f64>]) -> f64 {
    let d = features.first().map_or(1, Vec::len).max(1);
    let n = (features.len() * d) as f64;
    let mean = features.iter().flatten().sum::<f64>() / n;
    let var = features.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 && var.is_finite() {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors.iter().zip(&self.dual_coef).map(|(sv, c)| c * rbf_kernel(sv, x, self.gamma)).sum::<f64>() + self.bias
    }
}

/// Decision value and label, with zero mapped to +1.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> (f64, i8) {
    let f = model.decision(x);
    (f, if f >= 0.0 { 1 } else { -1 })
}

/// Bounded FIFO cache of kernel rows.
struct KernelCache<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
    diag: Vec<f64>,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = x.len();
        // About 256 MiB of rows.
        let capacity = ((1usize << 25) / n.max(1)).clamp(2, n.max(2));
        let diag = x.iter().map(|v| rbf_kernel(v, v, gamma)).collect();
        KernelCache { x, gamma, rows: vec![None; n], order: VecDeque::new(), capacity, diag }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if self.rows[i].is_none() {
            if self.order.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows[old] = None;
                }
            }
            let xi = &self.x[i];
            self.rows[i] = Some(self.x.iter().map(|xj| rbf_kernel(xi, xj, self.gamma)).collect());
            self.order.push_back(i);
        }
        self.rows[i].as_deref().expect("row just filled")
    }
}

/// Trained model plus the full dual vector, for auditing.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// Rows actually used, after any subsampling.
    pub rows: Vec<usize>,
}

pub fn svm_train(features: &[Vec<f64>], labels: &[i8], cfg: &SvmConfig) -> Result<SvmModel, ModelError> {
    svm_train_detailed(features, labels, cfg).map(|f| f.model)
}

pub fn svm_train_detailed(features: &[Vec<f64>], labels: &[i8], cfg: &SvmConfig) -> Result<SvmFit, ModelError> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(ModelError::InvalidInput(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(ModelError::InvalidInput("SVM labels must be +1 or -1".into()));
    }
    if !(cfg.c > 0.0) || !(cfg.tol > 0.0) {
        return Err(ModelError::InvalidInput("C and tol must be positive".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d || f.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::InvalidInput("feature rows must share a length and be finite".into()));
    }
    let rows: Vec<usize> = if features.len() > cfg.max_train_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, features.len(), cfg.max_train_rows).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..features.len()).collect()
    };
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| features[i].clone()).collect();
    let y: Vec<f64> = rows.iter().map(|&i| f64::from(labels[i])).collect();
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(ModelError::SingleClass);
    }
    let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(&x));
    let (alpha, bias, iterations) = smo(&x, &y, gamma, cfg);
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            dual_coef.push(a * y[i]);
        }
    }
    let model = SvmModel { support_vectors, dual_coef, bias, gamma, c: cfg.c };
    Ok(SvmFit { model, alpha, iterations, rows })
}

fn smo(x: &[Vec<f64>], y: &[f64], gamma: f64, cfg: &SvmConfig) -> (Vec<f64>, f64, usize) {
    let n = x.len();
    let c = cfg.c;
    let mut cache = KernelCache::new(x, gamma);
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα.
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        if i == usize::MAX || gmax - gmin < cfg.tol {
            break;
        }
        let ki = cache.row(i).to_vec();
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let a = (cache.diag[i] + cache.diag[t] - 2.0 * ki[t]).max(TAU);
                let obj = -(b * b) / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break;
        }
        let kj = cache.row(j).to_vec();
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = (cache.diag[i] + cache.diag[j] - 2.0 * ki[j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
        iterations += 1;
    }
    if iterations >= cfg.max_iterations {
        log::warn!("SMO stopped at the iteration cap ({iterations}) before reaching tol");
    }
    // Bias from free vectors, else the midpoint of the feasible interval.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    (alpha, -rho, iterations)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktAudit {
    pub alpha_in_box: bool,
    /// `|Σ α_i y_i|`.
    pub equality_residual: f64,
    /// Points whose margin condition is violated by more than `tol`.
    pub violations: usize,
}

/// Checks the optimality conditions of a fit against its own training rows.
pub fn kkt_audit(fit: &SvmFit, features: &[Vec<f64>], labels: &[i8], tol: f64) -> KktAudit {
    let c = fit.model.c;
    let mut residual = 0.0;
    let mut in_box = true;
    let mut violations = 0;
    for (k, &row) in fit.rows.iter().enumerate() {
        let a = fit.alpha[k];
        let y = f64::from(labels[row]);
        in_box &= (0.0..=c).contains(&a);
        residual += a * y;
        let margin = y * fit.model.decision(&features[row]);
        let bad = if a <= 0.0 {
            margin < 1.0 - tol
        } else if a >= c {
            margin > 1.0 + tol
        } else {
            (margin - 1.0).abs() > tol
        };
        violations += usize::from(bad);
    }
    KktAudit { alpha_in_box: in_box, equality_residual: residual.abs(), violations }
}
