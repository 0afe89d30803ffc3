use super::slope_ratio::ols_slope;
use super::{LabelError, LabelMethod, LabeledWindow};
use crate::series::UniformSeries;

const DIM: usize = 6;

/// Per-window features: mean, population std and OLS slope of OP, then PV.
pub type T2Features = [f64; DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `1e-6 · trace(Σ) / 6`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T2Config {
    pub window_minutes: usize,
    pub percentile_p: f64,
    pub ridge: Ridge,
}

impl Default for T2Config {
    fn default() -> Self {
        T2Config { window_minutes: 60, percentile_p: 90.0, ridge: Ridge::Auto }
    }
}

impl T2Config {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.window_minutes < 2 {
            return Err(LabelError::InvalidConfig("window_minutes must be >= 2".into()));
        }
        if !(self.percentile_p > 0.0 && self.percentile_p < 100.0) {
            return Err(LabelError::InvalidConfig(format!("percentile_p must be in (0, 100), got {}", self.percentile_p)));
        }
        if let Ridge::Fixed(l) = self.ridge {
            if !(l >= 0.0) {
                return Err(LabelError::InvalidConfig("ridge_lambda must be >= 0".into()));
            }
        }
        Ok(())
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn t2_features(op: &[f64], pv: &[f64]) -> T2Features {
    let (op_mean, op_std) = mean_std(op);
    let (pv_mean, pv_std) = mean_std(pv);
    [op_mean, op_std, ols_slope(op).0, pv_mean, pv_std, ols_slope(pv).0]
}

/// Mean and inverse (regularized) covariance of a feature population.
#[derive(Debug, Clone, PartialEq)]
pub struct HotellingModel {
    pub mean: T2Features,
    pub covariance: [[f64; DIM]; DIM],
    pub lambda: f64,
    inverse: [[f64; DIM]; DIM],
}

impl HotellingModel {
    pub fn fit(features: &[T2Features], ridge: Ridge) -> Result<Self, LabelError> {
        let n = features.len();
        if n < DIM + 1 {
            return Err(LabelError::TooFewWindows { needed: DIM + 1, dim: DIM, available: n });
        }
        let mut mean = [0.0; DIM];
        for f in features {
            for k in 0..DIM {
                mean[k] += f[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = [[0.0; DIM]; DIM];
        for f in features {
            for a in 0..DIM {
                for b in 0..=a {
                    cov[a][b] += (f[a] - mean[a]) * (f[b] - mean[b]);
                }
            }
        }
        for a in 0..DIM {
            for b in 0..=a {
                cov[a][b] /= (n - 1) as f64;
                cov[b][a] = cov[a][b];
            }
        }
        let lambda = match ridge {
            Ridge::Auto => 1e-6 * (0..DIM).map(|k| cov[k][k]).sum::<f64>() / DIM as f64,
            Ridge::Fixed(l) => l,
        };
        let mut reg = cov;
        for (k, row) in reg.iter_mut().enumerate() {
            row[k] += lambda;
        }
        let inverse = invert_spd(&reg).ok_or(LabelError::SingularCovariance)?;
        Ok(HotellingModel { mean, covariance: cov, lambda, inverse })
    }

    pub fn score(&self, x: &T2Features) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut s = 0.0;
        for a in 0..DIM {
            for b in 0..DIM {
                s += d[a] * self.inverse[a][b] * d[b];
            }
        }
        s
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, or `None`
/// when a pivot is not safely positive.
fn invert_spd(m: &[[f64; DIM]; DIM]) -> Option<[[f64; DIM]; DIM]> {
    let scale = (0..DIM).map(|k| m[k][k].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut l = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= scale * 1e-14 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut linv = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        linv[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * linv[k][j];
            }
            linv[i][j] = s / l[i][i];
        }
    }
    // Σ⁻¹ = L⁻ᵀ L⁻¹
    let mut inv = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            inv[i][j] = (i.max(j)..DIM).map(|k| linv[k][i] * linv[k][j]).sum();
        }
    }
    Some(inv)
}

/// T² score of every feature vector against the population it belongs to.
pub fn hotelling_t2(features: &[T2Features], ridge: Ridge) -> Result<Vec<f64>, LabelError> {
    let model = HotellingModel::fit(features, ridge)?;
    Ok(features.iter().map(|f| model.score(f)).collect())
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, LabelError> {
    if values.is_empty() {
        return Err(LabelError::EmptyScores);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(LabelError::InvalidConfig(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Labels windows whose score exceeds the `p`-th percentile of all scores.
pub fn t2_threshold_labels(scores: &[f64], cfg: &T2Config) -> Result<Vec<LabeledWindow>, LabelError> {
    cfg.validate()?;
    let threshold = percentile(scores, cfg.percentile_p)?;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &s)| LabeledWindow {
            window_index: i,
            start_minute: i * cfg.window_minutes,
            label: u8::from(s > threshold),
            score: s,
            method: LabelMethod::HotellingT2,
            warmup: false,
        })
        .collect())
}

pub fn t2_labels(series: &UniformSeries, cfg: &T2Config) -> Result<Vec<LabeledWindow>, LabelError> {
    cfg.validate()?;
    let w = cfg.window_minutes;
    let needed = (DIM + 1) * w;
    if series.len() < needed {
        return Err(LabelError::SeriesTooShort { needed, available: series.len() });
    }
    let features: Vec<T2Features> = series.op.chunks_exact(w).zip(series.pv.chunks_exact(w)).map(|(op, pv)| t2_features(op, pv)).collect();
    let scores = hotelling_t2(&features, cfg.ridge)?;
    t2_threshold_labels(&scores, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(seed: u64, n: usize) -> Vec<T2Features> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let mut f = [0.0; DIM];
                for (k, v) in f.iter_mut().enumerate() {
                    *v = a * (k as f64 + 1.0) + rng.random_range(-1.0..1.0) * (k as f64 + 0.5);
                }
                f
            })
            .collect()
    }

    /// Quadratic form by an LU solve instead of an explicit inverse.
    fn oracle_scores(features: &[T2Features], lambda: f64) -> Vec<f64> {
        let n = features.len();
        let x = DMatrix::from_fn(n, DIM, |i, k| features[i][k]);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, DIM, |i, k| x[(i, k)] - mean[k]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0) + DMatrix::identity(DIM, DIM) * lambda;
        let lu = cov.lu();
        (0..n)
            .map(|i| {
                let d = DVector::from_fn(DIM, |k, _| centered[(i, k)]);
                d.dot(&lu.solve(&d).unwrap())
            })
            .collect()
    }

    #[test]
    fn features_of_known_window() {
        let op: Vec<f64> = (0..60).map(|t| 2.0 * t as f64 + 1.0).collect();
        let pv = vec![7.0; 60];
        let f = t2_features(&op, &pv);
        assert!((f[0] - 60.0).abs() < 1e-12);
        // Population std of 2t over t = 0..59 is 2·sqrt((60² - 1)/12).
        assert!((f[1] - 2.0 * ((3600.0f64 - 1.0) / 12.0).sqrt()).abs() < 1e-10);
        assert!((f[2] - 2.0).abs() < 1e-12);
        assert_eq!(&f[3..], &[7.0, 0.0, 0.0]);
    }

    #[test]
    fn scores_match_solve_oracle() {
        for seed in 0..5 {
            let feats = random_features(seed, 200);
            let model = HotellingModel::fit(&feats, Ridge::Auto).unwrap();
            let got = hotelling_t2(&feats, Ridge::Auto).unwrap();
            let want = oracle_scores(&feats, model.lambda);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-8 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn one_dimensional_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<T2Features> = (0..500).map(|_| [1.0, 2.0, rng.random_range(-3.0..3.0), 4.0, 5.0, 6.0]).collect();
        let model = HotellingModel::fit(&feats, Ridge::Auto).unwrap();
        let sigma = model.covariance[2][2].sqrt();
        let mut x = model.mean;
        x[2] += 2.0 * sigma;
        assert!((model.score(&x) - 4.0).abs() < 1e-4);
        assert!(model.score(&model.mean).abs() < 1e-12);
    }

    #[test]
    fn constant_features_without_ridge_are_singular() {
        let feats = vec![[1.0, 1.0, 0.0, 2.0, 0.0, 0.0]; 20];
        assert!(matches!(hotelling_t2(&feats, Ridge::Fixed(0.0)), Err(LabelError::SingularCovariance)));
        assert!(matches!(hotelling_t2(&feats, Ridge::Auto), Err(LabelError::SingularCovariance)));
        assert!(hotelling_t2(&feats, Ridge::Fixed(1e-3)).unwrap().iter().all(|&s| s == 0.0));
        assert!(matches!(hotelling_t2(&feats[..6], Ridge::Auto), Err(LabelError::TooFewWindows { .. })));
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 100.0).unwrap(), 4.0);
        assert!((percentile(&[10.0, 20.0], 90.0).unwrap() - 19.0).abs() < 1e-12);
        assert!(matches!(percentile(&[], 50.0), Err(LabelError::EmptyScores)));
    }

    #[test]
    fn ninetieth_percentile_labels_top_ten() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let labels = t2_threshold_labels(&scores, &T2Config::default()).unwrap();
        assert_eq!(labels.iter().filter(|l| l.label == 1).count(), 10);
        assert!(labels.iter().filter(|l| l.label == 1).all(|l| l.score >= 90.0));

        let cfg = T2Config { percentile_p: 60.0, ..T2Config::default() };
        assert_eq!(t2_threshold_labels(&scores, &cfg).unwrap().iter().filter(|l| l.label == 1).count(), 40);

        let bad = T2Config { percentile_p: 100.0, ..T2Config::default() };
        assert!(matches!(t2_threshold_labels(&scores, &bad), Err(LabelError::InvalidConfig(_))));
    }

    #[test]
    fn labels_from_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 60 * 50;
        let op: Vec<f64> = (0..n).map(|_| 50.0 + rng.random_range(-1.0..1.0)).collect();
        let mut pv: Vec<f64> = (0..n).map(|_| 30.0 + rng.random_range(-1.0..1.0)).collect();
        // One window with a large PV excursion.
        pv[600..660].iter_mut().for_each(|v| *v += 25.0);
        let s = UniformSeries::from_observed(crate::loopsim::default_start(), op, pv).unwrap();
        let labels = t2_labels(&s, &T2Config::default()).unwrap();
        assert_eq!(labels.len(), 50);
        let top = labels.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
        assert_eq!(top.window_index, 10);
        assert_eq!(top.label, 1);
    }

    proptest! {
        #[test]
        fn affine_invariance(seed in 0u64..1000, scales in prop::array::uniform6(0.1f64..10.0), shifts in prop::array::uniform6(-50.0f64..50.0)) {
            let feats = random_features(seed, 60);
            let moved: Vec<T2Features> = feats
                .iter()
                .map(|f| {
                    let mut g = *f;
                    for k in 0..DIM {
                        g[k] = f[k] * scales[k] + shifts[k];
                    }
                    g
                })
                .collect();
            let a = hotelling_t2(&feats, Ridge::Fixed(0.0)).unwrap();
            let b = hotelling_t2(&moved, Ridge::Fixed(0.0)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }

        #[test]
        fn labels_shrink_as_percentile_rises(scores in prop::collection::vec(0.0f64..100.0, 1..200), p1 in 1.0f64..99.0, p2 in 1.0f64..99.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = t2_threshold_labels(&scores, &T2Config { percentile_p: lo, ..T2Config::default() }).unwrap();
            let b = t2_threshold_labels(&scores, &T2Config { percentile_p: hi, ..T2Config::default() }).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x.label >= y.label);
            }
        }

        #[test]
        fn scores_non_negative(seed in 0u64..1000) {
            let scores = hotelling_t2(&random_features(seed, 30), Ridge::Auto).unwrap();
            prop_assert!(scores.iter().all(|&s| s >= -1e-12));
        }
    }
}
