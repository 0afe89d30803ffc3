use super::layers::sigmoid;
use super::NeuralError;

pub const P_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with weight `w` on the positive term, and its
/// gradient with respect to each (unclamped) probability.
pub fn bce_loss(p: &[f64], y: &[u8], class_weight: f64) -> Result<(f64, Vec<f64>), NeuralError> {
    if p.len() != y.len() || p.is_empty() {
        return Err(NeuralError::LengthMismatch { predicted: p.len(), actual: y.len() });
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(P_CLAMP, 1.0 - P_CLAMP);
        let clamped = q != pi;
        if yi == 1 {
            loss -= class_weight * q.ln();
            grad.push(if clamped { 0.0 } else { -class_weight / (q * n) });
        } else {
            loss -= (1.0 - q).ln();
            grad.push(if clamped { 0.0 } else { 1.0 / ((1.0 - q) * n) });
        }
    }
    Ok((loss / n, grad))
}

/// Per-sample loss and its derivative with respect to the logit `z`, where
/// `p = sigmoid(z)`.
///
/// The derivative uses the closed form `w·y·(p−1) + (1−y)·p`, which stays
/// informative when the sigmoid saturates.
pub fn bce_logit(z: f64, y: u8, class_weight: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let q = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        (-class_weight * q.ln(), class_weight * (p - 1.0))
    } else {
        (-(1.0 - q).ln(), p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        let (l, _) = bce_loss(&[0.5], &[1], 1.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = bce_loss(&[1.0, 0.0], &[1, 0], 1.0).unwrap();
        assert!((0.0..=1e-6).contains(&l));
        let (l, _) = bce_loss(&[0.5], &[1], 3.0).unwrap();
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[0.5], &[1, 0], 1.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.05..0.95)).collect();
        let y: Vec<u8> = (0..16).map(|_| rng.random_range(0..2)).collect();
        let (_, g) = bce_loss(&p, &y, 2.5).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[i] += h;
            dn[i] -= h;
            let num = (bce_loss(&up, &y, 2.5).unwrap().0 - bce_loss(&dn, &y, 2.5).unwrap().0) / (2.0 * h);
            assert!((num - g[i]).abs() / num.abs().max(g[i].abs()) < 1e-6, "{num} vs {}", g[i]);
        }
    }

    #[test]
    fn logit_form_agrees_with_probability_form() {
        for &(z, y) in &[(0.3, 1u8), (-2.0, 0), (4.0, 0), (-1.0, 1)] {
            let (l, dz) = bce_logit(z, y, 1.7);
            let p = sigmoid(z);
            let (l2, dp) = bce_loss(&[p], &[y], 1.7).unwrap();
            assert!((l - l2).abs() < 1e-12);
            assert!((dz - dp[0] * p * (1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let p = rng.random_range(0.0..=1.0);
            let y = rng.random_range(0..2);
            assert!(bce_loss(&[p], &[y], rng.random_range(0.1..5.0)).unwrap().0 >= 0.0);
        }
    }
}
