use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One bias-corrected Adam step at step count `t` (starting from 1).
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, t: u64, cfg: &AdamConfig) -> Result<(), NeuralError> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(NeuralError::ShapeMismatch(format!(
            "adam over {n} parameters got {} gradients and {}/{} moments",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(NeuralError::ShapeMismatch("adam step count starts at 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut st = AdamState::new(3);
        adam_update(&mut p, &[0.3, -7.0, 1e-3], &mut st, 1, &AdamConfig::default()).unwrap();
        for (after, (before, g)) in p.iter().zip([(1.0f64, 0.3f64), (-2.0, -7.0), (0.5, 1e-3)]) {
            let step = after - before;
            assert!((step + 0.001 * g.signum()).abs() < 0.01 * 0.001);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        for t in 1..5 {
            adam_update(&mut p, &[0.0, 0.0], &mut st, t, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0]);
        assert!(adam_update(&mut p, &[0.0], &mut st, 1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn descends_a_parabola() {
        let mut theta = [1.0];
        let mut st = AdamState::new(1);
        let cfg = AdamConfig::default();
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let g = [2.0 * theta[0]];
            adam_update(&mut theta, &g, &mut st, t, &cfg).unwrap();
            assert!(theta[0].abs() < prev.abs());
            prev = theta[0];
        }
    }
}
