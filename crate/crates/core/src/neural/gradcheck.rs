use super::{Example, Network, NeuralError};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between the analytic batch gradient and central
/// differences with the given step, over every parameter.
pub fn finite_diff_grad_check<E: Example>(network: &Network, batch: &[E], class_weight: f64, step: f64) -> Result<f64, NeuralError> {
    let refs: Vec<&E> = batch.iter().collect();
    let (_, analytic) = network.loss_and_grad(&refs, class_weight)?;
    let base = network.params_flat();
    let mut probe = network.clone();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe.set_params_flat(&params)?;
        let up = probe.mean_loss(batch, class_weight)?;
        params[i] = base[i] - step;
        probe.set_params_flat(&params)?;
        let down = probe.mean_loss(batch, class_weight)?;
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
