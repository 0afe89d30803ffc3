use super::layers::sigmoid;
use super::NeuralError;
use crate::tensor::Tensor2;

/// Gate blocks in the stacked weight matrices, in this order.
pub const FORGET: usize = 0;
pub const INPUT: usize = 1;
pub const OUTPUT: usize = 2;
pub const CANDIDATE: usize = 3;

/// Borrowed LSTM weights: `w` is `4H × C`, `u` is `4H × H`, `b` is `4H`,
/// each split into gate blocks of `H` rows.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub inputs: usize,
    pub hidden: usize,
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

impl<'a> LstmWeights<'a> {
    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        4 * hidden * (inputs + hidden + 1)
    }

    /// Splits a flat parameter vector laid out `w`, `u`, `b`.
    pub fn from_flat(inputs: usize, hidden: usize, params: &'a [f64]) -> Result<Self, NeuralError> {
        if params.len() != Self::param_count(inputs, hidden) {
            return Err(NeuralError::ShapeMismatch(format!(
                "lstm({inputs}->{hidden}) needs {} parameters, got {}",
                Self::param_count(inputs, hidden),
                params.len()
            )));
        }
        let (w, rest) = params.split_at(4 * hidden * inputs);
        let (u, b) = rest.split_at(4 * hidden * hidden);
        Ok(LstmWeights { inputs, hidden, w, u, b })
    }
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Gate activations `[f, i, o, g]`, each `H` long.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn step_with_cache(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmWeights) -> (Vec<f64>, Vec<f64>, StepCache) {
    let (n_in, h) = (p.inputs, p.hidden);
    let mut gates = vec![0.0; 4 * h];
    for (r, g) in gates.iter_mut().enumerate() {
        let mut z = p.b[r];
        z += p.w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        z += p.u[r * h..(r + 1) * h].iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        *g = if r / h == CANDIDATE { z.tanh() } else { sigmoid(z) };
    }
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut h_new = vec![0.0; h];
    for k in 0..h {
        let (f, i, o, g) = (gates[FORGET * h + k], gates[INPUT * h + k], gates[OUTPUT * h + k], gates[CANDIDATE * h + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h_new[k] = o * tanh_c[k];
    }
    let cache = StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, tanh_c };
    (h_new, c, cache)
}

fn check_step_shapes(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmWeights) -> Result<(), NeuralError> {
    if x.len() != p.inputs || h_prev.len() != p.hidden || c_prev.len() != p.hidden {
        return Err(NeuralError::ShapeMismatch(format!(
            "lstm step got x={}, h={}, c={} for {}->{}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.inputs,
            p.hidden
        )));
    }
    Ok(())
}

/// One LSTM update, returning `(h_t, c_t)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmWeights) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    check_step_shapes(x, h_prev, c_prev, p)?;
    let (h, c, _) = step_with_cache(x, h_prev, c_prev, p);
    Ok((h, c))
}

/// Runs the sequence from zero state; returns `T × H` or a `1 × H` final state.
pub fn lstm_sequence(inputs: &Tensor2, p: &LstmWeights, return_sequence: bool) -> Result<Tensor2, NeuralError> {
    Ok(lstm_forward(inputs, p, return_sequence)?.0)
}

pub(crate) fn lstm_forward(inputs: &Tensor2, p: &LstmWeights, return_sequence: bool) -> Result<(Tensor2, Vec<StepCache>), NeuralError> {
    let (t_len, c) = inputs.shape();
    if t_len == 0 || c != p.inputs {
        return Err(NeuralError::ShapeMismatch(format!("lstm input {t_len}x{c}, expected Tx{}", p.inputs)));
    }
    let mut h = vec![0.0; p.hidden];
    let mut cell = vec![0.0; p.hidden];
    let mut caches = Vec::with_capacity(t_len);
    let mut seq = Tensor2::zeros(if return_sequence { t_len } else { 1 }, p.hidden);
    for t in 0..t_len {
        let (h_new, c_new, cache) = step_with_cache(inputs.row(t), &h, &cell, p);
        if return_sequence {
            seq.row_mut(t).copy_from_slice(&h_new);
        }
        h = h_new;
        cell = c_new;
        caches.push(cache);
    }
    if !return_sequence {
        seq.row_mut(0).copy_from_slice(&h);
    }
    Ok((seq, caches))
}

/// Backpropagation through time. `dy` is `T × H` for sequence output or
/// `1 × H` for final-state output. Gradients accumulate into `grad`, laid out
/// like the flat parameters.
pub(crate) fn lstm_backward(caches: &[StepCache], p: &LstmWeights, dy: &Tensor2, return_sequence: bool, grad: &mut [f64]) -> Tensor2 {
    let (n_in, h) = (p.inputs, p.hidden);
    let t_len = caches.len();
    let (gw, rest) = grad.split_at_mut(4 * h * n_in);
    let (gu, gb) = rest.split_at_mut(4 * h * h);
    let mut dx = Tensor2::zeros(t_len, n_in);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..t_len).rev() {
        let cache = &caches[t];
        let g = &cache.gates;
        for k in 0..h {
            let mut dh = dh_next[k];
            if return_sequence {
                dh += dy.get(t, k);
            } else if t == t_len - 1 {
                dh += dy.get(0, k);
            }
            let (f, i, o, cand) = (g[FORGET * h + k], g[INPUT * h + k], g[OUTPUT * h + k], g[CANDIDATE * h + k]);
            let tc = cache.tanh_c[k];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dz[FORGET * h + k] = dc * cache.c_prev[k] * f * (1.0 - f);
            dz[INPUT * h + k] = dc * cand * i * (1.0 - i);
            dz[OUTPUT * h + k] = dh * tc * o * (1.0 - o);
            dz[CANDIDATE * h + k] = dc * i * (1.0 - cand * cand);
            dc_next[k] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dxr = dx.row_mut(t);
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[r] += d;
            let wr = &p.w[r * n_in..(r + 1) * n_in];
            let gwr = &mut gw[r * n_in..(r + 1) * n_in];
            for j in 0..n_in {
                gwr[j] += d * cache.x[j];
                dxr[j] += d * wr[j];
            }
            let ur = &p.u[r * h..(r + 1) * h];
            let gur = &mut gu[r * h..(r + 1) * h];
            for j in 0..h {
                gur[j] += d * cache.h_prev[j];
                dh_next[j] += d * ur[j];
            }
        }
    }
    dx
}
