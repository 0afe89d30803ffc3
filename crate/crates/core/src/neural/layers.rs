use super::{Activation, NeuralError};
use crate::tensor::Tensor2;

pub const KERNEL: usize = 3;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-500.0, 500.0)).exp())
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub(crate) fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::None => x,
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid(x),
    }
}

/// Derivative of the activation written in terms of its output.
pub(crate) fn activation_grad(a: Activation, out: f64) -> f64 {
    match a {
        Activation::None => 1.0,
        Activation::Relu => {
            if out > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => out * (1.0 - out),
    }
}

/// Same-padded width-3 cross-correlation along time.
///
/// `kernels` is laid out `[filter][tap][channel]`; the result is the
/// pre-activation `T × F` map.
pub fn conv1d_apply(input: &Tensor2, kernels: &[f64], bias: &[f64]) -> Result<Tensor2, NeuralError> {
    let (t_len, c) = input.shape();
    let f = bias.len();
    if kernels.len() != f * KERNEL * c {
        return Err(NeuralError::ShapeMismatch(format!("conv1d kernels hold {} values, expected {f}x{KERNEL}x{c}", kernels.len())));
    }
    if t_len == 0 {
        return Err(NeuralError::ShapeMismatch("conv1d input has no time steps".into()));
    }
    let mut out = Tensor2::zeros(t_len, f);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for (fi, o) in row.iter_mut().enumerate() {
            let mut acc = bias[fi];
            for k in 0..KERNEL {
                let Some(ti) = (t + k).checked_sub(1).filter(|&ti| ti < t_len) else { continue };
                let w = &kernels[(fi * KERNEL + k) * c..(fi * KERNEL + k + 1) * c];
                acc += w.iter().zip(input.row(ti)).map(|(a, b)| a * b).sum::<f64>();
            }
            *o = acc;
        }
    }
    Ok(out)
}

/// Accumulates kernel and bias gradients and returns the input gradient.
pub(crate) fn conv1d_backward(input: &Tensor2, kernels: &[f64], dz: &Tensor2, dkernels: &mut [f64], dbias: &mut [f64]) -> Tensor2 {
    let (t_len, c) = input.shape();
    let f = dz.cols();
    let mut dx = Tensor2::zeros(t_len, c);
    for t in 0..t_len {
        for fi in 0..f {
            let g = dz.get(t, fi);
            if g == 0.0 {
                continue;
            }
            dbias[fi] += g;
            for k in 0..KERNEL {
                let Some(ti) = (t + k).checked_sub(1).filter(|&ti| ti < t_len) else { continue };
                let base = (fi * KERNEL + k) * c;
                let x = input.row(ti);
                for ci in 0..c {
                    dkernels[base + ci] += g * x[ci];
                }
                let dxr = dx.row_mut(ti);
                for ci in 0..c {
                    dxr[ci] += g * kernels[base + ci];
                }
            }
        }
    }
    dx
}

/// `activation(W·x + b)` with `W` stored row-major as `m × n`.
pub fn dense_apply(input: &[f64], weights: &[f64], bias: &[f64], activation: Activation) -> Result<Vec<f64>, NeuralError> {
    let (m, n) = (bias.len(), input.len());
    if weights.len() != m * n {
        return Err(NeuralError::ShapeMismatch(format!("dense weights hold {} values, expected {m}x{n}", weights.len())));
    }
    Ok((0..m)
        .map(|j| {
            let z = bias[j] + weights[j * n..(j + 1) * n].iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            activate(activation, z)
        })
        .collect())
}

pub(crate) fn dense_backward(input: &[f64], weights: &[f64], dz: &[f64], dweights: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let n = input.len();
    let mut dx = vec![0.0; n];
    for (j, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        dbias[j] += g;
        let w = &weights[j * n..(j + 1) * n];
        let dw = &mut dweights[j * n..(j + 1) * n];
        for i in 0..n {
            dw[i] += g * input[i];
            dx[i] += g * w[i];
        }
    }
    dx
}

/// Non-overlapping max over pairs of time steps; an odd trailing step is dropped.
pub(crate) fn maxpool2(input: &Tensor2) -> (Tensor2, Vec<usize>) {
    let (t_len, c) = input.shape();
    let rows = t_len / 2;
    let mut out = Tensor2::zeros(rows, c);
    let mut argmax = vec![0; rows * c];
    for r in 0..rows {
        for ci in 0..c {
            let (a, b) = (input.get(2 * r, ci), input.get(2 * r + 1, ci));
            let (src, v) = if b > a { (2 * r + 1, b) } else { (2 * r, a) };
            out.set(r, ci, v);
            argmax[r * c + ci] = src;
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool2_backward(in_rows: usize, argmax: &[usize], dy: &Tensor2) -> Tensor2 {
    let c = dy.cols();
    let mut dx = Tensor2::zeros(in_rows, c);
    for r in 0..dy.rows() {
        for ci in 0..c {
            let src = argmax[r * c + ci];
            dx.set(src, ci, dx.get(src, ci) + dy.get(r, ci));
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_kernel_copies_channel() {
        let x = Tensor2::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        // Taps [0, 1, 0] on channel 1 only.
        let k = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let y = conv1d_apply(&x, &k, &[0.0]).unwrap();
        assert_eq!(y.as_slice(), &[-2.0, 4.0, 6.0]);
        let y = conv1d_apply(&Tensor2::zeros(4, 2), &[0.3; 12], &[0.7, -0.2]).unwrap();
        assert!(y.as_slice().chunks(2).all(|r| r == [0.7, -0.2]));
        assert!(conv1d_apply(&x, &k[..5], &[0.0]).is_err());
    }

    #[test]
    fn conv_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor2::from_vec(10, 2, random(&mut rng, 20)).unwrap();
        let k = random(&mut rng, 3 * KERNEL * 2);
        let b = random(&mut rng, 3);
        let y = conv1d_apply(&x, &k, &b).unwrap();
        for t in 0..10i64 {
            for f in 0..3 {
                let mut acc = b[f];
                for tap in 0..3i64 {
                    let src = t + tap - 1;
                    if !(0..10).contains(&src) {
                        continue;
                    }
                    for c in 0..2 {
                        acc += k[f * 6 + tap as usize * 2 + c] * x.get(src as usize, c);
                    }
                }
                assert!((y.get(t as usize, f) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_examples() {
        let x = [0.5, -1.5, 2.0];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(dense_apply(&x, &eye, &[0.0; 3], Activation::None).unwrap(), x.to_vec());
        assert_eq!(dense_apply(&x, &[0.0; 3], &[0.0], Activation::Sigmoid).unwrap(), vec![0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 7);
        let w = random(&mut rng, 35);
        let b = random(&mut rng, 5);
        let y = dense_apply(&x, &w, &b, Activation::None).unwrap();
        for j in 0..5 {
            let mut acc = b[j];
            for i in 0..7 {
                acc += w[j * 7 + i] * x[i];
            }
            assert!((y[j] - acc).abs() < 1e-12);
        }
        assert!(dense_apply(&x, &w[..34], &b, Activation::None).is_err());
    }

    #[test]
    fn activation_ranges_at_extremes() {
        for x in [-1e6, -50.0, -1.0, 0.0, 1.0, 50.0, 1e6] {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
            let t = f64::tanh(x);
            assert!((-1.0..=1.0).contains(&t));
            assert!(relu(x) >= 0.0);
        }
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = Tensor2::from_rows(&[vec![1.0], vec![3.0], vec![2.0], vec![0.0], vec![9.0]]).unwrap();
        let (y, arg) = maxpool2(&x);
        assert_eq!(y.as_slice(), &[3.0, 2.0]);
        let dx = maxpool2_backward(5, &arg, &Tensor2::from_vec(2, 1, vec![1.0, 1.0]).unwrap());
        assert_eq!(dx.as_slice(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
