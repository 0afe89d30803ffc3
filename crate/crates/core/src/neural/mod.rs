//! Small deterministic neural toolkit with hand-written backward passes.
//!
//! A [`Network`] is a stack of layers ending in a one-unit linear head; the
//! probability is the sigmoid of that head. All arithmetic is `f64` and all
//! randomness comes from a seeded ChaCha stream, so training is
//! bit-reproducible.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod layers;
mod loss;
pub mod lstm;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::tensor::Tensor2;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{finite_diff_grad_check, relative_error};
pub use layers::{conv1d_apply, dense_apply, sigmoid};
pub use loss::{bce_logit, bce_loss, P_CLAMP};
pub use lstm::{lstm_sequence, lstm_step, LstmWeights};
pub use train::{fit, fit_samples, run_training, EarlyStopping, EpochRecord, History, StopDecision, TrainConfig, Trainable};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {predicted} predictions for {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::tensor::ShapeMismatch> for NeuralError {
    fn from(e: crate::tensor::ShapeMismatch) -> Self {
        NeuralError::ShapeMismatch(e.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Activation::None),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Layer description; input sizes are inferred when the network is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d { filters: usize, activation: Activation },
    MaxPool2,
    Flatten,
    Dense { units: usize, activation: Activation },
    Lstm { units: usize, return_sequences: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d { channels: usize, filters: usize, activation: Activation },
    MaxPool2,
    Flatten,
    Dense { inputs: usize, units: usize, activation: Activation },
    Lstm { inputs: usize, units: usize, return_sequences: bool },
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv1d { channels, filters, .. } => filters * layers::KERNEL * channels + filters,
            LayerKind::Dense { inputs, units, .. } => units * inputs + units,
            LayerKind::Lstm { inputs, units, .. } => LstmWeights::param_count(inputs, units),
            LayerKind::MaxPool2 | LayerKind::Flatten => 0,
        }
    }

    fn output_shape(&self, (rows, cols): (usize, usize)) -> Result<(usize, usize), NeuralError> {
        let mismatch = |what: &str| Err(NeuralError::ShapeMismatch(format!("{what} cannot take a {rows}x{cols} input")));
        match *self {
            LayerKind::Conv1d { channels, filters, .. } if channels == cols && rows > 0 => Ok((rows, filters)),
            LayerKind::Conv1d { .. } => mismatch("conv1d"),
            LayerKind::MaxPool2 if rows >= 2 => Ok((rows / 2, cols)),
            LayerKind::MaxPool2 => mismatch("maxpool"),
            LayerKind::Flatten => Ok((1, rows * cols)),
            LayerKind::Dense { inputs, units, .. } if rows == 1 && cols == inputs => Ok((1, units)),
            LayerKind::Dense { .. } => mismatch("dense"),
            LayerKind::Lstm { inputs, units, return_sequences } if cols == inputs && rows > 0 => {
                Ok((if return_sequences { rows } else { 1 }, units))
            }
            LayerKind::Lstm { .. } => mismatch("lstm"),
        }
    }

    /// Draws initial parameters: Glorot-uniform weights and zero biases for
    /// conv/dense; uniform ±√(1/H) LSTM matrices with forget bias 1.
    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut uniform = |n: usize, limit: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-limit..=limit)).collect() };
        match *self {
            LayerKind::Conv1d { channels, filters, .. } => {
                let fan_in = layers::KERNEL * channels;
                let fan_out = layers::KERNEL * filters;
                let mut p = uniform(filters * fan_in, (6.0 / (fan_in + fan_out) as f64).sqrt());
                p.extend(std::iter::repeat_n(0.0, filters));
                p
            }
            LayerKind::Dense { inputs, units, .. } => {
                let mut p = uniform(units * inputs, (6.0 / (inputs + units) as f64).sqrt());
                p.extend(std::iter::repeat_n(0.0, units));
                p
            }
            LayerKind::Lstm { inputs, units, .. } => {
                let limit = (1.0 / units as f64).sqrt();
                let mut p = uniform(4 * units * (inputs + units), limit);
                let mut b = vec![0.0; 4 * units];
                b[lstm::FORGET * units..(lstm::FORGET + 1) * units].iter_mut().for_each(|v| *v = 1.0);
                p.extend(b);
                p
            }
            LayerKind::MaxPool2 | LayerKind::Flatten => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<f64>,
}

enum Cache {
    Conv { input: Tensor2, out: Tensor2 },
    Pool { in_rows: usize, argmax: Vec<usize> },
    Flatten { shape: (usize, usize) },
    Dense { input: Tensor2, out: Tensor2 },
    Lstm(Vec<lstm::StepCache>),
}

impl Layer {
    fn split(&self) -> (&[f64], &[f64]) {
        match self.kind {
            LayerKind::Conv1d { filters, .. } | LayerKind::Dense { units: filters, .. } => {
                self.params.split_at(self.params.len() - filters)
            }
            _ => (&self.params[..], &[]),
        }
    }

    fn forward(&self, x: &Tensor2) -> Result<(Tensor2, Cache), NeuralError> {
        match self.kind {
            LayerKind::Conv1d { activation, .. } => {
                let (w, b) = self.split();
                let mut out = conv1d_apply(x, w, b)?;
                out.as_mut_slice().iter_mut().for_each(|v| *v = layers::activate(activation, *v));
                Ok((out.clone(), Cache::Conv { input: x.clone(), out }))
            }
            LayerKind::MaxPool2 => {
                let (out, argmax) = layers::maxpool2(x);
                Ok((out, Cache::Pool { in_rows: x.rows(), argmax }))
            }
            LayerKind::Flatten => {
                let out = Tensor2::from_vec(1, x.rows() * x.cols(), x.as_slice().to_vec())?;
                Ok((out, Cache::Flatten { shape: x.shape() }))
            }
            LayerKind::Dense { units, activation, .. } => {
                let (w, b) = self.split();
                let out = Tensor2::from_vec(1, units, dense_apply(x.as_slice(), w, b, activation)?)?;
                Ok((out.clone(), Cache::Dense { input: x.clone(), out }))
            }
            LayerKind::Lstm { inputs, units, return_sequences } => {
                let p = LstmWeights::from_flat(inputs, units, &self.params)?;
                let (out, caches) = lstm::lstm_forward(x, &p, return_sequences)?;
                Ok((out, Cache::Lstm(caches)))
            }
        }
    }

    fn backward(&self, cache: &Cache, dy: &Tensor2, grad: &mut [f64]) -> Tensor2 {
        match (&self.kind, cache) {
            (&LayerKind::Conv1d { activation, .. }, Cache::Conv { input, out }) => {
                let mut dz = dy.clone();
                for (d, &o) in dz.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *d *= layers::activation_grad(activation, o);
                }
                let (w, _) = self.split();
                let (gw, gb) = grad.split_at_mut(w.len());
                layers::conv1d_backward(input, w, &dz, gw, gb)
            }
            (LayerKind::MaxPool2, Cache::Pool { in_rows, argmax }) => layers::maxpool2_backward(*in_rows, argmax, dy),
            (LayerKind::Flatten, Cache::Flatten { shape }) => {
                Tensor2::from_vec(shape.0, shape.1, dy.as_slice().to_vec()).expect("flatten preserves size")
            }
            (&LayerKind::Dense { activation, .. }, Cache::Dense { input, out }) => {
                let dz: Vec<f64> =
                    dy.as_slice().iter().zip(out.as_slice()).map(|(d, &o)| d * layers::activation_grad(activation, o)).collect();
                let (w, _) = self.split();
                let (gw, gb) = grad.split_at_mut(w.len());
                let dx = layers::dense_backward(input.as_slice(), w, &dz, gw, gb);
                Tensor2::from_vec(1, dx.len(), dx).expect("dense input is a row")
            }
            (&LayerKind::Lstm { inputs, units, return_sequences }, Cache::Lstm(steps)) => {
                let p = LstmWeights::from_flat(inputs, units, &self.params).expect("validated at build");
                lstm::lstm_backward(steps, &p, dy, return_sequences, grad)
            }
            _ => unreachable!("cache does not match layer"),
        }
    }
}

/// One labeled input for training or evaluation.
pub trait Example: Sync {
    fn input(&self) -> &Tensor2;
    fn target(&self) -> u8;
}

impl Example for crate::windowing::Sample {
    fn input(&self) -> &Tensor2 {
        &self.input
    }

    fn target(&self) -> u8 {
        self.label
    }
}

impl Example for (Tensor2, u8) {
    fn input(&self) -> &Tensor2 {
        &self.0
    }

    fn target(&self) -> u8 {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Architecture tag recorded in checkpoints, e.g. `cnn`.
    pub name: String,
    pub input_shape: (usize, usize),
    pub layers: Vec<Layer>,
}

impl Network {
    /// Builds the stack and appends a one-unit linear head. Parameters are
    /// drawn layer by layer, weights before biases, from `ChaCha8(seed)`.
    pub fn build(name: &str, input_shape: (usize, usize), specs: &[LayerSpec], seed: u64) -> Result<Self, NeuralError> {
        let kinds = Self::resolve(input_shape, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = kinds.into_iter().map(|kind| Layer { params: kind.init(&mut rng), kind }).collect();
        Ok(Network { name: name.to_string(), input_shape, layers })
    }

    /// Assembles a network from explicit layers, checking shapes and head.
    pub fn from_layers(name: &str, input_shape: (usize, usize), layers: Vec<Layer>) -> Result<Self, NeuralError> {
        let mut shape = input_shape;
        for l in &layers {
            if l.params.len() != l.kind.param_count() {
                return Err(NeuralError::ShapeMismatch(format!("{:?} holds {} parameters", l.kind, l.params.len())));
            }
            shape = l.kind.output_shape(shape)?;
        }
        match layers.last() {
            Some(Layer { kind: LayerKind::Dense { units: 1, activation: Activation::None, .. }, .. }) if shape == (1, 1) => {}
            _ => return Err(NeuralError::ShapeMismatch("network must end in a one-unit linear head".into())),
        }
        Ok(Network { name: name.to_string(), input_shape, layers })
    }

    fn resolve(input_shape: (usize, usize), specs: &[LayerSpec]) -> Result<Vec<LayerKind>, NeuralError> {
        let mut shape = input_shape;
        let mut kinds = Vec::with_capacity(specs.len() + 1);
        let head = LayerSpec::Dense { units: 1, activation: Activation::None };
        for spec in specs.iter().chain(std::iter::once(&head)) {
            let kind = match *spec {
                LayerSpec::Conv1d { filters, activation } => LayerKind::Conv1d { channels: shape.1, filters, activation },
                LayerSpec::MaxPool2 => LayerKind::MaxPool2,
                LayerSpec::Flatten => LayerKind::Flatten,
                LayerSpec::Dense { units, activation } => LayerKind::Dense { inputs: shape.1, units, activation },
                LayerSpec::Lstm { units, return_sequences } => LayerKind::Lstm { inputs: shape.1, units, return_sequences },
            };
            if matches!(kind, LayerKind::Conv1d { filters: 0, .. } | LayerKind::Dense { units: 0, .. } | LayerKind::Lstm { units: 0, .. }) {
                return Err(NeuralError::ShapeMismatch(format!("{kind:?} has zero width")));
            }
            shape = kind.output_shape(shape)?;
            kinds.push(kind);
        }
        Ok(kinds)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params.iter().copied()).collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        if flat.len() != self.param_count() {
            return Err(NeuralError::ShapeMismatch(format!("{} parameters for a {}-parameter network", flat.len(), self.param_count())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.params.len();
            l.params.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor2) -> Result<(), NeuralError> {
        if x.shape() != self.input_shape {
            return Err(NeuralError::ShapeMismatch(format!(
                "input {}x{}, network expects {}x{}",
                x.rows(),
                x.cols(),
                self.input_shape.0,
                self.input_shape.1
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Tensor2) -> Result<(f64, Vec<Cache>), NeuralError> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for l in &self.layers {
            let (out, cache) = l.forward(&act)?;
            caches.push(cache);
            act = out;
        }
        Ok((act.get(0, 0), caches))
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, x: &Tensor2) -> Result<f64, NeuralError> {
        let mut act = x.clone();
        self.check_input(x)?;
        for l in &self.layers {
            act = l.forward(&act)?.0;
        }
        Ok(act.get(0, 0))
    }

    pub fn predict_proba(&self, x: &Tensor2) -> Result<f64, NeuralError> {
        Ok(sigmoid(self.logit(x)?))
    }

    /// Activation of the last hidden layer, i.e. the input to the head.
    pub fn penultimate(&self, x: &Tensor2) -> Result<Vec<f64>, NeuralError> {
        self.check_input(x)?;
        let mut act = x.clone();
        for l in &self.layers[..self.layers.len() - 1] {
            act = l.forward(&act)?.0;
        }
        Ok(act.into_vec())
    }

    /// Loss and gradient of one example, with the gradient written into `grad`.
    fn example_grad(&self, x: &Tensor2, y: u8, class_weight: f64, grad: &mut [f64]) -> Result<f64, NeuralError> {
        let (z, caches) = self.forward_cached(x)?;
        let (loss, dz) = bce_logit(z, y, class_weight);
        let mut dy = Tensor2::from_vec(1, 1, vec![dz])?;
        let mut end = grad.len();
        for (l, cache) in self.layers.iter().zip(&caches).rev() {
            let start = end - l.params.len();
            dy = l.backward(cache, &dy, &mut grad[start..end]);
            end = start;
        }
        Ok(loss)
    }

    /// Mean loss over `batch` and its gradient.
    ///
    /// Per-example gradients are computed in parallel but summed in batch
    /// order, so the result is bit-identical to a serial pass.
    pub fn loss_and_grad<E: Example>(&self, batch: &[&E], class_weight: f64) -> Result<(f64, Vec<f64>), NeuralError> {
        let n = self.param_count();
        let parts: Vec<Result<(f64, Vec<f64>), NeuralError>> = batch
            .par_iter()
            .map(|e| {
                let mut g = vec![0.0; n];
                let l = self.example_grad(e.input(), e.target(), class_weight, &mut g)?;
                Ok((l, g))
            })
            .collect();
        let mut total = vec![0.0; n];
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        total.iter_mut().for_each(|v| *v *= scale);
        Ok((loss * scale, total))
    }

    /// Mean loss over `examples`, accumulated in order.
    pub fn mean_loss<E: Example>(&self, examples: &[E], class_weight: f64) -> Result<f64, NeuralError> {
        let losses: Vec<Result<f64, NeuralError>> =
            examples.par_iter().map(|e| Ok(bce_logit(self.logit(e.input())?, e.target(), class_weight).0)).collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / examples.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cnn(seed: u64) -> Network {
        Network::build(
            "cnn",
            (6, 2),
            &[
                LayerSpec::Conv1d { filters: 3, activation: Activation::Relu },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4, activation: Activation::Relu },
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn build_is_seeded_and_shaped() {
        let a = tiny_cnn(3);
        assert_eq!(a, tiny_cnn(3));
        assert_ne!(a.params_flat(), tiny_cnn(4).params_flat());
        assert_eq!(a.param_count(), (3 * 3 * 2 + 3) + (18 * 4 + 4) + (4 + 1));
        assert!(Network::build("x", (6, 2), &[LayerSpec::Dense { units: 4, activation: Activation::Relu }], 0).is_err());
    }

    #[test]
    fn glorot_limits_and_forget_bias() {
        let net = Network::build("lstm", (5, 2), &[LayerSpec::Lstm { units: 4, return_sequences: false }], 1).unwrap();
        let p = &net.layers[0].params;
        let limit = 0.5;
        assert!(p[..4 * 4 * 6].iter().all(|v| v.abs() <= limit));
        let b = &p[4 * 4 * 6..];
        assert_eq!(&b[..4], &[1.0; 4]);
        assert!(b[4..].iter().all(|&v| v == 0.0));
        let head = &net.layers[1].params;
        let glorot = (6.0f64 / 5.0).sqrt();
        assert!(head[..4].iter().all(|v| v.abs() <= glorot) && head[4] == 0.0);
    }

    #[test]
    fn probabilities_in_range_and_input_checked() {
        let net = tiny_cnn(0);
        let x = Tensor2::from_vec(6, 2, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let p = net.predict_proba(&x).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(net.penultimate(&x).unwrap().len(), 4);
        assert!(net.predict_proba(&Tensor2::zeros(5, 2)).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut net = tiny_cnn(0);
        let mut flat = net.params_flat();
        flat[0] = 42.0;
        net.set_params_flat(&flat).unwrap();
        assert_eq!(net.layers[0].params[0], 42.0);
        assert!(net.set_params_flat(&flat[1..]).is_err());
    }
}
