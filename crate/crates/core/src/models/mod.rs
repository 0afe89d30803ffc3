//! The CNN, stacked-LSTM and CNN-SVM classifiers behind one interface.

mod svm;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neural::{
    self, read_checkpoint, write_checkpoint, Activation, Checkpoint, History, LayerSpec, Network, NeuralError, TrainConfig,
};
use crate::tensor::Tensor2;
use crate::windowing::{Sample, WindowDataset};

pub use svm::{default_gamma, kkt_audit, rbf_kernel, svm_predict, svm_train, svm_train_detailed, KktAudit, SvmConfig, SvmFit, SvmModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown architecture {0:?}")]
    UnknownKind(String),
    #[error("{0} network cannot be used here")]
    WrongKind(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cnn,
    Lstm,
    CnnSvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Cnn, ModelKind::Lstm, ModelKind::CnnSvm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
            ModelKind::CnnSvm => "cnn_svm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            "cnn_svm" | "cnn-svm" => Ok(ModelKind::CnnSvm),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub conv_filters: [usize; 3],
    pub cnn_dense: [usize; 2],
    pub lstm_units: [usize; 2],
    pub lstm_dense: usize,
    /// Max-pool(2) after each conv block.
    pub pooling: bool,
}

impl ArchitectureSpec {
    pub fn full(kind: ModelKind) -> Self {
        ArchitectureSpec { kind, conv_filters: [128, 64, 32], cnn_dense: [64, 32], lstm_units: [64, 32], lstm_dense: 32, pooling: false }
    }

    /// Every width divided by `factor` (at least one unit each).
    pub fn reduced(kind: ModelKind, factor: usize) -> Self {
        let f = factor.max(1);
        let s = |v: usize| (v / f).max(1);
        let full = Self::full(kind);
        ArchitectureSpec {
            kind,
            conv_filters: full.conv_filters.map(s),
            cnn_dense: full.cnn_dense.map(s),
            lstm_units: full.lstm_units.map(s),
            lstm_dense: s(full.lstm_dense),
            pooling: false,
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let relu = Activation::Relu;
        match self.kind {
            ModelKind::Cnn | ModelKind::CnnSvm => {
                let mut v = Vec::new();
                for &filters in &self.conv_filters {
                    v.push(LayerSpec::Conv1d { filters, activation: relu });
                    if self.pooling {
                        v.push(LayerSpec::MaxPool2);
                    }
                }
                v.push(LayerSpec::Flatten);
                v.extend(self.cnn_dense.iter().map(|&units| LayerSpec::Dense { units, activation: relu }));
                v
            }
            ModelKind::Lstm => vec![
                LayerSpec::Lstm { units: self.lstm_units[0], return_sequences: true },
                LayerSpec::Lstm { units: self.lstm_units[1], return_sequences: false },
                LayerSpec::Dense { units: self.lstm_dense, activation: relu },
            ],
        }
    }
}

/// Builds the network for `arch` on `(rows, 2)` inputs; CNN-SVM builds its CNN.
pub fn build(arch: &ArchitectureSpec, input_shape: (usize, usize), seed: u64) -> Result<Network, ModelError> {
    Ok(Network::build(arch.kind.as_str(), input_shape, &arch.layers(), seed)?)
}

/// Negative-to-positive ratio of a training split, or 1 without positives.
pub fn balanced_class_weight(train: &[Sample]) -> f64 {
    let pos = train.iter().filter(|s| s.label == 1).count();
    if pos == 0 || pos == train.len() {
        1.0
    } else {
        (train.len() - pos) as f64 / pos as f64
    }
}

pub fn label_from_probability(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// Probability and hard label (ties go to stiction).
pub fn classify(network: &Network, input: &Tensor2) -> Result<(f64, u8), ModelError> {
    let p = network.predict_proba(input)?;
    Ok((p, label_from_probability(p)))
}

/// Activations of the last dense layer of a CNN.
pub fn extract_features(network: &Network, input: &Tensor2) -> Result<Vec<f64>, ModelError> {
    if network.name != ModelKind::Cnn.as_str() && network.name != ModelKind::CnnSvm.as_str() {
        return Err(ModelError::WrongKind(network.name.clone()));
    }
    Ok(network.penultimate(input)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub cnn: Checkpoint,
    pub svm: SvmModel,
}

impl HybridModel {
    pub fn classify(&self, input: &Tensor2) -> Result<(f64, u8), ModelError> {
        let f = extract_features(&self.cnn.network, input)?;
        let (decision, label) = svm_predict(&self.svm, &f);
        // The sigmoid of the decision value is a monotone score, not a calibrated probability.
        Ok((neural::sigmoid(decision), u8::from(label > 0)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Network(Checkpoint),
    Hybrid(HybridModel),
}

const HYBRID_MAGIC: &[u8; 4] = b"SGS1";

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Network(c) if c.network.name == "lstm" => ModelKind::Lstm,
            TrainedModel::Network(_) => ModelKind::Cnn,
            TrainedModel::Hybrid(_) => ModelKind::CnnSvm,
        }
    }

    pub fn history(&self) -> &History {
        match self {
            TrainedModel::Network(c) => &c.history,
            TrainedModel::Hybrid(h) => &h.cnn.history,
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            TrainedModel::Network(c) => c.network.input_shape,
            TrainedModel::Hybrid(h) => h.cnn.network.input_shape,
        }
    }

    pub fn classify(&self, input: &Tensor2) -> Result<(f64, u8), ModelError> {
        match self {
            TrainedModel::Network(c) => classify(&c.network, input),
            TrainedModel::Hybrid(h) => h.classify(input),
        }
    }

    /// `(probability, label)` for every sample, in order.
    pub fn classify_all(&self, samples: &[Sample]) -> Result<Vec<(f64, u8)>, ModelError> {
        use rayon::prelude::*;
        samples.par_iter().map(|s| self.classify(&s.input)).collect()
    }

    /// `SGN1` for plain networks; `SGS1` (embedded `SGN1` block plus SVM block) for the hybrid.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        match self {
            TrainedModel::Network(c) => write_checkpoint(c, w)?,
            TrainedModel::Hybrid(h) => {
                let mut inner = Vec::new();
                write_checkpoint(&h.cnn, &mut inner)?;
                w.write_all(HYBRID_MAGIC)?;
                w.write_all(&(inner.len() as u64).to_le_bytes())?;
                w.write_all(&inner)?;
                let d = h.svm.support_vectors.first().map_or(0, Vec::len);
                for v in [d as u64, h.svm.support_vectors.len() as u64] {
                    w.write_all(&v.to_le_bytes())?;
                }
                for v in [h.svm.gamma, h.svm.c, h.svm.bias] {
                    w.write_all(&v.to_le_bytes())?;
                }
                for (sv, coef) in h.svm.support_vectors.iter().zip(&h.svm.dual_coef) {
                    w.write_all(&coef.to_le_bytes())?;
                    for v in sv {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                w.flush()?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HYBRID_MAGIC {
            let chained = std::io::Read::chain(&magic[..], r);
            return Ok(TrainedModel::Network(read_checkpoint(chained)?));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64, ModelError> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let len = next_u64(&mut r)?;
        if len > 1 << 32 {
            return Err(ModelError::Malformed("oversized network block".into()));
        }
        let mut inner = vec![0u8; len as usize];
        r.read_exact(&mut inner)?;
        let cnn = read_checkpoint(inner.as_slice())?;
        let d = next_u64(&mut r)? as usize;
        let n = next_u64(&mut r)? as usize;
        if d > 1 << 16 || n > 1 << 24 {
            return Err(ModelError::Malformed("implausible SVM dimensions".into()));
        }
        let mut f = || -> Result<f64, ModelError> { Ok(f64::from_bits(next_u64(&mut r)?)) };
        let (gamma, c, bias) = (f()?, f()?, f()?);
        let mut support_vectors = Vec::with_capacity(n);
        let mut dual_coef = Vec::with_capacity(n);
        for _ in 0..n {
            dual_coef.push(f()?);
            support_vectors.push((0..d).map(|_| f()).collect::<Result<Vec<_>, _>>()?);
        }
        Ok(TrainedModel::Hybrid(HybridModel { cnn, svm: SvmModel { support_vectors, dual_coef, bias, gamma, c } }))
    }
}

/// Trains `arch` on the dataset's training split, early-stopping on its validation split.
///
/// The CNN-SVM hybrid trains its CNN end to end first, then fits the SVM on
/// the frozen 32-unit features of the (possibly subsampled) training split.
pub fn train_model(
    arch: &ArchitectureSpec,
    dataset: &WindowDataset,
    cfg: &TrainConfig,
    svm_cfg: &SvmConfig,
) -> Result<TrainedModel, ModelError> {
    train_on(arch, dataset.train(), dataset.val(), dataset.input_shape(), cfg, svm_cfg)
}

pub fn train_on(
    arch: &ArchitectureSpec,
    train: &[Sample],
    val: &[Sample],
    input_shape: (usize, usize),
    cfg: &TrainConfig,
    svm_cfg: &SvmConfig,
) -> Result<TrainedModel, ModelError> {
    let mut network = build(arch, input_shape, cfg.seed)?;
    let history = neural::fit_samples(&mut network, train, val, cfg)?;
    let cnn = Checkpoint { network, seed: cfg.seed, history };
    if arch.kind != ModelKind::CnnSvm {
        return Ok(TrainedModel::Network(cnn));
    }
    let rows: Vec<usize> = if train.len() > svm_cfg.max_train_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(svm_cfg.seed);
        let mut idx = sample(&mut rng, train.len(), svm_cfg.max_train_rows).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..train.len()).collect()
    };
    let features = rows.iter().map(|&i| extract_features(&cnn.network, &train[i].input)).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<i8> = rows.iter().map(|&i| if train[i].label == 1 { 1 } else { -1 }).collect();
    let svm = svm_train(&features, &labels, svm_cfg)?;
    Ok(TrainedModel::Hybrid(HybridModel { cnn, svm }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::LayerKind;

    #[test]
    fn cnn_shape_trace() {
        let net = build(&ArchitectureSpec::full(ModelKind::Cnn), (24, 2), 0).unwrap();
        let kinds: Vec<LayerKind> = net.layers.iter().map(|l| l.kind).collect();
        assert_eq!(kinds[0], LayerKind::Conv1d { channels: 2, filters: 128, activation: Activation::Relu });
        assert_eq!(kinds[1], LayerKind::Conv1d { channels: 128, filters: 64, activation: Activation::Relu });
        assert_eq!(kinds[2], LayerKind::Conv1d { channels: 64, filters: 32, activation: Activation::Relu });
        assert_eq!(kinds[3], LayerKind::Flatten);
        assert_eq!(kinds[4], LayerKind::Dense { inputs: 768, units: 64, activation: Activation::Relu });
        assert_eq!(kinds[5], LayerKind::Dense { inputs: 64, units: 32, activation: Activation::Relu });
        assert_eq!(kinds[6], LayerKind::Dense { inputs: 32, units: 1, activation: Activation::None });
        let d4 = build(&ArchitectureSpec::full(ModelKind::Cnn), (96, 2), 0).unwrap();
        assert_eq!(d4.layers[4].kind, LayerKind::Dense { inputs: 96 * 32, units: 64, activation: Activation::Relu });
    }

    #[test]
    fn lstm_shape_trace() {
        for rows in [24, 72] {
            let net = build(&ArchitectureSpec::full(ModelKind::Lstm), (rows, 2), 0).unwrap();
            let kinds: Vec<LayerKind> = net.layers.iter().map(|l| l.kind).collect();
            assert_eq!(
                kinds,
                vec![
                    LayerKind::Lstm { inputs: 2, units: 64, return_sequences: true },
                    LayerKind::Lstm { inputs: 64, units: 32, return_sequences: false },
                    LayerKind::Dense { inputs: 32, units: 32, activation: Activation::Relu },
                    LayerKind::Dense { inputs: 32, units: 1, activation: Activation::None },
                ]
            );
        }
    }

    #[test]
    fn pooling_variant_halves_time() {
        let arch = ArchitectureSpec { pooling: true, ..ArchitectureSpec::full(ModelKind::Cnn) };
        let net = build(&arch, (24, 2), 0).unwrap();
        let flatten_in = net.layers.iter().find_map(|l| match l.kind {
            LayerKind::Dense { inputs, .. } => Some(inputs),
            _ => None,
        });
        assert_eq!(flatten_in, Some(3 * 32));
    }

    #[test]
    fn reduced_widths() {
        let a = ArchitectureSpec::reduced(ModelKind::Cnn, 16);
        assert_eq!((a.conv_filters, a.cnn_dense), ([8, 4, 2], [4, 2]));
        let l = ArchitectureSpec::reduced(ModelKind::Lstm, 8);
        assert_eq!((l.lstm_units, l.lstm_dense), ([8, 4], 4));
    }

    #[test]
    fn classify_ties_and_ranges() {
        assert_eq!(label_from_probability(0.5), 1);
        assert_eq!(label_from_probability(0.4999999), 0);
        let net = build(&ArchitectureSpec::reduced(ModelKind::Lstm, 8), (24, 2), 3).unwrap();
        let x = Tensor2::from_vec(24, 2, (0..48).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let (p, _) = classify(&net, &x).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(classify(&net, &x).unwrap(), (p, label_from_probability(p)));
        assert!(matches!(extract_features(&net, &x), Err(ModelError::WrongKind(_))));
        let cnn = build(&ArchitectureSpec::full(ModelKind::Cnn), (24, 2), 3).unwrap();
        assert_eq!(extract_features(&cnn, &x).unwrap().len(), 32);
        assert_eq!(extract_features(&cnn, &x).unwrap(), extract_features(&cnn, &x).unwrap());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("cnn_svm".parse::<ModelKind>().unwrap(), ModelKind::CnnSvm);
        assert!(matches!("resnet".parse::<ModelKind>(), Err(ModelError::UnknownKind(_))));
    }
}
