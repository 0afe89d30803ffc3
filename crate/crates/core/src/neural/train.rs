use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_update, AdamConfig, AdamState, Example, Network, NeuralError};
use crate::windowing::WindowDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss weight on positive (stiction) examples.
    pub class_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_epochs: 100, learning_rate: 0.001, patience: 3, batch_size: 64, seed: 0, class_weight: 1.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, batch_size and patience must be positive");
        }
        if self.patience >= self.max_epochs {
            return bad("patience must be below max_epochs");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.class_weight > 0.0 && self.class_weight.is_finite()) {
            return bad("class_weight must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }

    pub fn from_csv(text: &str, best_epoch: usize, stopped_early: bool) -> Result<Self, NeuralError> {
        let mut epochs = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let parse = |i: usize| f.get(i).and_then(|v| v.trim().parse::<f64>().ok());
            match (f.first().and_then(|v| v.trim().parse().ok()), parse(1), parse(2)) {
                (Some(epoch), Some(train_loss), Some(val_loss)) => epochs.push(EpochRecord { epoch, train_loss, val_loss }),
                _ => return Err(NeuralError::Malformed(format!("bad history row {line:?}"))),
            }
        }
        Ok(History { epochs, best_epoch, stopped_early })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Stops once validation loss has failed to improve for `patience` epochs in a row.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best_loss: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }
}

/// Anything the epoch loop can drive.
pub trait Trainable {
    fn snapshot(&self) -> Vec<f64>;
    fn restore(&mut self, snapshot: &[f64]) -> Result<(), NeuralError>;
    /// Runs one epoch and returns its mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64, NeuralError>;
    fn validation_loss(&mut self) -> Result<f64, NeuralError>;
}

/// Epoch loop with early stopping; leaves `model` holding its best-epoch parameters.
pub fn run_training<T: Trainable>(model: &mut T, max_epochs: usize, patience: usize) -> Result<History, NeuralError> {
    let mut stopper = EarlyStopping::new(patience);
    let mut history = History::default();
    let mut best = model.snapshot();
    for epoch in 1..=max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val_loss = model.validation_loss()?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NeuralError::NumericFailure(format!("non-finite loss at epoch {epoch} (train {train_loss}, val {val_loss})")));
        }
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.snapshot(),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch;
    model.restore(&best)?;
    log::debug!("training finished: best epoch {} of {}", history.best_epoch, history.epochs.len());
    Ok(history)
}

struct NetworkTrainer<'a, E: Example> {
    network: &'a mut Network,
    train: &'a [E],
    val: &'a [E],
    cfg: TrainConfig,
    adam: AdamState,
    adam_cfg: AdamConfig,
    step: u64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl<E: Example> Trainable for NetworkTrainer<'_, E> {
    fn snapshot(&self) -> Vec<f64> {
        self.network.params_flat()
    }

    fn restore(&mut self, snapshot: &[f64]) -> Result<(), NeuralError> {
        self.network.set_params_flat(snapshot)
    }

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64, NeuralError> {
        self.order.shuffle(&mut self.rng);
        let mut params = self.network.params_flat();
        let mut total = 0.0;
        for chunk in self.order.chunks(self.cfg.batch_size) {
            let batch: Vec<&E> = chunk.iter().map(|&i| &self.train[i]).collect();
            let (loss, grad) = self.network.loss_and_grad(&batch, self.cfg.class_weight)?;
            self.step += 1;
            adam_update(&mut params, &grad, &mut self.adam, self.step, &self.adam_cfg)?;
            self.network.set_params_flat(&params)?;
            total += loss * batch.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    fn validation_loss(&mut self) -> Result<f64, NeuralError> {
        self.network.mean_loss(self.val, 1.0)
    }
}

/// Mini-batch Adam training with seeded per-epoch shuffling and early stopping.
pub fn fit_samples<E: Example>(network: &mut Network, train: &[E], val: &[E], cfg: &TrainConfig) -> Result<History, NeuralError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NeuralError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(NeuralError::EmptySplit("validation"));
    }
    let n = network.param_count();
    let mut trainer = NetworkTrainer {
        network,
        train,
        val,
        cfg: *cfg,
        adam: AdamState::new(n),
        adam_cfg: AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() },
        step: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        order: (0..train.len()).collect(),
    };
    run_training(&mut trainer, cfg.max_epochs, cfg.patience)
}

pub fn fit(network: &mut Network, dataset: &WindowDataset, cfg: &TrainConfig) -> Result<History, NeuralError> {
    fit_samples(network, dataset.train(), dataset.val(), cfg)
}
