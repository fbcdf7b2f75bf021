//! The geometry network, its training loop and the N-averaging estimator.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::Vec3;
use crate::dataset::{batches, split_and_shuffle, DatasetFile, LastBatch};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, AdamConfig, AdamState, BatchNorm1d, Conv1d, Linear, Mode, Relu, Reshape, Sequential, Snapshot, Tensor};

/// Channel count entering each convolution stage, then the last stage's output.
pub const CHANNELS: [usize; 7] = [1, 10, 20, 40, 80, 160, 160];
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 4;
pub const HIDDEN: usize = 40;
pub const INPUT_LEN: usize = 4096;

/// Six conv/BN/ReLU stages that shrink 4096 samples to a 160-vector,
/// followed by two fully connected layers (160 -> 40 -> 3).
pub struct GeometryModel {
    net: Sequential,
}

impl GeometryModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new();
        net.push(Reshape::new(&[1, INPUT_LEN]));
        for pair in CHANNELS.windows(2) {
            net.push(Conv1d::new(pair[0], pair[1], KERNEL, STRIDE, &mut rng));
            net.push(BatchNorm1d::new(pair[1]));
            net.push(Relu::new());
        }
        net.push(Reshape::new(&[CHANNELS[6]]));
        net.push(Linear::new(CHANNELS[6], HIDDEN, &mut rng));
        net.push(Linear::new(HIDDEN, 3, &mut rng));
        Self { net }
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn count_parameters(&self) -> usize {
        self.net.count_parameters()
    }

    /// Shapes after every layer for a batch of `n` responses.
    pub fn shape_ladder(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        self.net.shape_ladder(&[n, INPUT_LEN])
    }

    /// Weight and bias of the final fully connected layer.
    pub fn output_params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        let last = self.net.layers_mut().last_mut().expect("non-empty stack");
        last.params_mut()
    }

    /// Eval-mode estimates for an `n x 4096` batch.
    pub fn estimate_batch(&self, inputs: &Tensor) -> Result<Vec<Vec3>> {
        match inputs.shape() {
            [_, INPUT_LEN] => {}
            other => {
                return Err(Error::Shape(format!(
                    "estimate expects n x {INPUT_LEN} responses, got {other:?}"
                )))
            }
        }
        let out = self.net.infer(inputs)?;
        Ok(out.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Raw network output for one response. The network was trained on
    /// ascending targets; the output is not re-sorted.
    pub fn estimate(&self, rir: &[f64]) -> Result<Vec3> {
        if rir.len() != INPUT_LEN {
            return Err(Error::Shape(format!(
                "estimate expects {INPUT_LEN} samples, got {}",
                rir.len()
            )));
        }
        let input = Tensor::new(vec![1, INPUT_LEN], rir.to_vec())?;
        Ok(self.estimate_batch(&input)?[0])
    }

    /// Componentwise mean of the single-response estimates of one room.
    pub fn estimate_averaged(&self, rirs: &[Vec<f64>]) -> Result<Vec3> {
        if rirs.is_empty() {
            return Err(Error::Empty("no responses to average"));
        }
        let mut data = Vec::with_capacity(rirs.len() * INPUT_LEN);
        for r in rirs {
            if r.len() != INPUT_LEN {
                return Err(Error::Shape(format!(
                    "estimate expects {INPUT_LEN} samples, got {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        let est = self.estimate_batch(&Tensor::new(vec![rirs.len(), INPUT_LEN], data)?)?;
        Ok(mean_vec3(&est))
    }

    /// Eval-mode estimates for every record of `file`, in record order.
    pub fn estimate_file(&self, file: &DatasetFile) -> Result<Vec<Vec3>> {
        let order = split_and_shuffle(file.len(), 0);
        let mut out = Vec::with_capacity(file.len());
        for batch in batches(file, &order, 50, LastBatch::Keep)? {
            out.extend(self.estimate_batch(&batch.inputs)?);
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.net.snapshot()
    }

    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.net.restore(snapshot)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.net.write_weights(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        let mut model = Self::new(0);
        model.net.read_weights(&mut BufReader::new(file))?;
        Ok(model)
    }
}

pub fn mean_vec3(values: &[Vec3]) -> Vec3 {
    let n = values.len() as f64;
    let mut acc = [0.0; 3];
    for v in values {
        for d in 0..3 {
            acc[d] += v[d];
        }
    }
    acc.map(|a| a / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    /// Seeds the epoch shuffles; each epoch uses `seed + epoch`.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 50,
            patience: 30,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's batches of the summed per-dimension MSE.
    pub train_mse: f64,
    /// Summed per-dimension MSE over the whole validation set, eval mode.
    pub val_mse: f64,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Feeds one epoch's validation loss. Stops once `patience` consecutive
    /// epochs fail to beat the best value seen so far.
    pub fn observe(&mut self, epoch: usize, val: f64) -> StopDecision {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were restored; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// Set when patience ran out before the epoch limit.
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn last_epoch(&self) -> usize {
        self.history.last().map_or(0, |r| r.epoch)
    }

    /// `epoch,train_mse,val_mse` rows with a header line.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for r in &self.history {
            s.push_str(&format!("{},{:.10e},{:.10e}\n", r.epoch, r.train_mse, r.val_mse));
        }
        s
    }
}

/// Summed per-dimension MSE of the model over every record (eval mode).
pub fn validation_mse(model: &GeometryModel, file: &DatasetFile) -> Result<f64> {
    let est = model.estimate_file(file)?;
    let mut acc = 0.0;
    for (e, r) in est.iter().zip(&file.records) {
        for d in 0..3 {
            acc += (e[d] - r.label[d]).powi(2);
        }
    }
    Ok(acc / file.len() as f64)
}

/// Trains `model` in place and leaves it holding the best-validation weights.
/// `on_epoch` sees every finished epoch (for progress output).
pub fn train(
    model: &mut GeometryModel,
    train_set: &DatasetFile,
    val_set: &DatasetFile,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training and validation sets must be non-empty"));
    }
    if cfg.batch_size == 0 || train_set.len() < cfg.batch_size {
        return Err(Error::Shape(format!(
            "training set of {} records holds no full batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    let mut adam = AdamState::new(cfg.adam);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.snapshot();
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let order = split_and_shuffle(train_set.len(), cfg.seed.wrapping_add(epoch as u64));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for batch in batches(train_set, &order, cfg.batch_size, LastBatch::Drop)? {
            let net = model.network_mut();
            let pred = net.forward(&batch.inputs, Mode::Train)?;
            let loss = mse_loss(&pred, &batch.targets)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            net.backward(&loss.grad)?;
            adam.step(&mut net.params_mut())?;
            loss_sum += loss.total;
            steps += 1;
        }
        let val_mse = validation_mse(model, val_set)?;
        if !val_mse.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / steps as f64,
            val_mse,
        };
        history.push(record);
        on_epoch(&record);
        match stopper.observe(epoch, val_mse) {
            StopDecision::Improved => best = model.snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    model.restore(&best)?;
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch,
        best_val_mse: stopper.best,
        stopped_early,
    })
}
