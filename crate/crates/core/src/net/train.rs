use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward, cross_entropy, forward, one_hot, CheckpointStore, FeedforwardModel, Gradient};
use crate::error::{Error, Result};
use crate::rng;
use crate::synthdata::{subset_rows, PermutedDataset, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    /// Full-batch gradient descent; `batch_size` is ignored.
    FullBatchGd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once training accuracy (on training labels) exceeds this.
    pub target_train_accuracy: Option<f64>,
    pub checkpoint_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-4,
            batch_size: 1024,
            max_epochs: 1000,
            target_train_accuracy: Some(0.99),
            checkpoint_stride: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.checkpoint_stride == 0 {
            return Err(Error::Config("batch_size and checkpoint_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss above which training counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e3;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Gradient,
    v: Gradient,
    t: i32,
}

impl Adam {
    fn new(model: &FeedforwardModel) -> Self {
        Self {
            m: Gradient::zeros_like(model),
            v: Gradient::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut FeedforwardModel, g: &Gradient, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let update = |w: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..w.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        };
        for l in 0..model.weights.len() {
            update(
                model.weights[l].as_mut_slice(),
                self.m.weights[l].as_mut_slice(),
                self.v.weights[l].as_mut_slice(),
                g.weights[l].as_slice(),
            );
        }
        if let (Some(b), Some(mb), Some(vb), Some(gb)) =
            (&mut model.biases, &mut self.m.biases, &mut self.v.biases, &g.biases)
        {
            for l in 0..b.len() {
                update(b[l].as_mut_slice(), mb[l].as_mut_slice(), vb[l].as_mut_slice(), gb[l].as_slice());
            }
        }
    }
}

/// Argmax class per row; ties go to the lowest index.
pub fn predict(model: &FeedforwardModel, inputs: &DMatrix<f64>) -> Result<Vec<usize>> {
    let fwd = forward(model, inputs)?;
    Ok(fwd
        .logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Accuracy on every example set. `None` marks an empty subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetAccuracy {
    /// All training examples against their training labels.
    pub train: f64,
    pub unpermuted: Option<f64>,
    pub permuted: Option<f64>,
    pub restored: Option<f64>,
    pub test: Option<f64>,
}

impl SubsetAccuracy {
    pub fn get(&self, subset: Subset) -> Option<f64> {
        match subset {
            Subset::Unpermuted => self.unpermuted,
            Subset::Permuted => self.permuted,
            Subset::Restored => self.restored,
            Subset::Test => self.test,
        }
    }
}

fn accuracy_from(pred: &[usize], rows: &[(usize, usize)]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let hits = rows.iter().filter(|(i, l)| pred[*i] == *l).count();
    Some(hits as f64 / rows.len() as f64)
}

/// Unpermuted and permuted examples are scored against training labels,
/// restored and test examples against true labels.
pub fn accuracy_by_subset(model: &FeedforwardModel, data: &PermutedDataset) -> Result<SubsetAccuracy> {
    let train_pred = predict(model, data.train_inputs())?;
    let train_hits = train_pred
        .iter()
        .zip(data.train_labels())
        .filter(|(p, l)| p == l)
        .count();
    let test = if data.test_labels().is_empty() {
        None
    } else {
        let pred = predict(model, data.test_inputs())?;
        accuracy_from(&pred, &subset_rows(data, Subset::Test))
    };
    Ok(SubsetAccuracy {
        train: train_hits as f64 / data.n_train() as f64,
        unpermuted: accuracy_from(&train_pred, &subset_rows(data, Subset::Unpermuted)),
        permuted: accuracy_from(&train_pred, &subset_rows(data, Subset::Permuted)),
        restored: accuracy_from(&train_pred, &subset_rows(data, Subset::Restored)),
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross entropy over the training set against training labels.
    pub loss: f64,
    pub accuracy: SubsetAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    /// Earliest epoch with the highest test accuracy.
    pub best_epoch: usize,
    pub final_epoch: usize,
    pub reached_target: bool,
}

impl TrainingTrace {
    pub fn record(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }

    /// First epoch whose accuracy on `subset` strictly exceeds `threshold`.
    pub fn first_epoch_above(&self, subset: Subset, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.accuracy.get(subset).is_some_and(|a| a > threshold))
            .map(|r| r.epoch)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "train", "unpermuted", "permuted", "restored", "test"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
        for r in &self.records {
            let a = &r.accuracy;
            w.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.loss),
                format!("{:?}", a.train),
                opt(a.unpermuted),
                opt(a.permuted),
                opt(a.restored),
                opt(a.test),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn evaluate(model: &FeedforwardModel, data: &PermutedDataset, targets: &DMatrix<f64>) -> Result<EpochRecord> {
    let fwd = forward(model, data.train_inputs())?;
    let loss = cross_entropy(&fwd, targets);
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence {
            epoch: model.epoch,
            loss,
        });
    }
    Ok(EpochRecord {
        epoch: model.epoch,
        loss,
        accuracy: accuracy_by_subset(model, data)?,
    })
}

/// Trains on the training labels, evaluating after every epoch.
///
/// Snapshots are written at epoch 0, every `checkpoint_stride` epochs, at
/// each new best test accuracy and at the final epoch.
pub fn train(
    model: &mut FeedforwardModel,
    data: &PermutedDataset,
    cfg: &TrainConfig,
    store: &mut CheckpointStore,
) -> Result<TrainingTrace> {
    cfg.validate()?;
    if data.train_inputs().ncols() != model.spec().input_dim() || data.n_classes() != model.spec().n_classes() {
        return Err(Error::Config("dataset shape does not match the network".into()));
    }
    let n = data.n_train();
    let targets = one_hot(data.train_labels(), data.n_classes());
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..n).collect();

    let first = evaluate(model, data, &targets)?;
    let mut best = (first.accuracy.test.unwrap_or(0.0), model.epoch);
    store.insert_if_absent(model)?;
    let mut records = vec![first];
    let mut reached = false;
    let start = model.epoch;

    for epoch in (start + 1)..=(start + cfg.max_epochs) {
        match cfg.optimizer {
            Optimizer::FullBatchGd => {
                let g = batch_gradient(model, data.train_inputs(), &targets)?;
                model.apply(&g, -cfg.learning_rate);
            }
            Optimizer::Adam => {
                let mut r = rng::stream(cfg.seed, &[rng::TAG_SHUFFLE, epoch as u64]);
                order.shuffle(&mut r);
                for chunk in order.chunks(cfg.batch_size) {
                    let x = data.train_inputs().select_rows(chunk);
                    let t = targets.select_rows(chunk);
                    let g = batch_gradient(model, &x, &t)?;
                    adam.step(model, &g, cfg.learning_rate);
                }
            }
        }
        model.epoch = epoch;
        let rec = evaluate(model, data, &targets)?;
        let test_acc = rec.accuracy.test.unwrap_or(0.0);
        let new_best = test_acc > best.0;
        if new_best {
            best = (test_acc, epoch);
        }
        reached = cfg.target_train_accuracy.is_some_and(|t| rec.accuracy.train > t);
        if new_best || (epoch - start) % cfg.checkpoint_stride == 0 {
            store.insert_if_absent(model)?;
        }
        records.push(rec);
        if reached {
            break;
        }
    }
    store.insert_if_absent(model)?;
    Ok(TrainingTrace {
        records,
        best_epoch: best.1,
        final_epoch: model.epoch,
        reached_target: reached,
    })
}

fn batch_gradient(model: &FeedforwardModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<Gradient> {
    let fwd = forward(model, x)?;
    let cot = (&fwd.probs - t) / x.nrows() as f64;
    Ok(backward(model, &fwd, &cot))
}
