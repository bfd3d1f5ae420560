//! Bias-free (by default) feedforward ReLU network with softmax
//! cross-entropy, hand-written backward pass and checkpointing.
//!
//! Layer `l` (1-based, `1..=L`) holds `W^l` with shape `fan_out x fan_in`.
//! Activations `phi^0 = x`, `phi^l = relu(W^l phi^(l-1))` for `l < L`, and
//! the logits are `W^L phi^(L-1)`. Batches are row-major: one example per row.

mod checkpoint;
mod train;

pub use checkpoint::{
    read_checkpoint, spec_hash, write_checkpoint, CheckpointManifest, CheckpointStore, CHECKPOINT_MAGIC, MANIFEST_FILE,
    CHECKPOINT_VERSION,
};
pub use train::{
    accuracy_by_subset, predict, train, EpochRecord, Optimizer, SubsetAccuracy, TrainConfig, TrainingTrace,
};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    /// Input width, hidden widths, number of classes.
    pub layer_widths: Vec<usize>,
    /// Multiplies the Glorot standard deviation `sqrt(2 / (fan_in + fan_out))`.
    pub gain: f64,
    pub bias: bool,
    pub seed: u64,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self::uniform(1024, 1024, 5, 100)
    }
}

impl NetSpec {
    /// `depth` hidden layers of equal width.
    pub fn uniform(input: usize, hidden: usize, depth: usize, classes: usize) -> Self {
        let mut layer_widths = vec![input];
        layer_widths.extend(std::iter::repeat_n(hidden, depth));
        layer_widths.push(classes);
        Self {
            layer_widths,
            gain: 1.0,
            bias: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config("a network needs at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("gain must be finite and >= 0, got {}", self.gain)));
        }
        Ok(())
    }

    /// Number of weight layers `L`.
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Multiplies every hidden width by `factor`, rounding and keeping at
    /// least one unit.
    pub fn scale_hidden(&self, factor: f64) -> Self {
        let mut out = self.clone();
        let last = out.layer_widths.len() - 1;
        for w in &mut out.layer_widths[1..last] {
            *w = ((*w as f64 * factor).round() as usize).max(1);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardModel {
    spec: NetSpec,
    pub(crate) weights: Vec<DMatrix<f64>>,
    pub(crate) biases: Option<Vec<DVector<f64>>>,
    pub epoch: usize,
}

/// Glorot-normal initialization scaled by `spec.gain`.
pub fn init_model(spec: &NetSpec) -> Result<FeedforwardModel> {
    spec.validate()?;
    let weights = spec
        .layer_widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = spec.gain * (2.0 / (fan_in + fan_out) as f64).sqrt();
            if std == 0.0 {
                return DMatrix::zeros(fan_out, fan_in);
            }
            let dist = Normal::new(0.0, std).expect("finite std");
            let mut r = rng::stream(spec.seed, &[rng::TAG_INIT, i as u64]);
            DMatrix::from_fn(fan_out, fan_in, |_, _| dist.sample(&mut r))
        })
        .collect();
    let biases = spec
        .bias
        .then(|| spec.layer_widths[1..].iter().map(|&w| DVector::zeros(w)).collect());
    Ok(FeedforwardModel {
        spec: spec.clone(),
        weights,
        biases,
        epoch: 0,
    })
}

impl FeedforwardModel {
    pub fn from_weights(spec: NetSpec, weights: Vec<DMatrix<f64>>, biases: Option<Vec<DVector<f64>>>) -> Result<Self> {
        spec.validate()?;
        let shapes_ok = weights.len() == spec.n_layers()
            && weights
                .iter()
                .zip(spec.layer_widths.windows(2))
                .all(|(m, w)| m.shape() == (w[1], w[0]));
        if !shapes_ok {
            return Err(Error::InvalidInput("weight shapes do not match the spec".into()));
        }
        match (&biases, spec.bias) {
            (None, false) => {}
            (Some(b), true)
                if b.len() == spec.n_layers() && b.iter().zip(&spec.layer_widths[1..]).all(|(v, &w)| v.len() == w) => {}
            _ => return Err(Error::InvalidInput("bias vectors do not match the spec".into())),
        }
        let finite = weights.iter().flat_map(|m| m.iter()).chain(biases.iter().flatten().flat_map(|v| v.iter()));
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight".into()));
        }
        Ok(Self {
            spec,
            weights,
            biases,
            epoch: 0,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// `W^l` for `l` in `1..=L`.
    pub fn weight(&self, l: usize) -> &DMatrix<f64> {
        &self.weights[l - 1]
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> Option<&[DVector<f64>]> {
        self.biases.as_deref()
    }

    /// Replaces layer `l` (1-based) with the same layer of `other`.
    pub fn with_layer_from(&self, other: &FeedforwardModel, l: usize) -> Result<Self> {
        if l == 0 || l > self.n_layers() {
            return Err(Error::InvalidInput(format!("layer {l} outside 1..={}", self.n_layers())));
        }
        if other.weights[l - 1].shape() != self.weights[l - 1].shape() {
            return Err(Error::InvalidInput(format!("layer {l} shapes differ")));
        }
        let mut out = self.clone();
        out.weights[l - 1] = other.weights[l - 1].clone();
        if let (Some(b), Some(ob)) = (&mut out.biases, &other.biases) {
            b[l - 1] = ob[l - 1].clone();
        }
        Ok(out)
    }

    pub(crate) fn apply(&mut self, step: &Gradient, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&step.weights) {
            *w += g * scale;
        }
        if let (Some(b), Some(g)) = (&mut self.biases, &step.biases) {
            for (b, g) in b.iter_mut().zip(g) {
                b.axpy(scale, g, 1.0);
            }
        }
    }
}

/// Everything the forward pass computes.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `phi^0 .. phi^(L-1)`: the input and every hidden post-activation.
    pub activations: Vec<DMatrix<f64>>,
    pub logits: DMatrix<f64>,
    /// Softmax of the logits; rows sum to one.
    pub probs: DMatrix<f64>,
}

impl Forward {
    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }
}

fn affine(x: &DMatrix<f64>, w: &DMatrix<f64>, b: Option<&DVector<f64>>) -> DMatrix<f64> {
    let mut z = x * w.transpose();
    if let Some(b) = b {
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
    }
    z
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Row-wise `log sum exp`.
pub fn log_partition(logits: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        logits.nrows(),
        logits.row_iter().map(|row| {
            let max = row.max();
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        }),
    )
}

pub fn forward(model: &FeedforwardModel, inputs: &DMatrix<f64>) -> Result<Forward> {
    if inputs.ncols() != model.spec.input_dim() {
        return Err(Error::InvalidInput(format!(
            "input width {} does not match network input {}",
            inputs.ncols(),
            model.spec.input_dim()
        )));
    }
    let l_count = model.n_layers();
    let mut activations = Vec::with_capacity(l_count);
    activations.push(inputs.clone());
    for l in 1..l_count {
        let bias = model.biases.as_ref().map(|b| &b[l - 1]);
        let mut z = affine(&activations[l - 1], &model.weights[l - 1], bias);
        z.apply(|v| *v = v.max(0.0));
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
        activations.push(z);
    }
    let bias = model.biases.as_ref().map(|b| &b[l_count - 1]);
    let logits = affine(&activations[l_count - 1], &model.weights[l_count - 1], bias);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer: l_count });
    }
    let probs = softmax_rows(&logits);
    Ok(Forward {
        activations,
        logits,
        probs,
    })
}

/// Per-layer parameter tensors shaped like the model's.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Option<Vec<DVector<f64>>>,
}

impl Gradient {
    pub fn zeros_like(model: &FeedforwardModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: model
                .biases
                .as_ref()
                .map(|b| b.iter().map(|v| DVector::zeros(v.len())).collect()),
        }
    }

    /// Frobenius norm of layer `l` (1-based), bias included.
    pub fn layer_norm(&self, l: usize) -> f64 {
        let w = self.weights[l - 1].norm_squared();
        let b = self.biases.as_ref().map_or(0.0, |b| b[l - 1].norm_squared());
        (w + b).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (1..=self.weights.len())
            .map(|l| self.layer_norm(l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Gradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b * scale;
        }
        if let (Some(a), Some(b)) = (&mut self.biases, &other.biases) {
            for (a, b) in a.iter_mut().zip(b) {
                a.axpy(scale, b, 1.0);
            }
        }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        for w in &mut self.weights {
            *w *= scale;
        }
        for b in self.biases.iter_mut().flatten() {
            *b *= scale;
        }
        self
    }
}

/// Pulls a logit cotangent `G` (batch x classes, including any batch
/// averaging) back to every parameter: returns `sum_x G(x) . dN(x)/dtheta`.
pub fn backward(model: &FeedforwardModel, fwd: &Forward, cotangent: &DMatrix<f64>) -> Gradient {
    let l_count = model.n_layers();
    assert_eq!(cotangent.shape(), fwd.logits.shape(), "cotangent shape");
    let mut grads = vec![DMatrix::zeros(0, 0); l_count];
    let mut bias_grads = model.biases.as_ref().map(|_| vec![DVector::zeros(0); l_count]);
    let mut delta = cotangent.clone();
    for l in (1..=l_count).rev() {
        let a = &fwd.activations[l - 1];
        grads[l - 1] = delta.transpose() * a;
        if let Some(bg) = &mut bias_grads {
            bg[l - 1] = delta.row_sum().transpose();
        }
        if l > 1 {
            let mut d = &delta * &model.weights[l - 1];
            d.zip_apply(a, |g, act| {
                if act <= 0.0 {
                    *g = 0.0
                }
            });
            delta = d;
        }
    }
    Gradient {
        weights: grads,
        biases: bias_grads,
    }
}

/// Rows of `labels` as one-hot distributions over `n_classes`.
pub fn one_hot(labels: &[usize], n_classes: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    m
}

/// Batch-mean cross entropy `-<sum_c P_L log P_M>`.
pub fn cross_entropy(fwd: &Forward, targets: &DMatrix<f64>) -> f64 {
    let log_z = log_partition(&fwd.logits);
    let b = fwd.batch_size() as f64;
    let mut total = 0.0;
    for i in 0..fwd.batch_size() {
        for c in 0..targets.ncols() {
            let t = targets[(i, c)];
            if t != 0.0 {
                total -= t * (fwd.logits[(i, c)] - log_z[i]);
            }
        }
    }
    total / b
}

/// Loss and exact gradient of the batch-mean cross entropy for target
/// distributions `targets` (rows of `P_L`).
pub fn loss_and_grad(
    model: &FeedforwardModel,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<(f64, Gradient)> {
    if inputs.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if targets.shape() != (inputs.nrows(), model.spec.n_classes()) {
        return Err(Error::InvalidInput("target shape does not match batch x classes".into()));
    }
    let fwd = forward(model, inputs)?;
    let loss = cross_entropy(&fwd, targets);
    let cot = (&fwd.probs - targets) / inputs.nrows() as f64;
    Ok((loss, backward(model, &fwd, &cot)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> NetSpec {
        NetSpec {
            layer_widths: vec![6, 5, 4, 3],
            gain: 1.0,
            bias: false,
            seed: 3,
        }
    }

    #[test]
    fn zero_gain_gives_uniform_outputs() {
        let mut s = NetSpec::uniform(8, 16, 2, 100);
        s.gain = 0.0;
        let m = init_model(&s).unwrap();
        let x = DMatrix::from_fn(4, 8, |i, j| (i * 8 + j) as f64);
        let fwd = forward(&m, &x).unwrap();
        assert!(fwd.probs.iter().all(|&p| (p - 0.01).abs() < 1e-15));
        let (loss, _) = loss_and_grad(&m, &x, &one_hot(&[0, 1, 2, 3], 100)).unwrap();
        assert!((loss - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let logits = DMatrix::from_fn(3, 5, |i, j| (i as f64 - j as f64) * 7.3);
        let shifted = logits.map(|v| v + 123.4);
        let (a, b) = (softmax_rows(&logits), softmax_rows(&shifted));
        assert!((a - &b).amax() < 1e-12);
        for row in b.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_targets_zero_the_final_gradient() {
        let m = init_model(&spec()).unwrap();
        let x = DMatrix::from_fn(7, 6, |i, j| ((i * 3 + j) as f64).sin());
        let fwd = forward(&m, &x).unwrap();
        let (_, g) = loss_and_grad(&m, &x, &fwd.probs).unwrap();
        assert!(g.norm() < 1e-10);
    }

    #[test]
    fn rejects_bad_input_width() {
        let m = init_model(&spec()).unwrap();
        assert!(forward(&m, &DMatrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn layer_swap_and_width_scaling() {
        let a = init_model(&spec()).unwrap();
        let b = init_model(&NetSpec { seed: 4, ..spec() }).unwrap();
        let c = a.with_layer_from(&b, 2).unwrap();
        assert_eq!(c.weight(2), b.weight(2));
        assert_eq!(c.weight(1), a.weight(1));
        assert_eq!(c.with_layer_from(&a, 2).unwrap(), a);
        assert_eq!(spec().scale_hidden(0.5).layer_widths, vec![6, 3, 2, 3]);
    }
}
