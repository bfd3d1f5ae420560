//! Exact split of the cross-entropy gradient into a label-dependent and a
//! label-independent part.
//!
//! With logits `N_c(x)` and targets `P_L(c|x)`, the loss splits as
//! `L = L_dep + L_ind` with `L_dep = -<sum_c P_L N_c>` and
//! `L_ind = <log Z>`. For parameters `theta` let `g_c(x) = dN_c(x)/dtheta`
//! and let `gbar` be the reference-set mean of `(1/P) sum_c g_c`. Then
//!
//! ```text
//! dL_dep = -<sum_c P_L(c|x) (g_c(x) - gbar)>
//! dL_ind = +<sum_c P_M(c|x) (g_c(x) - gbar)>
//! ```
//!
//! and `dL_dep + dL_ind` is exactly the loss gradient because both target
//! rows sum to one. At the last layer `gbar` reduces to `phibar / P`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{backward, forward, log_partition, one_hot, CheckpointStore, FeedforwardModel, Forward, Gradient};
use crate::synthdata::{subset_rows, PermutedDataset, Subset};

/// Norms at or below this make a log ratio undefined.
pub const RATIO_FLOOR: f64 = 1e-300;

/// `(L_dep, L_ind)` for a batch; their sum is the cross entropy.
pub fn decompose_loss(model: &FeedforwardModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_batch(model, inputs, targets)?;
    let fwd = forward(model, inputs)?;
    let b = inputs.nrows() as f64;
    let dep = -targets.component_mul(&fwd.logits).sum() / b;
    let ind = log_partition(&fwd.logits).sum() / b;
    Ok((dep, ind))
}

fn check_batch(model: &FeedforwardModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if targets.shape() != (inputs.nrows(), model.spec().n_classes()) {
        return Err(Error::InvalidInput("target shape does not match batch x classes".into()));
    }
    Ok(())
}

/// `gbar`: the mean over `reference` of `(1/P) sum_c dN_c/dtheta`.
pub fn centering_term(model: &FeedforwardModel, reference: &DMatrix<f64>) -> Result<Gradient> {
    if reference.nrows() == 0 {
        return Err(Error::InvalidInput("empty reference set".into()));
    }
    let fwd = forward(model, reference)?;
    let p = model.spec().n_classes() as f64;
    let cot = DMatrix::from_element(reference.nrows(), model.spec().n_classes(), 1.0 / (p * reference.nrows() as f64));
    Ok(backward(model, &fwd, &cot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradParts {
    pub dep: Gradient,
    pub ind: Gradient,
}

impl GradParts {
    pub fn total(&self) -> Gradient {
        let mut t = self.dep.clone();
        t.axpy(1.0, &self.ind);
        t
    }
}

/// Both parts at every layer, by two vector-Jacobian products.
pub fn grad_parts(
    model: &FeedforwardModel,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    centering: &Gradient,
) -> Result<GradParts> {
    check_batch(model, inputs, targets)?;
    let fwd = forward(model, inputs)?;
    Ok(parts_from_forward(model, &fwd, targets, centering))
}

fn parts_from_forward(model: &FeedforwardModel, fwd: &Forward, targets: &DMatrix<f64>, centering: &Gradient) -> GradParts {
    let b = fwd.batch_size() as f64;
    let mut dep = backward(model, fwd, &(targets / -b));
    dep.axpy(1.0, centering);
    let mut ind = backward(model, fwd, &(&fwd.probs / b));
    ind.axpy(-1.0, centering);
    GradParts { dep, ind }
}

/// Last-layer parts in closed form:
/// `dep[a][b] = -<P_L(a|x) phi_b(x)> + phibar_b / P` and
/// `ind[a][b] = <P_M(a|x) phi_b(x)> - phibar_b / P`, with `phi` the last
/// hidden activation and `phibar` its mean over `reference`. Weights only.
pub fn grad_parts_final_layer(
    model: &FeedforwardModel,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_batch(model, inputs, targets)?;
    let fwd = forward(model, inputs)?;
    let phi = fwd.activations.last().unwrap();
    let ref_fwd = forward(model, reference)?;
    let ref_phi = ref_fwd.activations.last().unwrap();
    let phibar = DVector::from_iterator(ref_phi.ncols(), ref_phi.column_iter().map(|c| c.mean()));
    let p = model.spec().n_classes() as f64;
    let b = inputs.nrows() as f64;
    let centre = DMatrix::from_fn(targets.ncols(), phi.ncols(), |_, j| phibar[j] / p);
    let dep = -(targets.transpose() * phi) / b + &centre;
    let ind = (fwd.probs.transpose() * phi) / b - &centre;
    Ok((dep, ind))
}

/// Per-example logit Jacobians with respect to the pre-activation of layer
/// `l`, `J^l(x)` of shape `P x width_l`, by one backward sweep per class.
fn jacobians(model: &FeedforwardModel, fwd: &Forward, example: usize, l: usize) -> DMatrix<f64> {
    let big_l = model.n_layers();
    let p = model.spec().n_classes();
    let mut j = DMatrix::<f64>::identity(p, p);
    for k in ((l + 1)..=big_l).rev() {
        let mut next = &j * model.weight(k);
        let act = fwd.activations[k - 1].row(example);
        for (c, &a) in act.iter().enumerate() {
            if a <= 0.0 {
                next.column_mut(c).fill(0.0);
            }
        }
        j = next;
    }
    j
}

/// Layer-`l` weight parts from explicit per-example Jacobians:
/// `g_c(x) = J^l_c(x) phi^(l-1)(x)^T`. Independent of [`grad_parts`].
pub fn grad_parts_layer(
    model: &FeedforwardModel,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    l: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_batch(model, inputs, targets)?;
    if l == 0 || l > model.n_layers() {
        return Err(Error::InvalidInput(format!("layer {l} outside 1..={}", model.n_layers())));
    }
    let p = model.spec().n_classes();
    let shape = model.weight(l).shape();
    let weighted_sum = |fwd: &Forward, weights: &dyn Fn(usize) -> DVector<f64>| {
        let mut acc = DMatrix::zeros(shape.0, shape.1);
        for x in 0..fwd.batch_size() {
            let j = jacobians(model, fwd, x, l);
            let coeff = j.tr_mul(&weights(x));
            acc += coeff * fwd.activations[l - 1].row(x);
        }
        acc
    };
    let ref_fwd = forward(model, reference)?;
    let uniform = DVector::from_element(p, 1.0 / p as f64);
    let gbar = weighted_sum(&ref_fwd, &|_| uniform.clone()) / reference.nrows() as f64;
    let fwd = forward(model, inputs)?;
    let b = inputs.nrows() as f64;
    let dep = -weighted_sum(&fwd, &|x| targets.row(x).transpose()) / b + &gbar;
    let ind = weighted_sum(&fwd, &|x| fwd.probs.row(x).transpose()) / b - &gbar;
    Ok((dep, ind))
}

/// Example set used in a gradient report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradSubset {
    All,
    Unpermuted,
    Permuted,
}

impl GradSubset {
    pub const ALL: [GradSubset; 3] = [GradSubset::All, GradSubset::Unpermuted, GradSubset::Permuted];

    pub fn name(self) -> &'static str {
        match self {
            GradSubset::All => "all",
            GradSubset::Unpermuted => "unpermuted",
            GradSubset::Permuted => "permuted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormRow {
    pub epoch: usize,
    /// Weight layer `1..=L`; `None` for the full parameter vector.
    pub layer: Option<usize>,
    pub subset: GradSubset,
    pub dep_norm: f64,
    pub ind_norm: f64,
    pub total_norm: f64,
    /// `ln(|dep| / |ind|)`; `None` when either norm is below [`RATIO_FLOOR`].
    pub log_dep_over_ind: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRatioRow {
    pub epoch: usize,
    pub layer: Option<usize>,
    /// `ln(|dep^unperm| / |dep^perm|)`.
    pub log_dep_unperm_over_perm: Option<f64>,
    /// `ln(|ind^unperm| / |ind^perm|)`.
    pub log_ind_unperm_over_perm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradDecompReport {
    pub rows: Vec<GradNormRow>,
    pub ratios: Vec<GradRatioRow>,
    /// Requested epochs without a stored checkpoint.
    pub missing_epochs: Vec<usize>,
    /// Averaging set used for the centering term.
    pub centering: String,
}

fn log_ratio(a: f64, b: f64) -> Option<f64> {
    (a > RATIO_FLOOR && b > RATIO_FLOOR).then(|| (a / b).ln())
}

impl GradDecompReport {
    pub fn row(&self, epoch: usize, layer: Option<usize>, subset: GradSubset) -> Option<&GradNormRow> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.layer == layer && r.subset == subset)
    }

    pub fn ratio(&self, epoch: usize, layer: Option<usize>) -> Option<&GradRatioRow> {
        self.ratios.iter().find(|r| r.epoch == epoch && r.layer == layer)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "layer",
            "subset",
            "dep_norm",
            "ind_norm",
            "total_norm",
            "log_dep_over_ind",
            "log_dep_unperm_over_perm",
            "log_ind_unperm_over_perm",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
        let layer = |l: Option<usize>| l.map_or_else(|| "all".to_string(), |l| l.to_string());
        for r in &self.rows {
            let ratio = self.ratio(r.epoch, r.layer);
            w.write_record([
                r.epoch.to_string(),
                layer(r.layer),
                r.subset.name().to_string(),
                format!("{:?}", r.dep_norm),
                format!("{:?}", r.ind_norm),
                format!("{:?}", r.total_norm),
                opt(r.log_dep_over_ind),
                opt(ratio.and_then(|x| x.log_dep_unperm_over_perm)),
                opt(ratio.and_then(|x| x.log_ind_unperm_over_perm)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Norms of both parts on all, unpermuted and permuted training examples
/// (each with its training labels) at every requested epoch and layer. The
/// centering term is averaged over the full training set.
pub fn subset_grad_report(store: &CheckpointStore, data: &PermutedDataset, epochs: &[usize]) -> Result<GradDecompReport> {
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut missing = Vec::new();
    let targets_all = one_hot(data.train_labels(), data.n_classes());
    for &epoch in epochs {
        let model = match store.get(epoch) {
            Ok(m) => m,
            Err(Error::MissingCheckpoint(e)) => {
                missing.push(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let gbar = centering_term(&model, data.train_inputs())?;
        let mut parts: Vec<(GradSubset, GradParts)> = Vec::new();
        for subset in GradSubset::ALL {
            let idx: Vec<usize> = match subset {
                GradSubset::All => (0..data.n_train()).collect(),
                GradSubset::Unpermuted => subset_rows(data, Subset::Unpermuted).into_iter().map(|r| r.0).collect(),
                GradSubset::Permuted => subset_rows(data, Subset::Permuted).into_iter().map(|r| r.0).collect(),
            };
            if idx.is_empty() {
                continue;
            }
            let x = data.train_inputs().select_rows(&idx);
            let t = targets_all.select_rows(&idx);
            parts.push((subset, grad_parts(&model, &x, &t, &gbar)?));
        }
        let layers = std::iter::once(None).chain((1..=model.n_layers()).map(Some));
        for layer in layers {
            let norm = |g: &Gradient| layer.map_or_else(|| g.norm(), |l| g.layer_norm(l));
            for (subset, p) in &parts {
                let (d, i) = (norm(&p.dep), norm(&p.ind));
                rows.push(GradNormRow {
                    epoch,
                    layer,
                    subset: *subset,
                    dep_norm: d,
                    ind_norm: i,
                    total_norm: norm(&p.total()),
                    log_dep_over_ind: log_ratio(d, i),
                });
            }
            let find = |s: GradSubset| parts.iter().find(|(x, _)| *x == s).map(|(_, p)| p);
            if let (Some(u), Some(p)) = (find(GradSubset::Unpermuted), find(GradSubset::Permuted)) {
                ratios.push(GradRatioRow {
                    epoch,
                    layer,
                    log_dep_unperm_over_perm: log_ratio(norm(&u.dep), norm(&p.dep)),
                    log_ind_unperm_over_perm: log_ratio(norm(&u.ind), norm(&p.ind)),
                });
            }
        }
    }
    Ok(GradDecompReport {
        rows,
        ratios,
        missing_epochs: missing,
        centering: "train".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, loss_and_grad, softmax_rows, NetSpec};

    fn setup() -> (FeedforwardModel, DMatrix<f64>, DMatrix<f64>) {
        let spec = NetSpec {
            layer_widths: vec![5, 7, 6, 4],
            gain: 1.5,
            bias: false,
            seed: 9,
        };
        let m = init_model(&spec).unwrap();
        let x = DMatrix::from_fn(12, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin() * 2.0);
        let t = softmax_rows(&DMatrix::from_fn(12, 4, |i, j| ((i + 2 * j) as f64).cos() * 3.0));
        (m, x, t)
    }

    #[test]
    fn loss_parts_sum_to_cross_entropy() {
        let (m, x, t) = setup();
        let (dep, ind) = decompose_loss(&m, &x, &t).unwrap();
        let (loss, _) = loss_and_grad(&m, &x, &t).unwrap();
        assert!((dep + ind - loss).abs() < 1e-12);
    }

    #[test]
    fn parts_sum_to_total_gradient() {
        let (m, x, t) = setup();
        let gbar = centering_term(&m, &x).unwrap();
        let parts = grad_parts(&m, &x, &t, &gbar).unwrap();
        let (_, g) = loss_and_grad(&m, &x, &t).unwrap();
        let mut diff = parts.total();
        diff.axpy(-1.0, &g);
        assert!(diff.norm() <= 1e-12 * g.norm().max(1.0));
    }

    #[test]
    fn explicit_paths_match_vjp() {
        let (m, x, t) = setup();
        let reference = x.rows(0, 8).into_owned();
        let gbar = centering_term(&m, &reference).unwrap();
        let parts = grad_parts(&m, &x, &t, &gbar).unwrap();
        for l in 1..=m.n_layers() {
            let (d, i) = grad_parts_layer(&m, &x, &t, &reference, l).unwrap();
            assert!((&d - &parts.dep.weights[l - 1]).amax() < 1e-12);
            assert!((&i - &parts.ind.weights[l - 1]).amax() < 1e-12);
        }
        let (d, i) = grad_parts_final_layer(&m, &x, &t, &reference).unwrap();
        assert!((&d - &parts.dep.weights[2]).amax() < 1e-12);
        assert!((&i - &parts.ind.weights[2]).amax() < 1e-12);
    }

    #[test]
    fn uniform_targets_zero_the_dependent_part() {
        let (m, x, _) = setup();
        let t = DMatrix::from_element(12, 4, 0.25);
        let gbar = centering_term(&m, &x).unwrap();
        let parts = grad_parts(&m, &x, &t, &gbar).unwrap();
        assert!(parts.dep.norm() < 1e-15);
    }
}
