//! Synthetic sphere-manifold dataset with label permutation.
//!
//! Classes come in diametrically opposed pairs: class `2k` is centred at
//! `+e_k` and class `2k + 1` at `-e_k`. Each class's examples lie on a sphere
//! of radius `r` inside a `d`-dimensional subspace that contains the class's
//! center axis. Two opposed spheres are linearly separable iff `r < 1`.

mod format;

pub use format::{read_dataset, write_dataset, write_dataset_csv, DATASET_MAGIC, DATASET_VERSION};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ManifoldSet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SphereDatasetSpec {
    pub n_classes: usize,
    pub ambient_dim: usize,
    pub sphere_dim: usize,
    pub radius: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SphereDatasetSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SphereDatasetSpec {
    /// Laptop-scale default.
    pub fn desk() -> Self {
        Self {
            n_classes: 50,
            ambient_dim: 512,
            sphere_dim: 20,
            radius: 5.0,
            train_per_class: 200,
            test_per_class: 50,
            seed: 0,
        }
    }

    /// Full-size configuration: 100 classes of 30-spheres in 1024 dimensions.
    pub fn full() -> Self {
        Self {
            n_classes: 100,
            ambient_dim: 1024,
            sphere_dim: 30,
            radius: 5.0,
            train_per_class: 500,
            test_per_class: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 || self.n_classes % 2 != 0 {
            return bad(format!("n_classes must be even and >= 2, got {}", self.n_classes));
        }
        if self.sphere_dim == 0 || self.sphere_dim > self.ambient_dim {
            return bad(format!(
                "sphere_dim must be in 1..=ambient_dim ({}), got {}",
                self.ambient_dim, self.sphere_dim
            ));
        }
        if self.n_classes / 2 > self.ambient_dim {
            return bad(format!(
                "{} opposed pairs do not fit in {} dimensions",
                self.n_classes / 2,
                self.ambient_dim
            ));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be finite and >= 0, got {}", self.radius));
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be >= 1".into());
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.n_classes * self.train_per_class
    }

    pub fn n_test(&self) -> usize {
        self.n_classes * self.test_per_class
    }

    /// `+e_k` for class `2k`, `-e_k` for class `2k + 1`.
    pub fn center(&self, class: usize) -> DVector<f64> {
        let mut c = DVector::zeros(self.ambient_dim);
        c[class / 2] = if class % 2 == 0 { 1.0 } else { -1.0 };
        c
    }
}

/// Training examples with true labels, training labels and the permutation
/// mask, plus a held-out test split with true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedDataset {
    spec: SphereDatasetSpec,
    train_inputs: DMatrix<f64>,
    true_labels: Vec<usize>,
    train_labels: Vec<usize>,
    permuted_mask: Vec<bool>,
    epsilon: f64,
    permutation_seed: u64,
    test_inputs: DMatrix<f64>,
    test_labels: Vec<usize>,
}

impl PermutedDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spec: SphereDatasetSpec,
        train_inputs: DMatrix<f64>,
        true_labels: Vec<usize>,
        train_labels: Vec<usize>,
        permuted_mask: Vec<bool>,
        epsilon: f64,
        permutation_seed: u64,
        test_inputs: DMatrix<f64>,
        test_labels: Vec<usize>,
    ) -> Result<Self> {
        let n = train_inputs.nrows();
        let p = spec.n_classes;
        let fail = |m: String| Err(Error::InvalidInput(m));
        if true_labels.len() != n || train_labels.len() != n || permuted_mask.len() != n {
            return fail("label/mask lengths do not match the training rows".into());
        }
        if test_labels.len() != test_inputs.nrows() {
            return fail("test label count does not match test rows".into());
        }
        if train_inputs.ncols() != spec.ambient_dim || test_inputs.ncols() != spec.ambient_dim {
            return fail("input width does not match ambient_dim".into());
        }
        if true_labels.iter().chain(&train_labels).chain(&test_labels).any(|&l| l >= p) {
            return fail(format!("label out of range for {p} classes"));
        }
        for i in 0..n {
            if !permuted_mask[i] && train_labels[i] != true_labels[i] {
                return fail(format!("example {i} is unpermuted but relabelled"));
            }
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return fail(format!("epsilon {epsilon} outside [0, 1]"));
        }
        if train_inputs.iter().chain(test_inputs.iter()).any(|v| !v.is_finite()) {
            return fail("non-finite input".into());
        }
        Ok(Self {
            spec,
            train_inputs,
            true_labels,
            train_labels,
            permuted_mask,
            epsilon,
            permutation_seed,
            test_inputs,
            test_labels,
        })
    }

    pub fn spec(&self) -> &SphereDatasetSpec {
        &self.spec
    }
    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }
    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }
    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }
    pub fn train_labels(&self) -> &[usize] {
        &self.train_labels
    }
    pub fn permuted_mask(&self) -> &[bool] {
        &self.permuted_mask
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn permutation_seed(&self) -> u64 {
        self.permutation_seed
    }
    pub fn test_inputs(&self) -> &DMatrix<f64> {
        &self.test_inputs
    }
    pub fn test_labels(&self) -> &[usize] {
        &self.test_labels
    }
    pub fn n_train(&self) -> usize {
        self.train_inputs.nrows()
    }
    pub fn n_permuted(&self) -> usize {
        self.permuted_mask.iter().filter(|&&m| m).count()
    }

    /// Keeps the first `n` training examples of every class (by true label),
    /// dropping the permutation. Used to vary the dataset size.
    pub fn truncate_train_per_class(&self, n: usize) -> Result<Self> {
        let mut keep = Vec::new();
        let mut seen = vec![0usize; self.n_classes()];
        for (i, &c) in self.true_labels.iter().enumerate() {
            if seen[c] < n {
                seen[c] += 1;
                keep.push(i);
            }
        }
        if seen.iter().any(|&s| s < n) {
            return Err(Error::InvalidInput(format!(
                "fewer than {n} training examples in some class"
            )));
        }
        let mut spec = self.spec.clone();
        spec.train_per_class = n;
        let inputs = self.train_inputs.select_rows(&keep);
        let labels: Vec<usize> = keep.iter().map(|&i| self.true_labels[i]).collect();
        Self::from_parts(
            spec,
            inputs,
            labels.clone(),
            labels,
            vec![false; keep.len()],
            0.0,
            0,
            self.test_inputs.clone(),
            self.test_labels.clone(),
        )
    }
}

/// Orthonormal `d x D` basis whose first row is `axis` and whose remaining
/// rows are random directions orthogonal to it.
fn sphere_basis(axis: &DVector<f64>, d: usize, r: &mut impl Rng) -> DMatrix<f64> {
    let n = axis.len();
    let mut rows: Vec<DVector<f64>> = vec![axis.normalize()];
    while rows.len() < d {
        let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(r));
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &rows {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            rows.push(v / norm);
        }
    }
    DMatrix::from_fn(d, n, |i, j| rows[i][j])
}

fn sample_sphere(
    center: &DVector<f64>,
    basis: &DMatrix<f64>,
    radius: f64,
    count: usize,
    r: &mut impl Rng,
) -> DMatrix<f64> {
    let d = basis.nrows();
    let mut out = DMatrix::zeros(count, center.len());
    for i in 0..count {
        let g: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(r));
        let u = &g / g.norm();
        let x = center + basis.tr_mul(&u) * radius;
        out.row_mut(i).copy_from(&x.transpose());
    }
    out
}

/// Draws the train and test splits; no labels are permuted yet.
pub fn generate_spheres(spec: &SphereDatasetSpec) -> Result<PermutedDataset> {
    spec.validate()?;
    let (p, dim) = (spec.n_classes, spec.ambient_dim);
    let mut train = DMatrix::zeros(spec.n_train(), dim);
    let mut test = DMatrix::zeros(spec.n_test(), dim);
    let mut train_labels = Vec::with_capacity(spec.n_train());
    let mut test_labels = Vec::with_capacity(spec.n_test());
    for class in 0..p {
        let mut r = rng::stream(spec.seed, &[rng::TAG_DATA, class as u64]);
        let center = spec.center(class);
        let basis = sphere_basis(&center, spec.sphere_dim, &mut r);
        let tr = sample_sphere(&center, &basis, spec.radius, spec.train_per_class, &mut r);
        let te = sample_sphere(&center, &basis, spec.radius, spec.test_per_class, &mut r);
        train
            .rows_mut(class * spec.train_per_class, spec.train_per_class)
            .copy_from(&tr);
        test.rows_mut(class * spec.test_per_class, spec.test_per_class)
            .copy_from(&te);
        train_labels.extend(std::iter::repeat_n(class, spec.train_per_class));
        test_labels.extend(std::iter::repeat_n(class, spec.test_per_class));
    }
    let n = train_labels.len();
    PermutedDataset::from_parts(
        spec.clone(),
        train,
        train_labels.clone(),
        train_labels,
        vec![false; n],
        0.0,
        0,
        test,
        test_labels,
    )
}

/// Relabels exactly `round(epsilon * n_train)` training examples chosen
/// uniformly, each with a label drawn uniformly over all classes. The new
/// label may coincide with the true one. Any earlier permutation is undone
/// first.
pub fn permute_labels(data: &PermutedDataset, epsilon: f64, seed: u64) -> Result<PermutedDataset> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let n = data.n_train();
    let count = (epsilon * n as f64).round() as usize;
    let mut r = rng::stream(seed, &[rng::TAG_PERMUTE]);
    let mut chosen = index::sample(&mut r, n, count).into_vec();
    chosen.sort_unstable();
    let mut train_labels = data.true_labels.clone();
    let mut mask = vec![false; n];
    for i in chosen {
        mask[i] = true;
        train_labels[i] = r.random_range(0..data.n_classes());
    }
    let mut out = data.clone();
    out.train_labels = train_labels;
    out.permuted_mask = mask;
    out.epsilon = epsilon;
    out.permutation_seed = seed;
    Ok(out)
}

/// The four example sets used for manifold analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    /// Unpermuted training examples, grouped by their (true) training label.
    Unpermuted,
    /// Permuted training examples, grouped by their random training label.
    Permuted,
    /// Permuted training examples, grouped by their true label.
    Restored,
    /// Held-out examples, grouped by their true label.
    Test,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::Unpermuted, Subset::Permuted, Subset::Restored, Subset::Test];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Unpermuted => "unpermuted",
            Subset::Permuted => "permuted",
            Subset::Restored => "restored",
            Subset::Test => "test",
        }
    }

    pub fn uses_test_split(self) -> bool {
        self == Subset::Test
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subset `{s}`")))
    }
}

/// Every `(row, grouping label)` in the subset, in row order. Rows index the
/// training split, or the test split for [`Subset::Test`].
pub fn subset_rows(data: &PermutedDataset, subset: Subset) -> Vec<(usize, usize)> {
    match subset {
        Subset::Test => data.test_labels.iter().copied().enumerate().collect(),
        Subset::Unpermuted => (0..data.n_train())
            .filter(|&i| !data.permuted_mask[i])
            .map(|i| (i, data.train_labels[i]))
            .collect(),
        Subset::Permuted => (0..data.n_train())
            .filter(|&i| data.permuted_mask[i])
            .map(|i| (i, data.train_labels[i]))
            .collect(),
        Subset::Restored => (0..data.n_train())
            .filter(|&i| data.permuted_mask[i])
            .map(|i| (i, data.true_labels[i]))
            .collect(),
    }
}

/// Which rows form each manifold: classes `0..p_sel`, `m_sel` rows each,
/// sampled without replacement under `(seed, subset, class)`.
pub fn subset_membership(
    data: &PermutedDataset,
    subset: Subset,
    p_sel: usize,
    m_sel: usize,
    seed: u64,
) -> Result<Vec<(usize, Vec<usize>)>> {
    if p_sel < 2 || p_sel > data.n_classes() {
        return Err(Error::Config(format!(
            "p_sel must be in 2..={}, got {p_sel}",
            data.n_classes()
        )));
    }
    if m_sel == 0 {
        return Err(Error::Config("m_sel must be >= 1".into()));
    }
    let rows = subset_rows(data, subset);
    if rows.is_empty() {
        return Err(Error::EmptySubset(subset.name().into()));
    }
    let mut by_class = vec![Vec::new(); data.n_classes()];
    for (row, label) in rows {
        by_class[label].push(row);
    }
    let deficient: Vec<(usize, usize)> = (0..p_sel)
        .filter(|&c| by_class[c].len() < m_sel)
        .map(|c| (c, by_class[c].len()))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::InsufficientExamples {
            subset: subset.name().into(),
            deficient,
        });
    }
    let tag = subset as u64;
    Ok((0..p_sel)
        .map(|c| {
            let members = &by_class[c];
            let mut r = rng::stream(seed, &[rng::TAG_SUBSET, tag, c as u64]);
            let mut picked: Vec<usize> = index::sample(&mut r, members.len(), m_sel)
                .into_iter()
                .map(|k| members[k])
                .collect();
            picked.sort_unstable();
            (c, picked)
        })
        .collect())
}

/// Builds the manifolds of one subset from activations row-aligned with the
/// training split (or the test split for [`Subset::Test`]).
pub fn subset_manifolds(
    data: &PermutedDataset,
    activations: &DMatrix<f64>,
    subset: Subset,
    p_sel: usize,
    m_sel: usize,
    seed: u64,
) -> Result<ManifoldSet> {
    let expected = if subset.uses_test_split() {
        data.test_inputs.nrows()
    } else {
        data.n_train()
    };
    if activations.nrows() != expected {
        return Err(Error::InvalidInput(format!(
            "activations have {} rows, subset `{subset}` needs {expected}",
            activations.nrows()
        )));
    }
    let membership = subset_membership(data, subset, p_sel, m_sel, seed)?;
    let mut ids = Vec::with_capacity(p_sel);
    let manifolds = membership
        .into_iter()
        .map(|(c, rows)| {
            ids.push(c);
            activations.select_rows(&rows)
        })
        .collect();
    ManifoldSet::new(manifolds, ids)
}
