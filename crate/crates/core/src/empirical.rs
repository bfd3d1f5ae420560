//! Empirical manifold capacity: the load `P/N` at which half of the random
//! manifold dichotomies are linearly separable, located by bisection over
//! the number of randomly projected features.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ManifoldSet;
use crate::rng;

/// Slack sum below which the unit-margin program counts as separable.
pub const SEPARABLE_SLACK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Separability {
    Separable,
    NotSeparable,
    /// The LP solver failed; counted separately from both outcomes.
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyTrial {
    pub labels: Vec<i8>,
    pub n_features: usize,
    pub outcome: Separability,
    /// Smallest functional margin `y (w.x + b)` reached by the LP solution.
    pub margin_proxy: f64,
}

impl DichotomyTrial {
    pub fn separable(&self) -> bool {
        self.outcome == Separability::Separable
    }
}

/// Decides whether every point of every manifold can be classified by its
/// manifold label with one affine hyperplane.
///
/// Solves `min sum(s)` subject to `y_k (w.x_k + b) + s_k >= 1`, `s >= 0`.
pub fn is_separable(set: &ManifoldSet, labels: &[i8]) -> Result<(Separability, f64)> {
    if labels.len() != set.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} manifolds",
            labels.len(),
            set.len()
        )));
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::InvalidInput("labels must be +1 or -1".into()));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::InvalidInput("dichotomy needs both labels".into()));
    }
    let n = set.ambient_dim();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let w: Vec<_> = (0..n)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let b = lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY));
    let mut row = Vec::with_capacity(n + 2);
    for (m, &y) in set.manifolds().iter().zip(labels) {
        let y = f64::from(y);
        for pt in m.row_iter() {
            let s = lp.add_var(1.0, (0.0, f64::INFINITY));
            row.clear();
            row.extend(w.iter().zip(pt.iter()).map(|(&v, &x)| (v, y * x)));
            row.push((b, y));
            row.push((s, 1.0));
            lp.add_constraint(&row[..], ComparisonOp::Ge, 1.0);
        }
    }
    let sol = match lp.solve() {
        Ok(s) => s,
        Err(_) => return Ok((Separability::Undecided, f64::NAN)),
    };
    let wv: Vec<f64> = w.iter().map(|&v| sol[v]).collect();
    let bv = sol[b];
    let mut margin = f64::INFINITY;
    for (m, &y) in set.manifolds().iter().zip(labels) {
        for pt in m.row_iter() {
            let f: f64 = pt.iter().zip(&wv).map(|(x, w)| x * w).sum::<f64>() + bv;
            margin = margin.min(f64::from(y) * f);
        }
    }
    let outcome = if sol.objective() <= SEPARABLE_SLACK_TOL {
        Separability::Separable
    } else {
        Separability::NotSeparable
    };
    Ok((outcome, margin))
}

/// Gaussian projection matrix (`N x n_features`, entries `N(0, 1/n)`),
/// filled column by column so the projections for different `n_features`
/// under one seed are nested.
pub fn projection_matrix(ambient: usize, n_features: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &[rng::TAG_PROJECT]);
    let scale = 1.0 / (n_features as f64).sqrt();
    let mut out = DMatrix::zeros(ambient, n_features);
    for c in 0..n_features {
        for v in out.column_mut(c).iter_mut() {
            let g: f64 = StandardNormal.sample(&mut r);
            *v = g * scale;
        }
    }
    out
}

/// Projects every manifold onto `n_features` random Gaussian directions,
/// scaled by `1/sqrt(n_features)`. With `identity_if_full`, asking for the
/// full dimension returns the input unchanged.
pub fn random_project(
    set: &ManifoldSet,
    n_features: usize,
    seed: u64,
    identity_if_full: bool,
) -> Result<ManifoldSet> {
    let n = set.ambient_dim();
    if n_features == 0 || n_features > n {
        return Err(Error::InvalidInput(format!(
            "n_features must be in 1..={n}, got {n_features}"
        )));
    }
    if identity_if_full && n_features == n {
        return Ok(set.clone());
    }
    let proj = projection_matrix(n, n_features, seed);
    set.map_manifolds(|m| m * &proj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmpiricalConfig {
    pub trials_per_n: usize,
    pub seed: u64,
    /// Stop as soon as the separable fraction is within this of 1/2.
    pub target_tolerance: f64,
    /// Enumerate all non-trivial dichotomies instead of sampling.
    pub exhaustive: bool,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        Self {
            trials_per_n: 100,
            seed: 0,
            target_tolerance: 0.1,
            exhaustive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCapacityResult {
    pub alpha_empirical: f64,
    pub n_critical: usize,
    pub frac_separable_at_critical: f64,
    pub trials_per_n: usize,
    pub seed: u64,
    /// Every evaluated `(n_features, separable fraction)` in bisection order.
    pub evaluations: Vec<(usize, f64)>,
    pub undecided: usize,
    /// False when even the full dimension separates fewer than half.
    pub bracketed: bool,
}

/// Labels for trial `trial`: uniform +-1, redrawn while all equal.
pub fn random_dichotomy(p: usize, seed: u64, trial: usize) -> Vec<i8> {
    let mut r = rng::stream(seed, &[rng::TAG_DICHOTOMY, trial as u64]);
    loop {
        let labels: Vec<i8> = (0..p).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
        if labels.contains(&1) && labels.contains(&-1) {
            return labels;
        }
    }
}

/// All `2^P - 2` dichotomies with both labels present, in binary order.
pub fn all_dichotomies(p: usize) -> Vec<Vec<i8>> {
    assert!(p < 24, "exhaustive enumeration is limited to small P");
    (1..(1u64 << p) - 1)
        .map(|code| (0..p).map(|i| if code >> i & 1 == 1 { 1 } else { -1 }).collect())
        .collect()
}

/// Per-trial projection seed. Trials reuse their projection across feature
/// counts so that each trial's outcome is monotone in `n_features`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    rng::derive_seed(seed, &[rng::TAG_PROJECT, trial as u64])
}

fn run_trials(set: &ManifoldSet, n_features: usize, dichotomies: &[Vec<i8>], seed: u64) -> Result<Vec<DichotomyTrial>> {
    dichotomies
        .par_iter()
        .enumerate()
        .map(|(t, labels)| {
            let projected = random_project(set, n_features, trial_seed(seed, t), false)?;
            let (outcome, margin_proxy) = is_separable(&projected, labels)?;
            Ok(DichotomyTrial {
                labels: labels.clone(),
                n_features,
                outcome,
                margin_proxy,
            })
        })
        .collect()
}

struct FractionOracle<'a> {
    set: &'a ManifoldSet,
    dichotomies: Vec<Vec<i8>>,
    seed: u64,
    undecided: usize,
    evaluations: Vec<(usize, f64)>,
}

impl FractionOracle<'_> {
    fn fraction(&mut self, n: usize) -> Result<f64> {
        let trials = run_trials(self.set, n, &self.dichotomies, self.seed)?;
        let decided: Vec<_> = trials.iter().filter(|t| t.outcome != Separability::Undecided).collect();
        self.undecided += trials.len() - decided.len();
        let f = if decided.is_empty() {
            0.0
        } else {
            decided.iter().filter(|t| t.separable()).count() as f64 / decided.len() as f64
        };
        self.evaluations.push((n, f));
        Ok(f)
    }
}

/// Bisection over the projected dimension for the point where half of the
/// dichotomies are separable; `alpha = P / n_critical`.
pub fn empirical_capacity(set: &ManifoldSet, cfg: &EmpiricalConfig) -> Result<EmpiricalCapacityResult> {
    if !cfg.exhaustive && cfg.trials_per_n < 10 {
        return Err(Error::InvalidInput("trials_per_n must be >= 10".into()));
    }
    let p = set.len();
    let dichotomies = |trials: usize| -> Vec<Vec<i8>> {
        if cfg.exhaustive {
            all_dichotomies(p)
        } else {
            (0..trials).map(|t| random_dichotomy(p, cfg.seed, t)).collect()
        }
    };
    let mut trials = cfg.trials_per_n;
    let mut oracle = FractionOracle {
        set,
        dichotomies: dichotomies(trials),
        seed: cfg.seed,
        undecided: 0,
        evaluations: Vec::new(),
    };
    let n_max = set.ambient_dim();
    let finish = |oracle: FractionOracle, n: usize, f: f64, trials: usize, bracketed: bool| {
        EmpiricalCapacityResult {
            alpha_empirical: p as f64 / n as f64,
            n_critical: n,
            frac_separable_at_critical: f,
            trials_per_n: trials,
            seed: cfg.seed,
            evaluations: oracle.evaluations,
            undecided: oracle.undecided,
            bracketed,
        }
    };

    let mut f_hi = oracle.fraction(n_max)?;
    if f_hi < 0.5 {
        return Ok(finish(oracle, n_max, f_hi, trials, false));
    }
    let mut f_lo = oracle.fraction(1)?;
    if f_lo >= 0.5 || n_max == 1 {
        return Ok(finish(oracle, 1, f_lo, trials, true));
    }
    let (mut lo, mut hi) = (1usize, n_max);
    let mut widened = cfg.exhaustive;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let mut f = oracle.fraction(mid)?;
        if f < f_lo || f > f_hi {
            if widened {
                return Err(Error::Numerical(format!(
                    "separable fraction not monotone in n_features near {mid} \
                     (f({lo})={f_lo}, f({mid})={f}, f({hi})={f_hi})"
                )));
            }
            widened = true;
            trials *= 4;
            oracle.dichotomies = dichotomies(trials);
            f_lo = oracle.fraction(lo)?;
            f_hi = oracle.fraction(hi)?;
            f = oracle.fraction(mid)?;
            if f < f_lo || f > f_hi {
                return Err(Error::Numerical(format!(
                    "separable fraction not monotone in n_features near {mid}"
                )));
            }
        }
        if (f - 0.5).abs() <= cfg.target_tolerance && cfg.target_tolerance > 0.0 {
            return Ok(finish(oracle, mid, f, trials, true));
        }
        if f < 0.5 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    let (n, f) = if (f_lo - 0.5).abs() < (f_hi - 0.5).abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    Ok(finish(oracle, n, f, trials, true))
}
