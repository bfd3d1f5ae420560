use nalgebra::DMatrix;

use super::subspace::{thin_svd, RANK_TOL};
use super::ManifoldSet;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterCorrelation {
    /// Mean absolute cosine between globally-centered manifold centers.
    pub rho: f64,
    pub n_pairs: usize,
    /// Pairs skipped because a centered center had zero norm.
    pub skipped_pairs: usize,
}

/// Mean absolute pairwise correlation of manifold centers, measured as the
/// cosine similarity after subtracting the mean of all centers.
pub fn center_correlation(set: &ManifoldSet) -> CenterCorrelation {
    let mut c = set.centers();
    let p = c.nrows();
    let mean = c.row_mean();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let gram = &c * c.transpose();
    let (mean_abs, n_pairs, skipped) = mean_abs_cosine(&gram);
    debug_assert_eq!(n_pairs + skipped, p * (p - 1) / 2);
    CenterCorrelation {
        rho: mean_abs,
        n_pairs,
        skipped_pairs: skipped,
    }
}

/// Mean |cos| over off-diagonal pairs of a Gram matrix; zero-norm rows are
/// skipped. Returns (mean, counted pairs, skipped pairs).
fn mean_abs_cosine(gram: &DMatrix<f64>) -> (f64, usize, usize) {
    let p = gram.nrows();
    let max_diag = (0..p).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let floor = (RANK_TOL * RANK_TOL * max_diag).max(f64::MIN_POSITIVE);
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for i in 0..p {
        for j in (i + 1)..p {
            let (gi, gj) = (gram[(i, i)], gram[(j, j)]);
            if gi <= floor || gj <= floor {
                skipped += 1;
                continue;
            }
            sum += (gram[(i, j)] / (gi * gj).sqrt()).abs().min(1.0);
            n += 1;
        }
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, n, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectionOptions {
    /// Residual mean |cos| between centers that counts as decorrelated.
    /// `None` uses `2 * sqrt(2 / (pi N))`, twice the value expected for
    /// random directions in `N` dimensions.
    pub target_correlation: Option<f64>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            target_correlation: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CenterProjection {
    pub set: ManifoldSet,
    /// Number of leading center directions projected out.
    pub removed_rank: usize,
    pub initial_correlation: f64,
    pub residual_correlation: f64,
    /// The ambient dimension did not exceed the manifold count; the input was
    /// returned unchanged.
    pub skipped: bool,
    pub ambient_dim: usize,
}

/// Removes the low-rank correlated part of the center structure.
///
/// The leading right singular vectors of the (uncentered) center matrix are
/// projected out of every point, one at a time, until the mean |cos| between
/// the residual centers falls to the target. If no rank reaches the target,
/// the rank with the smallest residual correlation is used (at most
/// `rank - 1` directions are removed). Centers that
/// are already decorrelated are left untouched, which makes the operation
/// idempotent once the target is met. The ambient dimension is unchanged.
pub fn project_to_center_nullspace(
    set: &ManifoldSet,
    opts: &ProjectionOptions,
) -> Result<CenterProjection> {
    let p = set.len();
    let n = set.ambient_dim();
    let centers = set.centers();
    let gram = &centers * centers.transpose();
    let (initial, _, _) = mean_abs_cosine(&gram);
    if n <= p {
        return Ok(CenterProjection {
            set: set.clone(),
            removed_rank: 0,
            initial_correlation: initial,
            residual_correlation: initial,
            skipped: true,
            ambient_dim: n,
        });
    }
    let target = opts
        .target_correlation
        .unwrap_or_else(|| 2.0 * (2.0 / (std::f64::consts::PI * n as f64)).sqrt());

    let svd = thin_svd(&centers);
    let u = svd.u.expect("requested u");
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .filter(|&&k| svd.singular_values[k] > RANK_TOL * smax)
        .count();

    let mut residual = gram.clone();
    let mut best = (initial, 0usize);
    let mut chosen = if initial <= target { Some(0) } else { None };
    if chosen.is_none() {
        // removing every direction would zero the centers
        for k in 0..rank.saturating_sub(1) {
            let idx = order[k];
            let s = svd.singular_values[idx];
            let col = u.column(idx);
            residual -= (col * col.transpose()) * (s * s);
            let (rho, _, _) = mean_abs_cosine(&residual);
            if rho < best.0 - 1e-12 {
                best = (rho, k + 1);
            }
            if rho <= target {
                chosen = Some(k + 1);
                break;
            }
        }
    }
    let removed = chosen.unwrap_or(best.1);
    if removed == 0 {
        return Ok(CenterProjection {
            set: set.clone(),
            removed_rank: 0,
            initial_correlation: initial,
            residual_correlation: initial,
            skipped: false,
            ambient_dim: n,
        });
    }

    let mut q = DMatrix::zeros(removed, n);
    for (r, &k) in order.iter().take(removed).enumerate() {
        q.row_mut(r).copy_from(&v_t.row(k));
    }
    let projected = set.map_manifolds(|m| {
        let coef = m * q.transpose();
        m - coef * &q
    })?;
    let new_centers = projected.centers();
    let (resid, _, _) = mean_abs_cosine(&(&new_centers * new_centers.transpose()));
    Ok(CenterProjection {
        set: projected,
        removed_rank: removed,
        initial_correlation: initial,
        residual_correlation: resid,
        skipped: false,
        ambient_dim: n,
    })
}
