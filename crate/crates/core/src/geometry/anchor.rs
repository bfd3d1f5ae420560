//! Anchor points.
//!
//! For a draw `T = (t, t0)` the anchor solves
//!
//! ```text
//! min_V |V - T|^2   subject to   V . s_i <= 0 for every manifold point s_i
//! ```
//!
//! The residual `T - V*` lies in the cone spanned by the points (Moreau
//! decomposition), so it is found as the non-negative least-squares fit of
//! `T` by the point columns. The normalised dual weights give the anchor as a
//! convex combination of points.

use nalgebra::{DMatrix, DVector};

use super::subspace::thin_svd;
use super::SubspaceManifold;
use crate::error::{Error, Result};

/// KKT tolerance for the active-set solver (relative to the problem scale).
pub const ANCHOR_KKT_TOL: f64 = 1e-8;

/// One Gaussian draw and its anchor point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSample {
    /// The draw `(t_1..t_D, t0)`.
    pub t_vec: DVector<f64>,
    /// Anchor in manifold coordinates; its last entry is the center norm.
    pub anchor: DVector<f64>,
    pub hull_weights: DVector<f64>,
    /// `[T . anchor]_+`
    pub slack: f64,
    /// False when `T` already satisfies every constraint.
    pub active: bool,
}

impl AnchorSample {
    /// Contribution to the inverse capacity,
    /// `[t0 + t.s]_+^2 / (1 + |s|^2)` with the center coordinate scaled to one.
    pub fn capacity_term(&self) -> f64 {
        if !self.active {
            return 0.0;
        }
        let n2 = self.anchor.norm_squared();
        if n2 > 0.0 {
            self.slack * self.slack / n2
        } else {
            0.0
        }
    }

    /// Anchor rescaled so the center coordinate equals one.
    pub fn normalized_anchor(&self) -> DVector<f64> {
        let c = self.anchor[self.anchor.len() - 1];
        &self.anchor / c
    }
}

/// Precomputed Gram data for repeated solves against one manifold.
pub(crate) struct AnchorSolver<'a> {
    coords: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    col_norms: Vec<f64>,
    max_iter: usize,
}

impl<'a> AnchorSolver<'a> {
    pub(crate) fn new(manifold: &'a SubspaceManifold) -> Self {
        let coords = &manifold.coords;
        let gram = coords * coords.transpose();
        let col_norms = (0..coords.nrows()).map(|i| gram[(i, i)].sqrt()).collect();
        Self {
            coords,
            gram,
            col_norms,
            max_iter: 10 * coords.nrows(),
        }
    }

    pub(crate) fn solve(&self, t_vec: &DVector<f64>, draw: usize) -> Result<AnchorSample> {
        let coords = self.coords;
        let m = coords.nrows();
        if t_vec.len() != coords.ncols() {
            return Err(Error::InvalidInput(format!(
                "draw has {} components, manifold coordinates have {}",
                t_vec.len(),
                coords.ncols()
            )));
        }
        if t_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Gaussian draw".into()));
        }
        let proj: DVector<f64> = coords * t_vec;
        let (best, best_proj) = proj
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });

        if best_proj <= 0.0 {
            let mut w = DVector::zeros(m);
            w[best] = 1.0;
            return Ok(AnchorSample {
                t_vec: t_vec.clone(),
                anchor: coords.row(best).transpose(),
                hull_weights: w,
                slack: 0.0,
                active: false,
            });
        }

        let lambda = self.nnls(&proj, t_vec.norm(), draw)?;
        let total: f64 = lambda.iter().sum();
        if !(total > 0.0) {
            return Err(Error::AnchorNonConvergence { manifold: 0, draw });
        }
        let weights = lambda / total;
        let anchor: DVector<f64> = coords.transpose() * &weights;
        let slack = t_vec.dot(&anchor).max(0.0);
        Ok(AnchorSample {
            t_vec: t_vec.clone(),
            anchor,
            hull_weights: weights,
            slack,
            active: true,
        })
    }

    /// Lawson-Hanson active-set NNLS on the Gram form: minimise
    /// `|A x - t|^2` over `x >= 0` where the columns of `A` are the points
    /// and `b = A^T t` is passed in.
    fn nnls(&self, b: &DVector<f64>, t_norm: f64, draw: usize) -> Result<DVector<f64>> {
        let m = b.len();
        let gram = &self.gram;
        let mut x = DVector::<f64>::zeros(m);
        let mut passive = vec![false; m];
        let scale = t_norm.max(1e-300);
        let tol = |j: usize| ANCHOR_KKT_TOL * scale * self.col_norms[j].max(1e-300);

        let mut outer = 0usize;
        loop {
            // gradient of the negative objective: w = b - G x
            let w = b - gram * &x;
            let entering = (0..m)
                .filter(|&j| !passive[j] && w[j] > tol(j))
                .max_by(|&a, &c| (w[a] / self.col_norms[a]).total_cmp(&(w[c] / self.col_norms[c])));
            let Some(j) = entering else { break };
            outer += 1;
            if outer > self.max_iter {
                return Err(Error::AnchorNonConvergence { manifold: 0, draw });
            }
            passive[j] = true;

            let mut inner = 0usize;
            loop {
                inner += 1;
                if inner > m + 1 {
                    return Err(Error::AnchorNonConvergence { manifold: 0, draw });
                }
                let idx: Vec<usize> = (0..m).filter(|&k| passive[k]).collect();
                let z = self.passive_solve(&idx, b);
                if z.iter().all(|&v| v > 0.0) {
                    x.fill(0.0);
                    for (k, &i) in idx.iter().enumerate() {
                        x[i] = z[k];
                    }
                    break;
                }
                // step back towards the feasible region
                let mut alpha = f64::INFINITY;
                for (k, &i) in idx.iter().enumerate() {
                    if z[k] <= 0.0 {
                        let denom = x[i] - z[k];
                        let a = if denom > 0.0 { x[i] / denom } else { 0.0 };
                        alpha = alpha.min(a);
                    }
                }
                let alpha = if alpha.is_finite() { alpha } else { 0.0 };
                for (k, &i) in idx.iter().enumerate() {
                    x[i] += alpha * (z[k] - x[i]);
                }
                for &i in &idx {
                    if x[i] <= ANCHOR_KKT_TOL * x.amax().max(1e-300) {
                        x[i] = 0.0;
                        passive[i] = false;
                    }
                }
                if !passive.iter().any(|&p| p) {
                    break;
                }
            }
        }
        Ok(x)
    }

    fn passive_solve(&self, idx: &[usize], b: &DVector<f64>) -> DVector<f64> {
        let k = idx.len();
        let g = DMatrix::from_fn(k, k, |r, c| self.gram[(idx[r], idx[c])]);
        let rhs = DVector::from_fn(k, |r, _| b[idx[r]]);
        if let Some(ch) = g.clone().cholesky() {
            let z = ch.solve(&rhs);
            if z.iter().all(|v| v.is_finite()) {
                return z;
            }
        }
        // nearly dependent columns: pseudo-inverse of the reduced Gram
        let eps = 1e-12 * (0..k).map(|r| g[(r, r)]).fold(0.0, f64::max).max(1e-300);
        thin_svd(&g)
            .solve(&rhs, eps)
            .unwrap_or_else(|_| DVector::zeros(k))
    }
}

/// Solves one anchor point against `manifold`.
pub fn solve_anchor(t_vec: &DVector<f64>, manifold: &SubspaceManifold) -> Result<AnchorSample> {
    AnchorSolver::new(manifold).solve(t_vec, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_subspace;

    fn manifold_from_coords(coords: DMatrix<f64>) -> SubspaceManifold {
        let d = coords.ncols() - 1;
        SubspaceManifold {
            center: DVector::zeros(d.max(1)),
            basis: DMatrix::identity(d, d.max(1)),
            coords,
        }
    }

    #[test]
    fn single_point_anchor_is_the_point() {
        let p = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let s = build_subspace(&p).unwrap();
        let t = DVector::from_vec(vec![0.7]);
        let a = solve_anchor(&t, &s).unwrap();
        assert!(a.active);
        assert!((a.anchor[0] - 2.0).abs() < 1e-12);
        assert!((a.slack - 0.7 * 2.0).abs() < 1e-12);
        assert!((a.capacity_term() - 0.49).abs() < 1e-12);

        let t = DVector::from_vec(vec![-0.3]);
        let a = solve_anchor(&t, &s).unwrap();
        assert!(!a.active);
        assert_eq!(a.slack, 0.0);
        assert_eq!(a.capacity_term(), 0.0);
    }

    #[test]
    fn draw_inside_feasible_cone_is_inactive() {
        let coords = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, -0.5, 0.8, 1.0, -0.5, -0.8, 1.0]);
        let m = manifold_from_coords(coords);
        let t = DVector::from_vec(vec![0.1, 0.0, -5.0]);
        let a = solve_anchor(&t, &m).unwrap();
        assert!(!a.active);
        assert_eq!(a.slack, 0.0);
        assert!((a.hull_weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_is_orthogonal_to_projection() {
        let coords = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.2, 1.0, -0.4, 0.9, 1.0, -0.6, -0.7, 1.0, 0.3, -0.2, 1.0],
        );
        let m = manifold_from_coords(coords.clone());
        let t = DVector::from_vec(vec![0.4, -1.1, 0.9]);
        let a = solve_anchor(&t, &m).unwrap();
        assert!(a.active);
        // V = T - W where W = sum(lambda) * anchor; V . s_i <= 0 and V . W = 0
        let lam = a.slack / a.anchor.norm_squared();
        let w = &a.anchor * lam;
        let v = &t - &w;
        for r in coords.row_iter() {
            assert!(r.transpose().dot(&v) <= 1e-9);
        }
        assert!(v.dot(&w).abs() < 1e-9);
        assert!(a.hull_weights.iter().all(|&h| h >= 0.0));
        assert!((a.hull_weights.sum() - 1.0).abs() < 1e-8);
        let recon = coords.transpose() * &a.hull_weights;
        assert!((recon - &a.anchor).amax() < 1e-8);
    }
}
