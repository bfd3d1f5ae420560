use nalgebra::linalg::SVD;
use nalgebra::{DMatrix, DVector, Dyn};

use super::row_mean;
use crate::error::{Error, Result};

/// Relative singular-value cutoff used wherever a numerical rank is needed.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD by one-sided Jacobi rotations.
///
/// nalgebra's bidiagonal QR can stop with a visibly wrong factorization on
/// some rank-deficient inputs; Jacobi converges to full relative accuracy.
pub(crate) fn thin_svd(x: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let tall = x.nrows() >= x.ncols();
    let mut a = if tall { x.clone() } else { x.transpose() };
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let singular_values = DVector::from_fn(n, |k, _| a.column(k).norm());
    for k in 0..n {
        let sv = singular_values[k];
        if sv > 0.0 {
            a.column_mut(k).unscale_mut(sv);
        }
    }
    let (u, v_t) = if tall { (a, v.transpose()) } else { (v, a.transpose()) };
    SVD {
        u: Some(u),
        v_t: Some(v_t),
        singular_values,
    }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (mp, mq) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = c * mp - s * mq;
        m[(r, q)] = s * mp + c * mq;
    }
}

/// A manifold expressed in the span of its centered points plus one extra
/// coordinate along its center.
///
/// Row `i` of `coords` is `[basis * (x_i - center), |center|]`, so the last
/// column is constant and equal to the center norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceManifold {
    pub center: DVector<f64>,
    /// `D_sub x N`, orthonormal rows.
    pub basis: DMatrix<f64>,
    /// `M x (D_sub + 1)`.
    pub coords: DMatrix<f64>,
}

impl SubspaceManifold {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.coords.nrows()
    }

    pub fn center_norm(&self) -> f64 {
        self.coords[(0, self.coords.ncols() - 1)]
    }

    /// Maps the coordinates back to ambient points.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.dim();
        let sub = self.coords.columns(0, d);
        let mut pts = sub * &self.basis;
        for mut r in pts.row_iter_mut() {
            r += self.center.transpose();
        }
        pts
    }
}

/// Orthonormal row basis of `x` (rows are vectors) with the numerical rank
/// decided by [`RANK_TOL`] relative to `scale`.
pub(crate) fn row_space_basis(x: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let n = x.ncols();
    if x.nrows() == 0 || x.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(0, n);
    }
    let svd = thin_svd(x);
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    let cutoff = RANK_TOL * smax.max(scale);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| svd.singular_values[k] > cutoff)
        .collect();
    let mut basis = DMatrix::zeros(keep.len(), n);
    for (row, &k) in keep.iter().enumerate() {
        basis.row_mut(row).copy_from(&v_t.row(k));
    }
    basis
}

/// Prepares coordinates for the anchor-point computation.
///
/// Fails when the center has zero norm: the center coordinate would vanish
/// and the homogeneous formulation is undefined.
pub fn build_subspace(points: &DMatrix<f64>) -> Result<SubspaceManifold> {
    let m = points.nrows();
    if m == 0 {
        return Err(Error::InvalidInput("manifold has no points".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("manifold contains a non-finite value".into()));
    }
    let center = row_mean(points);
    let mut centered = points.clone();
    for mut r in centered.row_iter_mut() {
        r -= center.transpose();
    }
    let scale = points.norm();
    let basis = row_space_basis(&centered, scale);
    let c_norm = center.norm();
    if !(c_norm > RANK_TOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::InvalidInput(
            "manifold center has zero norm; center the data differently".into(),
        ));
    }
    let d = basis.nrows();
    let mut coords = DMatrix::zeros(m, d + 1);
    if d > 0 {
        let sub = &centered * basis.transpose();
        coords.columns_mut(0, d).copy_from(&sub);
    }
    coords.column_mut(d).fill(c_norm);
    Ok(SubspaceManifold {
        center,
        basis,
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn single_point_has_zero_dimension() {
        let p = DMatrix::from_row_slice(1, 3, &[3.0, 0.0, 4.0]);
        let s = build_subspace(&p).unwrap();
        assert_eq!(s.dim(), 0);
        assert_eq!(s.coords.shape(), (1, 1));
        assert!((s.coords[(0, 0)] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_have_rank_one() {
        let mut p = DMatrix::zeros(3, 10);
        for i in 0..3 {
            p[(i, 0)] = 1.0;
            for j in 1..10 {
                p[(i, j)] = (i as f64) * (j as f64) * 0.1;
            }
        }
        let s = build_subspace(&p).unwrap();
        assert_eq!(s.dim(), 1);
    }

    #[test]
    fn identical_points_collapse() {
        let p = DMatrix::from_fn(4, 5, |_, j| j as f64 + 1.0);
        let s = build_subspace(&p).unwrap();
        assert_eq!(s.dim(), 0);
        assert_eq!(s.coords.ncols(), 1);
    }

    #[test]
    fn zero_center_is_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        assert!(build_subspace(&p).is_err());
    }

    #[test]
    fn basis_orthonormal_and_reconstruction_exact() {
        let mut p = gaussian(20, 40, 3);
        for mut r in p.row_iter_mut() {
            r[0] += 5.0;
        }
        let s = build_subspace(&p).unwrap();
        assert_eq!(s.dim(), 19);
        let gram = &s.basis * s.basis.transpose();
        let eye = DMatrix::<f64>::identity(s.dim(), s.dim());
        assert!((gram - eye).abs().max() < 1e-8);
        let rel = (s.reconstruct() - &p).norm() / p.norm();
        assert!(rel < 1e-8, "{rel}");
        let c = s.center_norm();
        assert!(s.coords.column(s.dim()).iter().all(|v| *v == c && c > 0.0));
    }
}
