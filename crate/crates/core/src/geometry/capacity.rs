use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::anchor::{AnchorSample, AnchorSolver};
use super::SubspaceManifold;
use crate::error::{Error, Result};
use crate::rng;

/// The Gaussian vector for draw `draw`, keyed so any schedule reproduces it.
pub fn gaussian_draw(dim: usize, seed: u64, draw: usize) -> DVector<f64> {
    let mut r = rng::stream(seed, &[rng::TAG_GAUSS, draw as u64]);
    DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut r))
}

#[derive(Debug, Clone)]
pub struct CapacityEstimate {
    /// Monte-Carlo mean of the per-draw capacity terms.
    pub inv_capacity: f64,
    pub alpha: f64,
    /// Standard error of `inv_capacity`.
    pub std_error: f64,
    pub samples: Vec<AnchorSample>,
}

/// Monte-Carlo estimate of the manifold capacity,
/// `1/alpha = < [t0 + t.s(T)]_+^2 / (1 + |s(T)|^2) >_T`.
pub fn mft_capacity(
    manifold: &SubspaceManifold,
    n_samples: usize,
    seed: u64,
) -> Result<CapacityEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".into()));
    }
    let solver = AnchorSolver::new(manifold);
    let dim = manifold.coords.ncols();
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|k| solver.solve(&gaussian_draw(dim, seed, k), k))
        .collect::<Result<Vec<_>>>()?;

    let terms: Vec<f64> = samples.iter().map(AnchorSample::capacity_term).collect();
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = if terms.len() > 1 {
        terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(CapacityEstimate {
        inv_capacity: mean,
        alpha: 1.0 / mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusDimension {
    pub r_m: f64,
    pub d_m: f64,
    pub n_active: usize,
    /// No active draws; `r_m` and `d_m` are reported as zero.
    pub degenerate: bool,
}

/// Radius `R_M^2 = <|s|^2>` and dimension `D_M = <(t . s_hat)^2>` of the
/// anchor points, both in the manifold subspace with the center coordinate
/// scaled to one and then dropped. Inactive draws are skipped.
pub fn manifold_radius_dimension(samples: &[AnchorSample]) -> RadiusDimension {
    let mut r2 = 0.0;
    let mut dm = 0.0;
    let mut n = 0usize;
    for s in samples.iter().filter(|s| s.active) {
        let a = s.normalized_anchor();
        let d = a.len() - 1;
        let sub = a.rows(0, d);
        let t = s.t_vec.rows(0, d);
        let norm = sub.norm();
        r2 += norm * norm;
        if norm > 0.0 {
            let proj = t.dot(&sub) / norm;
            dm += proj * proj;
        }
        n += 1;
    }
    if n == 0 {
        return RadiusDimension {
            r_m: 0.0,
            d_m: 0.0,
            n_active: 0,
            degenerate: true,
        };
    }
    RadiusDimension {
        r_m: (r2 / n as f64).sqrt(),
        d_m: dm / n as f64,
        n_active: n,
        degenerate: false,
    }
}
