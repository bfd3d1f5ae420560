use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_subspace, center_correlation, manifold_radius_dimension, mft_capacity,
    project_to_center_nullspace, ManifoldSet, ProjectionOptions,
};
use crate::empirical::{empirical_capacity, EmpiricalConfig};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Gaussian draws per manifold.
    pub n_samples: usize,
    pub seed: u64,
    /// Subtract the mean of all points before anything else.
    pub global_centering: bool,
    /// `None` disables the center null-space projection.
    pub center_projection: Option<ProjectionOptions>,
    /// Also measure the empirical capacity by bisection.
    pub empirical: Option<EmpiricalConfig>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            seed: 0,
            global_centering: true,
            center_projection: Some(ProjectionOptions::default()),
            empirical: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMetrics {
    pub class_id: usize,
    pub alpha: f64,
    pub r_m: f64,
    pub d_m: f64,
    pub subspace_dim: usize,
    pub n_points: usize,
    pub n_active: usize,
    pub degenerate: bool,
}

/// Manifold geometry metrics for one set of manifolds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgmReport {
    pub alpha_m: f64,
    pub r_m: f64,
    pub d_m: f64,
    pub rho_center: f64,
    pub alpha_empirical: Option<f64>,
    pub n_gauss_samples: usize,
    pub seed: u64,
    pub removed_center_rank: usize,
    pub ambient_dim: usize,
    pub per_manifold: Vec<ManifoldMetrics>,
}

/// Runs the full geometry pipeline on `set`.
///
/// Per-manifold capacities are combined through their inverses,
/// `alpha_M = 1 / mean(1/alpha_i)`; radius and dimension are plain means.
pub fn analyze(set: &ManifoldSet, cfg: &AnalysisConfig) -> Result<MgmReport> {
    let rho = center_correlation(set).rho;

    let centered;
    let mut work = set;
    if cfg.global_centering {
        let total = set.total_points() as f64;
        let mut mean = nalgebra::RowDVector::zeros(set.ambient_dim());
        for m in set.manifolds() {
            for r in m.row_iter() {
                mean += r;
            }
        }
        mean /= total;
        centered = set.map_manifolds(|m| {
            let mut out = m.clone();
            for mut r in out.row_iter_mut() {
                r -= &mean;
            }
            out
        })?;
        work = &centered;
    }

    let projected;
    let mut removed = 0;
    if let Some(opts) = &cfg.center_projection {
        let p = project_to_center_nullspace(work, opts)?;
        removed = p.removed_rank;
        projected = p.set;
        work = &projected;
    }

    let per_manifold = work
        .manifolds()
        .par_iter()
        .enumerate()
        .map(|(i, pts)| -> Result<(f64, ManifoldMetrics)> {
            let sub = build_subspace(pts).map_err(|e| e.in_manifold(i))?;
            let seed = rng::derive_seed(cfg.seed, &[i as u64]);
            let est = mft_capacity(&sub, cfg.n_samples, seed).map_err(|e| e.in_manifold(i))?;
            let rd = manifold_radius_dimension(&est.samples);
            Ok((
                est.inv_capacity,
                ManifoldMetrics {
                    class_id: work.class_ids()[i],
                    alpha: est.alpha,
                    r_m: rd.r_m,
                    d_m: rd.d_m,
                    subspace_dim: sub.dim(),
                    n_points: pts.nrows(),
                    n_active: rd.n_active,
                    degenerate: rd.degenerate,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let p = per_manifold.len() as f64;
    let inv_mean = per_manifold.iter().map(|(inv, _)| inv).sum::<f64>() / p;
    let r_m = per_manifold.iter().map(|(_, m)| m.r_m).sum::<f64>() / p;
    let d_m = per_manifold.iter().map(|(_, m)| m.d_m).sum::<f64>() / p;

    let alpha_empirical = match &cfg.empirical {
        Some(ec) => Some(empirical_capacity(work, ec)?.alpha_empirical),
        None => None,
    };

    Ok(MgmReport {
        alpha_m: 1.0 / inv_mean,
        r_m,
        d_m,
        rho_center: rho,
        alpha_empirical,
        n_gauss_samples: cfg.n_samples,
        seed: cfg.seed,
        removed_center_rank: removed,
        ambient_dim: set.ambient_dim(),
        per_manifold: per_manifold.into_iter().map(|(_, m)| m).collect(),
    })
}
