//! Mean-field manifold geometry: capacity, radius, dimension and center
//! correlation of labeled point-cloud manifolds.
//!
//! Each manifold is a point cloud (rows are points) in a shared ambient
//! feature space. The pipeline is
//!
//! 1. optional global centering and removal of correlated center directions
//!    ([`project_to_center_nullspace`]),
//! 2. per-manifold coordinates in the span of the centered points plus one
//!    center coordinate ([`build_subspace`]),
//! 3. Monte-Carlo over Gaussian draws `T = (t, t0)`, each solved for its
//!    anchor point by a cone projection ([`solve_anchor`]),
//! 4. capacity, radius and dimension from the anchor statistics
//!    ([`mft_capacity`], [`manifold_radius_dimension`]).

mod analyze;
mod anchor;
mod ball;
mod capacity;
mod centers;
mod subspace;

pub use analyze::{analyze, AnalysisConfig, ManifoldMetrics, MgmReport};
pub use anchor::{solve_anchor, AnchorSample, ANCHOR_KKT_TOL};
pub use ball::alpha_ball;
pub use capacity::{
    gaussian_draw, manifold_radius_dimension, mft_capacity, CapacityEstimate, RadiusDimension,
};
pub use centers::{
    center_correlation, project_to_center_nullspace, CenterCorrelation, CenterProjection,
    ProjectionOptions,
};
pub use subspace::{build_subspace, SubspaceManifold, RANK_TOL};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `P` labeled point clouds sharing one ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSet {
    manifolds: Vec<DMatrix<f64>>,
    class_ids: Vec<usize>,
    ambient_dim: usize,
}

impl ManifoldSet {
    /// Builds a set from `M_i x N` point matrices (one row per point).
    pub fn new(manifolds: Vec<DMatrix<f64>>, class_ids: Vec<usize>) -> Result<Self> {
        if manifolds.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 manifolds, got {}",
                manifolds.len()
            )));
        }
        if class_ids.len() != manifolds.len() {
            return Err(Error::InvalidInput(format!(
                "{} class ids for {} manifolds",
                class_ids.len(),
                manifolds.len()
            )));
        }
        let ambient_dim = manifolds[0].ncols();
        if ambient_dim == 0 {
            return Err(Error::InvalidInput("ambient dimension must be >= 1".into()));
        }
        for (i, m) in manifolds.iter().enumerate() {
            if m.ncols() != ambient_dim {
                return Err(Error::InvalidInput(format!(
                    "manifold {i} has dimension {} but manifold 0 has {ambient_dim}",
                    m.ncols()
                )));
            }
            if m.nrows() == 0 {
                return Err(Error::InvalidInput(format!("manifold {i} has no points")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("manifold {i} contains a non-finite value")));
            }
        }
        Ok(Self {
            manifolds,
            class_ids,
            ambient_dim,
        })
    }

    /// Convenience constructor labelling manifolds `0..P`.
    pub fn from_manifolds(manifolds: Vec<DMatrix<f64>>) -> Result<Self> {
        let ids = (0..manifolds.len()).collect();
        Self::new(manifolds, ids)
    }

    pub fn len(&self) -> usize {
        self.manifolds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifolds.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn manifolds(&self) -> &[DMatrix<f64>] {
        &self.manifolds
    }

    pub fn manifold(&self, i: usize) -> &DMatrix<f64> {
        &self.manifolds[i]
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn total_points(&self) -> usize {
        self.manifolds.iter().map(|m| m.nrows()).sum()
    }

    /// Row means of every manifold, stacked as a `P x N` matrix.
    pub fn centers(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.len(), self.ambient_dim);
        for (i, m) in self.manifolds.iter().enumerate() {
            out.row_mut(i).copy_from(&row_mean(m).transpose());
        }
        out
    }

    /// Applies `f` to every manifold, keeping labels.
    pub fn map_manifolds<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    {
        Self::new(
            self.manifolds.iter().map(f).collect(),
            self.class_ids.clone(),
        )
    }

    pub fn into_parts(self) -> (Vec<DMatrix<f64>>, Vec<usize>) {
        (self.manifolds, self.class_ids)
    }
}

pub(crate) fn row_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(m.ncols());
    for r in m.row_iter() {
        acc += r.transpose();
    }
    acc / m.nrows() as f64
}
