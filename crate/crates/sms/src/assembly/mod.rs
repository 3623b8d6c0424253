//! Assembly of the parameter-evolution systems.
//!
//! The Galerkin path forms the metric tensor M and right-hand side f from L2
//! inner products of the parameter partials; the collocation path evaluates
//! the partials and the operator pointwise, giving an N x n least-squares
//! system. Both share [`AssembledSystem`].

mod collocation;
mod galerkin;

pub use collocation::{
    assemble_collocation, default_rank_tol, solve_least_squares, solve_least_squares_with,
    verify_mc_equivalence, CollocationSet, EquivalenceReport, Factorization, LsDiagnostics,
    Sampling,
};
pub use galerkin::{assemble_galerkin, assemble_gaussian_blocks, residual_norm};

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Galerkin,
    Collocation,
}

#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub kind: SystemKind,
    /// Ratio of largest to smallest retained singular (or eigen-) value.
    pub condition_estimate: f64,
}

impl AssembledSystem {
    /// Condition estimate from the spectrum, ignoring values below the rank
    /// cutoff so that semi-definite systems report a finite number.
    pub(crate) fn estimate_condition(matrix: &DMatrix<f64>) -> f64 {
        let svd = matrix.clone().svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let smax = match sv.first() {
            Some(&s) if s > 0.0 => s,
            _ => return 1.0,
        };
        let cutoff = smax * f64::EPSILON * matrix.nrows().max(matrix.ncols()) as f64;
        let smin = sv.iter().rev().find(|&&s| s > cutoff).copied().unwrap_or(smax);
        (smax / smin).max(1.0)
    }
}
