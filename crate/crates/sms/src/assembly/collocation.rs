//! Collocation assembly: the parameter partials evaluated at sample points
//! form an N x n matrix, the operator values the right-hand side; the
//! parameter rates are the minimum-norm least-squares solution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{AssembledSystem, SystemKind};
use crate::ansatz::{AnsatzFamily, ParameterVector, SpatialPoint};
use crate::error::{Result, SmsError};
use crate::operator::RhsOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Equispaced,
    RandomUniform,
    /// Uniform draws over the truncated domain, standing in for the sampling
    /// measure of the Monte Carlo reading of the least-squares objective.
    RandomMeasure,
}

#[derive(Clone, Debug)]
pub struct CollocationSet {
    pub points: Vec<SpatialPoint>,
    pub sampling: Sampling,
    pub seed: Option<u64>,
}

impl CollocationSet {
    /// Equispaced points over a box, endpoints included per axis.
    pub fn equispaced_box(bounds: &[(f64, f64)], per_axis: usize) -> Result<Self> {
        if bounds.is_empty() || per_axis < 1 {
            return Err(SmsError::config("empty collocation specification"));
        }
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|&(lo, hi)| {
                if per_axis == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..per_axis)
                        .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(CollocationSet {
            points: points.into_iter().map(SpatialPoint).collect(),
            sampling: Sampling::Equispaced,
            seed: None,
        })
    }

    /// N equispaced points on the half-open interval [-L/2, L/2), avoiding a
    /// duplicated endpoint on periodic domains.
    pub fn equispaced_periodic(n: usize, period: f64) -> Result<Self> {
        if n < 1 || period <= 0.0 {
            return Err(SmsError::config("need n >= 1 and a positive period"));
        }
        let h = period / n as f64;
        Ok(CollocationSet {
            points: (0..n)
                .map(|i| SpatialPoint(vec![-period / 2.0 + i as f64 * h]))
                .collect(),
            sampling: Sampling::Equispaced,
            seed: None,
        })
    }

    pub fn random_uniform(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<Self> {
        let mut s = Self::sample_uniform(bounds, n, seed)?;
        s.sampling = Sampling::RandomUniform;
        Ok(s)
    }

    pub fn random_measure(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<Self> {
        let mut s = Self::sample_uniform(bounds, n, seed)?;
        s.sampling = Sampling::RandomMeasure;
        Ok(s)
    }

    fn sample_uniform(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<Self> {
        if bounds.is_empty() || n < 1 {
            return Err(SmsError::config("empty collocation specification"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                SpatialPoint(
                    bounds
                        .iter()
                        .map(|&(lo, hi)| rng.gen_range(lo..hi))
                        .collect(),
                )
            })
            .collect();
        Ok(CollocationSet {
            points,
            sampling: Sampling::RandomUniform,
            seed: Some(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Row i holds the parameter partials at point i; rhs_i is the operator value
/// there. Pure pointwise evaluation, no integrals.
pub fn assemble_collocation(
    family: &AnsatzFamily,
    theta: &ParameterVector,
    op: &RhsOperator,
    pts: &CollocationSet,
) -> Result<AssembledSystem> {
    op.validate(family.dim(), family.max_jet_order())?;
    let n = theta.len();
    let big_n = pts.len();
    let d = family.dim();
    let rows: Vec<(Vec<f64>, f64)> = pts
        .points
        .par_iter()
        .map(|x| -> Result<(Vec<f64>, f64)> {
            let g: Vec<f64> = if op.uses_stream_function() {
                family
                    .param_jets(theta, x, 2)?
                    .iter()
                    .map(|j| op.test_value(j, d))
                    .collect()
            } else {
                family.param_gradient(theta, x)?
            };
            let jet = family.eval_jet(theta, x, op.required_jet_order())?;
            Ok((g, op.eval(x, &jet)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = DMatrix::zeros(big_n, n);
    let mut rhs = DVector::zeros(big_n);
    for (i, (g, fv)) in rows.into_iter().enumerate() {
        if !fv.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(SmsError::numeric("non-finite value in collocation row"));
        }
        for (j, v) in g.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
        rhs[i] = fv;
    }
    let condition_estimate = AssembledSystem::estimate_condition(&matrix);
    Ok(AssembledSystem {
        matrix,
        rhs,
        kind: SystemKind::Collocation,
        condition_estimate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factorization {
    Svd,
    /// Column-pivoted QR; used only when a pre-check certifies full column
    /// rank, otherwise the solve falls back to the SVD path.
    ColPivQr,
}

#[derive(Clone, Debug)]
pub struct LsDiagnostics {
    pub rank: usize,
    pub smallest_retained_sv: f64,
    pub residual: f64,
    pub used: Factorization,
}

/// Singular values are retained iff sigma > rank_tol * sigma_max; this is the
/// relative counterpart of the standard numerical-rank rule.
pub fn default_rank_tol(matrix: &DMatrix<f64>) -> f64 {
    matrix.nrows().max(matrix.ncols()) as f64 * f64::EPSILON
}

pub fn solve_least_squares(
    sys: &AssembledSystem,
    rank_tol: f64,
) -> Result<(DVector<f64>, LsDiagnostics)> {
    solve_least_squares_with(sys, rank_tol, Factorization::Svd)
}

/// Minimum-norm least squares on the assembled matrix directly; the normal
/// equations are never formed.
pub fn solve_least_squares_with(
    sys: &AssembledSystem,
    rank_tol: f64,
    method: Factorization,
) -> Result<(DVector<f64>, LsDiagnostics)> {
    if !(rank_tol.is_finite() && rank_tol >= 0.0) {
        return Err(SmsError::config("rank tolerance must be finite and >= 0"));
    }
    let m = &sys.matrix;
    let n = m.ncols();

    if method == Factorization::ColPivQr && m.nrows() >= n {
        let qr = m.clone().col_piv_qr();
        let r = qr.r();
        let dmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let dmin = (0..n).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if dmax > 0.0 && dmin > rank_tol * dmax {
            let q = qr.q();
            let qtb = q.transpose() * &sys.rhs;
            let rn = r.view((0, 0), (n, n)).into_owned();
            if let Some(y) = rn.solve_upper_triangular(&qtb.rows(0, n).into_owned()) {
                let mut x = y;
                qr.p().inv_permute_rows(&mut x);
                let residual = (m * &x - &sys.rhs).norm();
                return Ok((
                    x,
                    LsDiagnostics {
                        rank: n,
                        smallest_retained_sv: dmin,
                        residual,
                        used: Factorization::ColPivQr,
                    },
                ));
            }
        }
        // rank not certified full: fall through to the SVD path
    }

    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested with u");
    let vt = svd.v_t.as_ref().expect("svd requested with v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok((
            DVector::zeros(n),
            LsDiagnostics {
                rank: 0,
                smallest_retained_sv: 0.0,
                residual: sys.rhs.norm(),
                used: Factorization::Svd,
            },
        ));
    }
    let cutoff = rank_tol * smax;
    let utb = u.transpose() * &sys.rhs;
    let mut y = DVector::zeros(vt.nrows());
    let mut rank = 0;
    let mut smin = smax;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            y[i] = utb[i] / s;
            rank += 1;
            smin = smin.min(s);
        }
    }
    let x = vt.transpose() * y;
    let residual = (m * &x - &sys.rhs).norm();
    Ok((
        x,
        LsDiagnostics {
            rank,
            smallest_retained_sv: if rank > 0 { smin } else { 0.0 },
            residual,
            used: Factorization::Svd,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    /// Relative Frobenius residual of Mc^T Mc against N times the sample
    /// average of outer products of the rows.
    pub matrix_relative_residual: f64,
    pub rhs_relative_residual: f64,
    pub full_rank: bool,
    /// Caveat: with rank-deficient columns the identity still holds but the
    /// least-squares solution is not unique.
    pub rank_caveat: bool,
}

/// Checks that the normal-equation products equal N times the sample-average
/// estimates of the L2 inner products over the same points. The identity is
/// exact algebra; the residual only measures floating-point accumulation.
pub fn verify_mc_equivalence(
    family: &AnsatzFamily,
    theta: &ParameterVector,
    op: &RhsOperator,
    pts: &CollocationSet,
) -> Result<EquivalenceReport> {
    let n = theta.len();
    let big_n = pts.len();
    if big_n <= n {
        return Err(SmsError::config("equivalence check needs N > n"));
    }
    let sys = assemble_collocation(family, theta, op, pts)?;
    let mc = &sys.matrix;
    let normal = mc.transpose() * mc;
    let normal_rhs = mc.transpose() * &sys.rhs;

    // independent accumulation: sample averages of g g^T and F g
    let d = family.dim();
    let mut m_hat = DMatrix::zeros(n, n);
    let mut f_hat = DVector::zeros(n);
    for x in &pts.points {
        let g: Vec<f64> = if op.uses_stream_function() {
            family
                .param_jets(theta, x, 2)?
                .iter()
                .map(|j| op.test_value(j, d))
                .collect()
        } else {
            family.param_gradient(theta, x)?
        };
        let jet = family.eval_jet(theta, x, op.required_jet_order())?;
        let fv = op.eval(x, &jet);
        let gv = DVector::from_vec(g);
        m_hat += &gv * gv.transpose() / big_n as f64;
        f_hat += (fv / big_n as f64) * gv;
    }

    let scale_m = normal.norm().max(f64::MIN_POSITIVE);
    let scale_f = normal_rhs.norm().max(f64::MIN_POSITIVE);
    let matrix_relative_residual = (&normal - big_n as f64 * &m_hat).norm() / scale_m;
    let rhs_relative_residual = (&normal_rhs - big_n as f64 * &f_hat).norm() / scale_f;

    let (_, diag) = solve_least_squares(&sys, default_rank_tol(mc))?;
    let full_rank = diag.rank == n;
    Ok(EquivalenceReport {
        matrix_relative_residual,
        rhs_relative_residual,
        full_rank,
        rank_caveat: !full_rank,
    })
}
