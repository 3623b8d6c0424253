//! Time integration of the parameter ODE, with optional regularization,
//! conserved-quantity constraints, and randomized coordinate sketching.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ansatz::{AnsatzFamily, ParameterVector};
use crate::assembly::{
    assemble_collocation, assemble_galerkin, assemble_gaussian_blocks, default_rank_tol,
    solve_least_squares, AssembledSystem, CollocationSet, SystemKind,
};
use crate::constraints::{solve_lagrange, ConservedQuantity};
use crate::error::{Result, SmsError};
use crate::operator::RhsOperator;
use crate::quadrature::QuadratureRule;

#[derive(Clone, Debug)]
pub enum Scheme {
    Rk4Fixed { dt: f64 },
    Rk45Adaptive { rtol: f64, atol: f64 },
}

#[derive(Clone, Debug)]
pub struct SketchConfig {
    /// Number of coordinates solved for per step; the rest keep zero rate.
    pub k: usize,
    /// Steps between redraws of the coordinate subset.
    pub reseed_every: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub enum AssemblyMode {
    Galerkin {
        quad: QuadratureRule,
        /// Use the exact Gaussian block path when the family supports it.
        closed_form: bool,
    },
    Collocation {
        points: CollocationSet,
    },
}

#[derive(Clone, Debug)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub t_span: (f64, f64),
    /// Tikhonov parameter gamma >= 0.
    pub gamma: f64,
    pub sketch: Option<SketchConfig>,
    /// Relative singular-value cutoff; None picks the standard size-scaled rule.
    pub rank_tol: Option<f64>,
    /// Lengthscale parameters must stay above this value.
    pub positivity_floor: f64,
}

impl StepperConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.t_span.0 >= self.t_span.1 {
            return Err(SmsError::config("time span must satisfy t0 < T"));
        }
        if !(self.gamma >= 0.0) {
            return Err(SmsError::config("gamma must be >= 0"));
        }
        if self.positivity_floor <= 0.0 {
            return Err(SmsError::config("positivity floor must be > 0"));
        }
        if let Some(s) = &self.sketch {
            if s.k < 1 || s.k > n {
                return Err(SmsError::config("sketch size must satisfy 1 <= k <= n"));
            }
            if s.reseed_every < 1 {
                return Err(SmsError::config("reseed interval must be >= 1"));
            }
        }
        match self.scheme {
            Scheme::Rk4Fixed { dt } if !(dt > 0.0) => {
                Err(SmsError::config("fixed step must be positive"))
            }
            Scheme::Rk45Adaptive { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(SmsError::config("tolerances must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub t: f64,
    pub dt: f64,
    /// Algebraic residual of the solved linear system (collocation: the
    /// least-squares residual norm).
    pub residual: f64,
    pub condition_estimate: f64,
    pub invariant_values: Vec<f64>,
    pub step_rejections: u32,
    pub pseudo_inverse_used: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The adaptive step collapsed below the underflow threshold; the
    /// trajectory holds every state up to the last good one.
    Stiffness { t: f64 },
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParameterVector>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub status: RunStatus,
}

/// k distinct coordinate indices, uniform without replacement, reproducible
/// from the generator state.
pub fn sketch_matrix(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn assemble(
    family: &AnsatzFamily,
    theta: &ParameterVector,
    op: &RhsOperator,
    mode: &AssemblyMode,
) -> Result<AssembledSystem> {
    match mode {
        AssemblyMode::Galerkin { quad, closed_form } => {
            if *closed_form && matches!(family, AnsatzFamily::GaussianMixture { .. }) {
                assemble_gaussian_blocks(family, theta, op)
            } else {
                assemble_galerkin(family, theta, op, quad)
            }
        }
        AssemblyMode::Collocation { points } => {
            assemble_collocation(family, theta, op, points)
        }
    }
}

/// One right-hand-side evaluation of the parameter ODE.
#[allow(clippy::too_many_arguments)]
pub fn step_rhs(
    family: &AnsatzFamily,
    theta: &ParameterVector,
    op: &RhsOperator,
    mode: &AssemblyMode,
    constraints: &[ConservedQuantity],
    config: &StepperConfig,
    sketch_indices: Option<&[usize]>,
) -> Result<(DVector<f64>, f64, f64, bool)> {
    let sys = assemble(family, theta, op, mode)?;
    let gamma = config.gamma;

    let grads: Vec<DVector<f64>> = constraints
        .iter()
        .map(|q| q.gradient(family, theta).map(DVector::from_vec))
        .collect::<Result<Vec<_>>>()?;

    match sys.kind {
        SystemKind::Galerkin => {
            let n = sys.matrix.nrows();
            let (m_full, f_full) = if gamma > 0.0 {
                (
                    &sys.matrix + DMatrix::identity(n, n) * gamma,
                    sys.rhs.clone(),
                )
            } else {
                (sys.matrix.clone(), sys.rhs.clone())
            };
            let (m, f, grads_s, idx) = match sketch_indices {
                Some(idx) => {
                    let m = DMatrix::from_fn(idx.len(), idx.len(), |i, j| {
                        m_full[(idx[i], idx[j])]
                    });
                    let f = DVector::from_fn(idx.len(), |i, _| f_full[idx[i]]);
                    let gs: Vec<DVector<f64>> = grads
                        .iter()
                        .map(|g| DVector::from_fn(idx.len(), |i, _| g[idx[i]]))
                        .collect();
                    (m, f, gs, Some(idx))
                }
                None => (m_full, f_full, grads, None),
            };
            let sol = solve_lagrange(&m, &f, &grads_s, config.rank_tol)?;
            let mut pseudo = sol.pseudo_inverse_used;
            // explicit rank_tol means: always take the min-norm truncated
            // solution rather than trusting a barely-definite factorization
            let chol = if config.rank_tol.is_none() {
                Cholesky::new(m.clone())
            } else {
                None
            };
            let x = match chol {
                Some(ch) => ch.solve(&sol.constrained_rhs),
                None => {
                    pseudo = true;
                    m.clone()
                        .svd(true, true)
                        .solve(
                            &sol.constrained_rhs,
                            config.rank_tol.unwrap_or_else(|| default_rank_tol(&m))
                                * m.norm().max(f64::MIN_POSITIVE),
                        )
                        .map_err(|e| SmsError::numeric(format!("metric solve failed: {e}")))?
                }
            };
            let residual = (&m * &x - &sol.constrained_rhs).norm();
            let full = match idx {
                Some(idx) => {
                    let mut v = DVector::zeros(n);
                    for (s, &i) in idx.iter().enumerate() {
                        v[i] = x[s];
                    }
                    v
                }
                None => x,
            };
            if full.iter().any(|v| !v.is_finite()) {
                return Err(SmsError::numeric("non-finite parameter rates"));
            }
            Ok((full, residual, sys.condition_estimate, pseudo))
        }
        SystemKind::Collocation => {
            if !constraints.is_empty() {
                return constrained_collocation(&sys, &grads, config);
            }
            let n = sys.matrix.ncols();
            let (mat, rhs, idx) = sketched_collocation_system(&sys, gamma, sketch_indices);
            let ls_sys = AssembledSystem {
                matrix: mat,
                rhs,
                kind: SystemKind::Collocation,
                condition_estimate: sys.condition_estimate,
            };
            let tol = config
                .rank_tol
                .unwrap_or_else(|| default_rank_tol(&ls_sys.matrix));
            let (x, diag) = solve_least_squares(&ls_sys, tol)?;
            let full = match idx {
                Some(idx) => {
                    let mut v = DVector::zeros(n);
                    for (s, &i) in idx.iter().enumerate() {
                        v[i] = x[s];
                    }
                    v
                }
                None => x,
            };
            if full.iter().any(|v| !v.is_finite()) {
                return Err(SmsError::numeric("non-finite parameter rates"));
            }
            Ok((full, diag.residual, sys.condition_estimate, false))
        }
    }
}

/// Column subset and Tikhonov augmentation (standard augmented least-squares
/// form) applied to the collocation system.
fn sketched_collocation_system<'a>(
    sys: &AssembledSystem,
    gamma: f64,
    sketch_indices: Option<&'a [usize]>,
) -> (DMatrix<f64>, DVector<f64>, Option<&'a [usize]>) {
    let base = match sketch_indices {
        Some(idx) => {
            let m = DMatrix::from_fn(sys.matrix.nrows(), idx.len(), |i, j| {
                sys.matrix[(i, idx[j])]
            });
            m
        }
        None => sys.matrix.clone(),
    };
    let (rows, cols) = (base.nrows(), base.ncols());
    if gamma > 0.0 {
        let mut aug = DMatrix::zeros(rows + cols, cols);
        aug.view_mut((0, 0), (rows, cols)).copy_from(&base);
        let sq = gamma.sqrt();
        for j in 0..cols {
            aug[(rows + j, j)] = sq;
        }
        let mut rhs = DVector::zeros(rows + cols);
        rhs.rows_mut(0, rows).copy_from(&sys.rhs);
        (aug, rhs, sketch_indices)
    } else {
        (base, sys.rhs.clone(), sketch_indices)
    }
}

/// Constraints on the collocation path go through the normal-equation Gram
/// matrix, accepted only when it has full rank.
fn constrained_collocation(
    sys: &AssembledSystem,
    grads: &[DVector<f64>],
    config: &StepperConfig,
) -> Result<(DVector<f64>, f64, f64, bool)> {
    let n = sys.matrix.ncols();
    let tol = config
        .rank_tol
        .unwrap_or_else(|| default_rank_tol(&sys.matrix));
    let (_, diag) = solve_least_squares(sys, tol)?;
    if diag.rank < n {
        return Err(SmsError::capability(
            "constrained collocation needs a full-column-rank system; \
             use the inner-product assembly or drop the constraints",
        ));
    }
    let gram = sys.matrix.transpose() * &sys.matrix
        + DMatrix::identity(n, n) * config.gamma;
    let f = sys.matrix.transpose() * &sys.rhs;
    let sol = solve_lagrange(&gram, &f, grads, config.rank_tol)?;
    let mut pseudo = sol.pseudo_inverse_used;
    let x = match Cholesky::new(gram.clone()) {
        Some(ch) => ch.solve(&sol.constrained_rhs),
        None => {
            pseudo = true;
            gram.clone()
                .svd(true, true)
                .solve(&sol.constrained_rhs, tol * gram.norm())
                .map_err(|e| SmsError::numeric(format!("gram solve failed: {e}")))?
        }
    };
    let residual = (&sys.matrix * &x - &sys.rhs).norm();
    Ok((x, residual, sys.condition_estimate, pseudo))
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive integration of a plain ODE dy/dt = f(t, y) with the same
/// embedded pair and step control as the parameter integrator. Used for
/// direct parameter ODEs and reference oracles.
pub fn integrate_ode(
    f: &dyn Fn(f64, &[f64]) -> Result<Vec<f64>>,
    y0: &[f64],
    t_span: (f64, f64),
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, RunStatus)> {
    let (t0, t_end) = t_span;
    if t0 >= t_end {
        return Err(SmsError::config("time span must satisfy t0 < T"));
    }
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(SmsError::config("tolerances must be positive"));
    }
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut times = vec![t0];
    let mut states = vec![y.clone()];
    let mut h = (t_end - t0) / 100.0;
    let h_min = 1e-12 * (t_end - t0);
    while t < t_end {
        if h < h_min {
            return Ok((times, states, RunStatus::Stiffness { t }));
        }
        let h_try = h.min(t_end - t);
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
        ks.push(f(t, &y)?);
        let mut stage_failed = false;
        for s in 1..7 {
            let ys: Vec<f64> = (0..y.len())
                .map(|i| y[i] + h_try * (0..s).map(|j| DP_A[s][j] * ks[j][i]).sum::<f64>())
                .collect();
            match f(t + DP_C[s] * h_try, &ys) {
                Ok(k) => {
                    if k.iter().any(|v| !v.is_finite()) {
                        stage_failed = true;
                        break;
                    }
                    ks.push(k);
                }
                Err(SmsError::Numeric { .. }) => {
                    stage_failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if stage_failed {
            h = 0.5 * h_try;
            continue;
        }
        let mut y5 = vec![0.0; y.len()];
        let mut err = 0.0;
        for i in 0..y.len() {
            let sum5: f64 = (0..7).map(|j| DP_B5[j] * ks[j][i]).sum();
            let sum4: f64 = (0..7).map(|j| DP_B4[j] * ks[j][i]).sum();
            y5[i] = y[i] + h_try * sum5;
            let sc = atol + rtol * y[i].abs().max(y5[i].abs());
            let e = h_try * (sum5 - sum4) / sc;
            err += e * e;
        }
        let err_norm = (err / y.len() as f64).sqrt();
        if err_norm <= 1.0 && y5.iter().all(|v| v.is_finite()) {
            t += h_try;
            y = y5;
            times.push(t);
            states.push(y.clone());
            let factor = if err_norm > 0.0 {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h = h_try * factor;
        } else {
            let factor = if err_norm.is_finite() && err_norm > 1.0 {
                (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.5
            };
            h = h_try * factor;
        }
    }
    Ok((times, states, RunStatus::Completed))
}

struct RhsContext<'a> {
    family: &'a AnsatzFamily,
    op: &'a RhsOperator,
    mode: &'a AssemblyMode,
    constraints: &'a [ConservedQuantity],
    config: &'a StepperConfig,
}

impl RhsContext<'_> {
    fn eval(
        &self,
        values: &[f64],
        sketch: Option<&[usize]>,
    ) -> Result<(DVector<f64>, f64, f64, bool)> {
        let theta = ParameterVector::new(
            values.to_vec(),
            self.family.block_layout(),
        )?;
        self.family.validate(&theta)?;
        step_rhs(
            self.family,
            &theta,
            self.op,
            self.mode,
            self.constraints,
            self.config,
            sketch,
        )
    }
}

/// Advances the parameters over the configured time span, recording
/// per-accepted-step diagnostics and conserved-quantity values.
pub fn integrate(
    family: &AnsatzFamily,
    theta0: &ParameterVector,
    op: &RhsOperator,
    mode: &AssemblyMode,
    constraints: &[ConservedQuantity],
    monitors: &[ConservedQuantity],
    config: &StepperConfig,
) -> Result<Trajectory> {
    config.validate(theta0.len())?;
    family.validate(theta0)?;
    let floors = family.lengthscale_indices();
    for &i in &floors {
        if theta0.values[i] <= config.positivity_floor {
            return Err(SmsError::config(
                "initial lengthscales must exceed the positivity floor",
            ));
        }
    }
    let (t0, t_end) = config.t_span;
    let ctx = RhsContext {
        family,
        op,
        mode,
        constraints,
        config,
    };
    let mut sketch_rng = config
        .sketch
        .as_ref()
        .map(|s| ChaCha8Rng::seed_from_u64(s.seed));
    let mut sketch_indices: Option<Vec<usize>> = None;
    let mut accepted_steps = 0usize;

    let mut t = t0;
    let mut y: Vec<f64> = theta0.values.clone();
    let mut times = vec![t0];
    let mut states = vec![theta0.clone()];
    let mut diagnostics = Vec::new();

    let record = |diags: &mut Vec<StepDiagnostics>,
                  t: f64,
                  dt: f64,
                  res: f64,
                  cond: f64,
                  rej: u32,
                  pseudo: bool,
                  y: &[f64]|
     -> Result<()> {
        let theta = ParameterVector::new(y.to_vec(), family.block_layout())?;
        let invariant_values = monitors
            .iter()
            .chain(constraints.iter())
            .map(|q| q.evaluate(family, &theta))
            .collect::<Result<Vec<_>>>()?;
        diags.push(StepDiagnostics {
            t,
            dt,
            residual: res,
            condition_estimate: cond,
            invariant_values,
            step_rejections: rej,
            pseudo_inverse_used: pseudo,
        });
        Ok(())
    };

    let positivity_ok = |y: &[f64]| floors.iter().all(|&i| y[i] > config.positivity_floor);

    match config.scheme {
        Scheme::Rk4Fixed { dt } => {
            let n_steps = ((t_end - t0) / dt).ceil() as usize;
            for step in 0..n_steps {
                if let (Some(s), Some(rng)) = (&config.sketch, &mut sketch_rng) {
                    if step % s.reseed_every == 0 {
                        sketch_indices = Some(sketch_matrix(y.len(), s.k, rng));
                    }
                }
                let h = dt.min(t_end - t);
                if h <= 0.0 {
                    break;
                }
                let sk = sketch_indices.as_deref();
                let (k1, res, cond, pseudo) = ctx.eval(&y, sk)?;
                let y2: Vec<f64> = y
                    .iter()
                    .zip(k1.iter())
                    .map(|(a, b)| a + 0.5 * h * b)
                    .collect();
                let (k2, ..) = ctx.eval(&y2, sk)?;
                let y3: Vec<f64> = y
                    .iter()
                    .zip(k2.iter())
                    .map(|(a, b)| a + 0.5 * h * b)
                    .collect();
                let (k3, ..) = ctx.eval(&y3, sk)?;
                let y4: Vec<f64> = y.iter().zip(k3.iter()).map(|(a, b)| a + h * b).collect();
                let (k4, ..) = ctx.eval(&y4, sk)?;
                for i in 0..y.len() {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(SmsError::numeric("state became non-finite"));
                }
                if !positivity_ok(&y) {
                    return Err(SmsError::numeric(
                        "lengthscale fell below the positivity floor under a fixed step",
                    ));
                }
                t += h;
                accepted_steps += 1;
                times.push(t);
                states.push(ParameterVector::new(y.clone(), family.block_layout())?);
                record(&mut diagnostics, t, h, res, cond, 0, pseudo, &y)?;
            }
            let _ = accepted_steps;
        }
        Scheme::Rk45Adaptive { rtol, atol } => {
            let mut h = (t_end - t0) / 100.0;
            let h_min = 1e-12 * (t_end - t0);
            let mut rejections_this_step = 0u32;
            while t < t_end {
                if h < h_min {
                    return Ok(Trajectory {
                        times,
                        states,
                        diagnostics,
                        status: RunStatus::Stiffness { t },
                    });
                }
                if let (Some(s), Some(rng)) = (&config.sketch, &mut sketch_rng) {
                    if sketch_indices.is_none() || accepted_steps % s.reseed_every == 0 {
                        sketch_indices = Some(sketch_matrix(y.len(), s.k, rng));
                    }
                }
                let sk = sketch_indices.as_deref();
                let h_try = h.min(t_end - t);
                let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
                let (k1, res, cond, pseudo) = ctx.eval(&y, sk)?;
                ks.push(k1);
                let mut stage_failed = false;
                for s in 1..7 {
                    let ys: Vec<f64> = (0..y.len())
                        .map(|i| {
                            y[i] + h_try
                                * (0..s).map(|j| DP_A[s][j] * ks[j][i]).sum::<f64>()
                        })
                        .collect();
                    if !positivity_ok(&ys) {
                        stage_failed = true;
                        break;
                    }
                    match ctx.eval(&ys, sk) {
                        Ok((k, ..)) => ks.push(k),
                        Err(SmsError::Numeric { .. }) => {
                            stage_failed = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                    let _ = DP_C;
                }
                if stage_failed {
                    h = 0.5 * h_try;
                    rejections_this_step += 1;
                    continue;
                }
                let mut y5 = vec![0.0; y.len()];
                let mut err = 0.0;
                for i in 0..y.len() {
                    let sum5: f64 = (0..7).map(|j| DP_B5[j] * ks[j][i]).sum();
                    let sum4: f64 = (0..7).map(|j| DP_B4[j] * ks[j][i]).sum();
                    y5[i] = y[i] + h_try * sum5;
                    let sc = atol + rtol * y[i].abs().max(y5[i].abs());
                    let e = h_try * (sum5 - sum4) / sc;
                    err += e * e;
                }
                let err_norm = (err / y.len() as f64).sqrt();
                let accept = err_norm <= 1.0
                    && y5.iter().all(|v| v.is_finite())
                    && positivity_ok(&y5);
                if accept {
                    t += h_try;
                    y = y5;
                    accepted_steps += 1;
                    times.push(t);
                    states.push(ParameterVector::new(y.clone(), family.block_layout())?);
                    record(
                        &mut diagnostics,
                        t,
                        h_try,
                        res,
                        cond,
                        rejections_this_step,
                        pseudo,
                        &y,
                    )?;
                    rejections_this_step = 0;
                    let factor = if err_norm > 0.0 {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    h = h_try * factor;
                } else {
                    rejections_this_step += 1;
                    let factor = if err_norm.is_finite() && err_norm > 1.0 {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9)
                    } else {
                        0.5
                    };
                    h = h_try * factor;
                }
            }
        }
    }

    Ok(Trajectory {
        times,
        states,
        diagnostics,
        status: RunStatus::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn working_setup() -> (AnsatzFamily, RhsOperator, AssemblyMode) {
        let fam = AnsatzFamily::GaussianMixture { dim: 1, terms: 1 };
        let op = RhsOperator::AdvectionDiffusion {
            c: vec![1.0],
            nu: 0.1,
        };
        let quad = QuadratureRule::gauss_legendre_truncated(1, 128, 16.0).unwrap();
        let mode = AssemblyMode::Galerkin {
            quad,
            closed_form: true,
        };
        (fam, op, mode)
    }

    fn default_config(scheme: Scheme) -> StepperConfig {
        StepperConfig {
            scheme,
            t_span: (0.1, 2.0),
            gamma: 0.0,
            sketch: None,
            rank_tol: None,
            positivity_floor: 1e-8,
        }
    }

    fn exact_theta(t: f64, c: f64, nu: f64) -> [f64; 3] {
        [
            1.0 / (4.0 * std::f64::consts::PI * nu * t).sqrt(),
            c * t,
            (4.0 * nu * t).sqrt(),
        ]
    }

    #[test]
    fn rates_match_closed_form_odes() {
        let (fam, op, mode) = working_setup();
        let (alpha, mu, sigma) = (0.8, 0.4, 1.3);
        let theta =
            ParameterVector::new(vec![alpha, mu, sigma], fam.block_layout()).unwrap();
        let cfg = default_config(Scheme::Rk45Adaptive {
            rtol: 1e-8,
            atol: 1e-10,
        });
        let (td, ..) = step_rhs(&fam, &theta, &op, &mode, &[], &cfg, None).unwrap();
        let nu = 0.1;
        let expect = [
            -2.0 * alpha * nu / (sigma * sigma),
            1.0,
            2.0 * nu / sigma,
        ];
        for i in 0..3 {
            assert!(
                (td[i] - expect[i]).abs() < 1e-9 * (1.0 + expect[i].abs()),
                "component {i}: {} vs {}",
                td[i],
                expect[i]
            );
        }
    }

    #[test]
    fn adaptive_run_tracks_exact_solution() {
        let (fam, op, mode) = working_setup();
        let (c, nu) = (1.0, 0.1);
        let th0 = exact_theta(0.1, c, nu);
        let theta0 = ParameterVector::new(th0.to_vec(), fam.block_layout()).unwrap();
        let cfg = default_config(Scheme::Rk45Adaptive {
            rtol: 1e-9,
            atol: 1e-11,
        });
        let traj = integrate(&fam, &theta0, &op, &mode, &[], &[], &cfg).unwrap();
        assert_eq!(traj.status, RunStatus::Completed);
        let yt = &traj.states.last().unwrap().values;
        let exact = exact_theta(2.0, c, nu);
        for i in 0..3 {
            let rel = (yt[i] - exact[i]).abs() / exact[i].abs();
            assert!(rel <= 1e-6, "component {i}: rel err {rel}");
        }
    }

    #[test]
    fn fixed_and_adaptive_agree() {
        let (fam, op, mode) = working_setup();
        let th0 = exact_theta(0.1, 1.0, 0.1);
        let theta0 = ParameterVector::new(th0.to_vec(), fam.block_layout()).unwrap();
        let rtol = 1e-8;
        let a = integrate(
            &fam,
            &theta0,
            &op,
            &mode,
            &[],
            &[],
            &default_config(Scheme::Rk45Adaptive { rtol, atol: 1e-10 }),
        )
        .unwrap();
        let b = integrate(
            &fam,
            &theta0,
            &op,
            &mode,
            &[],
            &[],
            &default_config(Scheme::Rk4Fixed { dt: 1e-3 }),
        )
        .unwrap();
        let ya = &a.states.last().unwrap().values;
        let yb = &b.states.last().unwrap().values;
        for i in 0..3 {
            assert!((ya[i] - yb[i]).abs() <= 10.0 * rtol * (1.0 + yb[i].abs()));
        }
    }

    #[test]
    fn zero_dynamics_freeze_the_state() {
        let fam = AnsatzFamily::GaussianMixture { dim: 1, terms: 1 };
        let op = RhsOperator::AdvectionDiffusion {
            c: vec![0.0],
            nu: 0.0,
        };
        let quad = QuadratureRule::gauss_legendre_truncated(1, 96, 14.0).unwrap();
        let mode = AssemblyMode::Galerkin {
            quad,
            closed_form: true,
        };
        let theta0 =
            ParameterVector::new(vec![0.8, 0.4, 1.3], fam.block_layout()).unwrap();
        let cfg = default_config(Scheme::Rk45Adaptive {
            rtol: 1e-8,
            atol: 1e-10,
        });
        let traj = integrate(&fam, &theta0, &op, &mode, &[], &[], &cfg).unwrap();
        for s in &traj.states {
            for (a, b) in s.values.iter().zip(&theta0.values) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tikhonov_shrinks_rates_monotonically() {
        let (fam, op, mode) = working_setup();
        let theta =
            ParameterVector::new(vec![0.8, 0.4, 1.3], fam.block_layout()).unwrap();
        let mut cfg = default_config(Scheme::Rk45Adaptive {
            rtol: 1e-8,
            atol: 1e-10,
        });
        let mut last = f64::INFINITY;
        for gamma in [0.0, 1.0, 10.0, 100.0] {
            cfg.gamma = gamma;
            let (td, ..) = step_rhs(&fam, &theta, &op, &mode, &[], &cfg, None).unwrap();
            let norm = td.norm();
            assert!(norm <= last + 1e-12, "gamma {gamma}: {norm} > {last}");
            last = norm;
        }
    }

    #[test]
    fn full_sketch_is_identity() {
        let (fam, op, _) = working_setup();
        let pts = CollocationSet::random_uniform(&[(-5.0, 6.0)], 12, 3).unwrap();
        let mode = AssemblyMode::Collocation { points: pts };
        let theta =
            ParameterVector::new(vec![0.8, 0.4, 1.3], fam.block_layout()).unwrap();
        let cfg = default_config(Scheme::Rk45Adaptive {
            rtol: 1e-8,
            atol: 1e-10,
        });
        let (a, ..) = step_rhs(&fam, &theta, &op, &mode, &[], &cfg, None).unwrap();
        let all: Vec<usize> = (0..3).collect();
        let (b, ..) = step_rhs(&fam, &theta, &op, &mode, &[], &cfg, Some(&all)).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn sketch_indices_reproducible_and_uniform() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sketch_matrix(10, 3, &mut r1), sketch_matrix(10, 3, &mut r2));
        assert_eq!(sketch_matrix(10, 10, &mut r1), (0..10).collect::<Vec<_>>());
        let mut counts = [0usize; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        for _ in 0..draws {
            for i in sketch_matrix(10, 3, &mut rng) {
                counts[i] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.3).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn regularized_condition_bound_holds() {
        let (fam, op, mode) = working_setup();
        let theta =
            ParameterVector::new(vec![0.8, 0.4, 1.3], fam.block_layout()).unwrap();
        let sys = assemble(&fam, &theta, &op, &mode).unwrap();
        let gamma = 1e-3;
        let n = sys.matrix.nrows();
        let reg = &sys.matrix + DMatrix::identity(n, n) * gamma;
        let cond = AssembledSystem::estimate_condition(&reg);
        let lam_max = sys
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b));
        assert!(cond <= (lam_max + gamma) / gamma * (1.0 + 1e-10));
    }

    #[test]
    fn constrained_run_conserves_the_quantity() {
        // inviscid transport with the L2 mass pinned
        let fam = AnsatzFamily::GaussianMixture { dim: 1, terms: 1 };
        let op = RhsOperator::AdvectionDiffusion {
            c: vec![1.0],
            nu: 0.0,
        };
        let quad = QuadratureRule::gauss_legendre_truncated(1, 128, 16.0).unwrap();
        let mode = AssemblyMode::Galerkin {
            quad,
            closed_form: true,
        };
        let theta0 =
            ParameterVector::new(vec![0.8, 0.4, 1.3], fam.block_layout()).unwrap();
        let q = ConservedQuantity::new(
            crate::constraints::QuantityKind::L2Mass,
            &fam,
            &theta0,
            None,
        )
        .unwrap();
        let cfg = StepperConfig {
            scheme: Scheme::Rk45Adaptive {
                rtol: 1e-9,
                atol: 1e-11,
            },
            t_span: (0.0, 2.0),
            gamma: 0.0,
            sketch: None,
            rank_tol: None,
            positivity_floor: 1e-8,
        };
        let traj =
            integrate(&fam, &theta0, &op, &mode, std::slice::from_ref(&q), &[], &cfg)
                .unwrap();
        let last = traj.states.last().unwrap();
        let drift = q.relative_drift(&fam, last).unwrap().abs();
        assert!(drift <= 1e-8, "drift {drift}");
    }

    #[test]
    fn stiff_blowup_reports_stiffness_with_partial_trajectory() {
        use crate::ansatz::SpatialPoint;
        use std::sync::Arc;
        // custom operator driving a finite-time singularity in the metric
        let fam = AnsatzFamily::GaussianMixture { dim: 1, terms: 1 };
        let op = RhsOperator::Custom {
            order: 0,
            f: Arc::new(|x: &SpatialPoint, jet: &crate::ansatz::Jet| {
                // steep self-amplifying forcing
                let u = jet.value();
                1e4 * u * u * u * (1.0 + x.0[0].abs())
            }),
        };
        let quad = QuadratureRule::gauss_legendre_truncated(1, 64, 12.0).unwrap();
        let mode = AssemblyMode::Galerkin {
            quad,
            closed_form: false,
        };
        let theta0 =
            ParameterVector::new(vec![1.0, 0.0, 0.5], fam.block_layout()).unwrap();
        let cfg = StepperConfig {
            scheme: Scheme::Rk45Adaptive {
                rtol: 1e-8,
                atol: 1e-10,
            },
            t_span: (0.0, 10.0),
            gamma: 0.0,
            sketch: None,
            rank_tol: None,
            positivity_floor: 1e-8,
        };
        let traj = integrate(&fam, &theta0, &op, &mode, &[], &[], &cfg).unwrap();
        match traj.status {
            RunStatus::Stiffness { t } => {
                assert!(t < 10.0);
                assert!(!traj.states.is_empty());
            }
            RunStatus::Completed => panic!("expected a stiffness failure"),
        }
    }
}
