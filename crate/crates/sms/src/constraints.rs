//! Conserved quantities of the parameterization, their gradients, and the
//! Lagrange system that keeps them constant along the parameter flow.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ansatz::{AnsatzFamily, ParameterVector};
use crate::error::{Result, SmsError};
use crate::gausscalc::{mixture_partial, mixture_term, GaussTerm};
use crate::quadrature::QuadratureRule;

pub const SQRT_HALF_PI: f64 = 1.2533141373155003; // sqrt(pi/2)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityKind {
    /// Integral of the squared field.
    L2Mass,
    /// Integral of the field itself (total probability for densities).
    ProbabilityMass,
    /// Integral of |grad psi|^2 for a stream function psi.
    KineticEnergy,
    /// Integral of (lap psi)^2, the squared vorticity.
    Enstrophy,
    /// Wave-packet mass, closed form in [alpha, sigma, v, phi].
    NlsMass,
    /// Wave-packet Hamiltonian (focusing cubic nonlinearity), closed form.
    NlsHamiltonian,
}

#[derive(Clone, Debug)]
pub struct ConservedQuantity {
    pub kind: QuantityKind,
    /// Quadrature rule for families without a closed-form evaluator.
    quad: Option<QuadratureRule>,
    pub reference_value: f64,
}

impl ConservedQuantity {
    /// Captures the reference value at the initial parameters.
    pub fn new(
        kind: QuantityKind,
        family: &AnsatzFamily,
        theta0: &ParameterVector,
        quad: Option<QuadratureRule>,
    ) -> Result<Self> {
        let mut q = ConservedQuantity {
            kind,
            quad,
            reference_value: 0.0,
        };
        q.reference_value = q.evaluate(family, theta0)?;
        Ok(q)
    }

    pub fn evaluate(&self, family: &AnsatzFamily, theta: &ParameterVector) -> Result<f64> {
        family.validate(theta)?;
        match (self.kind, family) {
            (QuantityKind::NlsMass, AnsatzFamily::NlsWavepacket { .. }) => {
                let (a, s) = (theta.values[0], theta.values[1]);
                Ok(SQRT_HALF_PI * a * a * s)
            }
            (QuantityKind::NlsHamiltonian, AnsatzFamily::NlsWavepacket { .. }) => {
                let (a, s, v) = (theta.values[0], theta.values[1], theta.values[2]);
                Ok(SQRT_HALF_PI * a * a * (1.0 / s + v * v * s)
                    - 0.25 * a.powi(4) * s * std::f64::consts::PI.sqrt())
            }
            (_, AnsatzFamily::GaussianMixture { dim, terms }) => {
                let terms = gaussian_field_terms(self.kind, theta, *dim, *terms)?;
                Ok(match self.kind {
                    QuantityKind::ProbabilityMass => {
                        terms.iter().map(|t| t.integral()).sum()
                    }
                    _ => pairwise_integral(&terms, &terms),
                })
            }
            _ => self.evaluate_quadrature(family, theta),
        }
    }

    pub fn gradient(&self, family: &AnsatzFamily, theta: &ParameterVector) -> Result<Vec<f64>> {
        family.validate(theta)?;
        match (self.kind, family) {
            (QuantityKind::NlsMass, AnsatzFamily::NlsWavepacket { .. }) => {
                let (a, s) = (theta.values[0], theta.values[1]);
                Ok(vec![2.0 * SQRT_HALF_PI * a * s, SQRT_HALF_PI * a * a, 0.0, 0.0])
            }
            (QuantityKind::NlsHamiltonian, AnsatzFamily::NlsWavepacket { .. }) => {
                let (a, s, v) = (theta.values[0], theta.values[1], theta.values[2]);
                let sp = std::f64::consts::PI.sqrt();
                Ok(vec![
                    2.0 * SQRT_HALF_PI * a * (1.0 / s + v * v * s) - sp * a.powi(3) * s,
                    SQRT_HALF_PI * a * a * (v * v - 1.0 / (s * s)) - 0.25 * sp * a.powi(4),
                    2.0 * SQRT_HALF_PI * a * a * v * s,
                    0.0,
                ])
            }
            (_, AnsatzFamily::GaussianMixture { dim, terms }) => {
                let field = gaussian_field_terms(self.kind, theta, *dim, *terms)?;
                let partials =
                    gaussian_partial_field_terms(self.kind, theta, *dim, *terms)?;
                Ok(partials
                    .iter()
                    .map(|p| match self.kind {
                        QuantityKind::ProbabilityMass => {
                            p.iter().map(|t| t.integral()).sum()
                        }
                        _ => 2.0 * pairwise_integral(&field, p),
                    })
                    .collect())
            }
            _ => self.gradient_quadrature(family, theta),
        }
    }

    /// Signed drift of the quantity relative to its reference value.
    pub fn relative_drift(&self, family: &AnsatzFamily, theta: &ParameterVector) -> Result<f64> {
        let v = self.evaluate(family, theta)?;
        let scale = self.reference_value.abs().max(f64::MIN_POSITIVE);
        Ok((v - self.reference_value) / scale)
    }

    fn required_order(&self) -> usize {
        match self.kind {
            QuantityKind::L2Mass | QuantityKind::ProbabilityMass => 0,
            QuantityKind::KineticEnergy => 1,
            QuantityKind::Enstrophy => 2,
            QuantityKind::NlsMass | QuantityKind::NlsHamiltonian => 0,
        }
    }

    fn quad(&self) -> Result<&QuadratureRule> {
        self.quad.as_ref().ok_or_else(|| {
            SmsError::capability(
                "no closed form for this family and no quadrature rule supplied",
            )
        })
    }

    fn evaluate_quadrature(
        &self,
        family: &AnsatzFamily,
        theta: &ParameterVector,
    ) -> Result<f64> {
        let ord = self.required_order();
        if ord > family.max_jet_order() {
            return Err(SmsError::capability("family lacks the required jet order"));
        }
        if matches!(self.kind, QuantityKind::NlsMass | QuantityKind::NlsHamiltonian) {
            return Err(SmsError::capability(
                "wave-packet quantities apply to the wave-packet family only",
            ));
        }
        let quad = self.quad()?.clone();
        let d = family.dim();
        Ok(quad.integrate(|x| {
            let jet = family.eval_jet(theta, x, ord).expect("validated family");
            match self.kind {
                QuantityKind::L2Mass => jet.value() * jet.value(),
                QuantityKind::ProbabilityMass => jet.value(),
                QuantityKind::KineticEnergy => (0..d)
                    .map(|k| {
                        let mut e = vec![0usize; d];
                        e[k] = 1;
                        let g = jet.partial(&e);
                        g * g
                    })
                    .sum(),
                QuantityKind::Enstrophy => {
                    let lap: f64 = (0..d)
                        .map(|k| {
                            let mut e = vec![0usize; d];
                            e[k] = 2;
                            jet.partial(&e)
                        })
                        .sum();
                    lap * lap
                }
                _ => unreachable!(),
            }
        }))
    }

    fn gradient_quadrature(
        &self,
        family: &AnsatzFamily,
        theta: &ParameterVector,
    ) -> Result<Vec<f64>> {
        let ord = self.required_order();
        if ord > family.max_jet_order() {
            return Err(SmsError::capability("family lacks the required jet order"));
        }
        let quad = self.quad()?.clone();
        let d = family.dim();
        let n = theta.len();
        let mut grad = vec![0.0; n];
        for (x, w) in quad.points() {
            let jet = family.eval_jet(theta, &x, ord)?;
            let pjets = family.param_jets(theta, &x, ord)?;
            for (i, pj) in pjets.iter().enumerate() {
                grad[i] += w * match self.kind {
                    QuantityKind::L2Mass => 2.0 * jet.value() * pj.value(),
                    QuantityKind::ProbabilityMass => pj.value(),
                    QuantityKind::KineticEnergy => {
                        2.0 * (0..d)
                            .map(|k| {
                                let mut e = vec![0usize; d];
                                e[k] = 1;
                                jet.partial(&e) * pj.partial(&e)
                            })
                            .sum::<f64>()
                    }
                    QuantityKind::Enstrophy => {
                        let lap = |j: &crate::ansatz::Jet| -> f64 {
                            (0..d)
                                .map(|k| {
                                    let mut e = vec![0usize; d];
                                    e[k] = 2;
                                    j.partial(&e)
                                })
                                .sum()
                        };
                        2.0 * lap(&jet) * lap(pj)
                    }
                    _ => unreachable!(),
                };
            }
        }
        Ok(grad)
    }
}

/// The quantity's integrand factor per mixture term: the field itself, its
/// gradient components, or its Laplacian.
fn gaussian_field_terms(
    kind: QuantityKind,
    theta: &ParameterVector,
    dim: usize,
    terms: usize,
) -> Result<Vec<GaussTerm>> {
    let per = dim + 2;
    let base: Vec<GaussTerm> = (0..terms)
        .map(|t| mixture_term(&theta.values[t * per..(t + 1) * per], dim))
        .collect();
    match kind {
        QuantityKind::L2Mass | QuantityKind::ProbabilityMass => Ok(base),
        QuantityKind::KineticEnergy | QuantityKind::Enstrophy => Ok(base),
        _ => Err(SmsError::capability(
            "wave-packet quantities apply to the wave-packet family only",
        )),
    }
}

/// Per-parameter partials transformed the same way as the field terms.
fn gaussian_partial_field_terms(
    kind: QuantityKind,
    theta: &ParameterVector,
    dim: usize,
    terms: usize,
) -> Result<Vec<Vec<GaussTerm>>> {
    let per = dim + 2;
    let mut out = Vec::with_capacity(terms * per);
    for t in 0..terms {
        let blk = &theta.values[t * per..(t + 1) * per];
        for c in 0..per {
            out.push(vec![mixture_partial(blk, dim, c)]);
        }
    }
    let _ = kind;
    Ok(out)
}

/// Inner product of two sums of terms under the quantity's bilinear form.
/// For plain terms this is the L2 product; gradient/Laplacian forms apply
/// the differential operator to both sides first (handled by the caller for
/// kinetic energy and enstrophy through [`apply_form`]).
fn pairwise_integral(a: &[GaussTerm], b: &[GaussTerm]) -> f64 {
    let mut s = 0.0;
    for ta in a {
        for tb in b {
            s += ta.product(tb).integral();
        }
    }
    s
}

/// Evaluate kinetic energy or enstrophy of a Gaussian stream function in
/// closed form (not a plain L2 pairing of the field terms).
pub fn gaussian_stream_quantity(
    kind: QuantityKind,
    theta: &ParameterVector,
    dim: usize,
    terms: usize,
) -> Result<f64> {
    let per = dim + 2;
    let base: Vec<GaussTerm> = (0..terms)
        .map(|t| mixture_term(&theta.values[t * per..(t + 1) * per], dim))
        .collect();
    match kind {
        QuantityKind::KineticEnergy => Ok((0..dim)
            .map(|k| {
                let d: Vec<GaussTerm> = base.iter().map(|g| g.deriv(k)).collect();
                pairwise_integral(&d, &d)
            })
            .sum()),
        QuantityKind::Enstrophy => {
            let lap: Vec<GaussTerm> = base.iter().map(|g| g.laplacian()).collect();
            Ok(pairwise_integral(&lap, &lap))
        }
        _ => Err(SmsError::capability(
            "stream quantities are kinetic energy and enstrophy",
        )),
    }
}

#[derive(Clone, Debug)]
pub struct LagrangeSolution {
    pub lambda: DVector<f64>,
    pub constrained_rhs: DVector<f64>,
    /// Set when the metric factorization or the constraint system needed a
    /// pseudo-inverse instead of a definite factorization.
    pub pseudo_inverse_used: bool,
}

/// Solves the multiplier system and returns the projected right-hand side
/// f - sum_k lambda_k grad I_k. One factorization of M serves all solves.
/// An explicit `rank_tol` requests min-norm truncated-SVD solves throughout,
/// which keeps the rates bounded when M grazes singularity.
pub fn solve_lagrange(
    m: &DMatrix<f64>,
    f: &DVector<f64>,
    grads: &[DVector<f64>],
    rank_tol: Option<f64>,
) -> Result<LagrangeSolution> {
    let n = m.nrows();
    if m.ncols() != n || f.len() != n {
        return Err(SmsError::config("metric and rhs dimensions disagree"));
    }
    let mcount = grads.len();
    if mcount == 0 {
        // empty sum: the unconstrained rates pass through untouched
        return Ok(LagrangeSolution {
            lambda: DVector::zeros(0),
            constrained_rhs: f.clone(),
            pseudo_inverse_used: false,
        });
    }
    if mcount > n {
        return Err(SmsError::config(format!(
            "{mcount} constraints over-determine {n} parameters"
        )));
    }
    for g in grads {
        if g.len() != n {
            return Err(SmsError::config("constraint gradient length mismatch"));
        }
    }

    let mut pseudo_inverse_used = false;
    let chol = if rank_tol.is_none() {
        Cholesky::new(m.clone())
    } else {
        None
    };
    let svd = if chol.is_none() {
        Some(m.clone().svd(true, true))
    } else {
        None
    };
    let eps = rank_tol
        .map(|t| t * m.norm().max(f64::MIN_POSITIVE))
        .unwrap_or_else(|| default_eps(m));
    let solve = |rhs: &DVector<f64>, flag: &mut bool| -> Result<DVector<f64>> {
        if let Some(ch) = &chol {
            Ok(ch.solve(rhs))
        } else {
            *flag = true;
            svd.as_ref()
                .unwrap()
                .solve(rhs, eps)
                .map_err(|e| SmsError::numeric(format!("metric pseudo-solve failed: {e}")))
        }
    };

    let y_f = solve(f, &mut pseudo_inverse_used)?;
    let ys: Vec<DVector<f64>> = grads
        .iter()
        .map(|g| solve(g, &mut pseudo_inverse_used))
        .collect::<Result<Vec<_>>>()?;

    let mut c = DMatrix::zeros(mcount, mcount);
    let mut b = DVector::zeros(mcount);
    for i in 0..mcount {
        b[i] = grads[i].dot(&y_f);
        for j in 0..mcount {
            c[(i, j)] = grads[i].dot(&ys[j]);
        }
    }
    // symmetrize against accumulation noise
    let c = 0.5 * (&c + c.transpose());

    let lambda = match Cholesky::new(c.clone()) {
        Some(ch) => ch.solve(&b),
        None => {
            pseudo_inverse_used = true;
            c.clone()
                .svd(true, true)
                .solve(&b, default_eps(&c))
                .map_err(|e| SmsError::numeric(format!("constraint solve failed: {e}")))?
        }
    };

    let mut constrained_rhs = f.clone();
    for (k, g) in grads.iter().enumerate() {
        constrained_rhs -= lambda[k] * g;
    }
    Ok(LagrangeSolution {
        lambda,
        constrained_rhs,
        pseudo_inverse_used,
    })
}

fn default_eps(m: &DMatrix<f64>) -> f64 {
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON * m.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_gaussian() -> (AnsatzFamily, ParameterVector) {
        let fam = AnsatzFamily::GaussianMixture { dim: 1, terms: 1 };
        let theta = ParameterVector::new(vec![0.8, 0.4, 1.3], fam.block_layout()).unwrap();
        (fam, theta)
    }

    #[test]
    fn l2_mass_closed_form_single_gaussian() {
        let (fam, theta) = single_gaussian();
        let q = ConservedQuantity::new(QuantityKind::L2Mass, &fam, &theta, None).unwrap();
        let expect = 0.8 * 0.8 * 1.3 * SQRT_HALF_PI;
        assert!((q.reference_value - expect).abs() < 1e-14 * expect);
        let zero =
            ParameterVector::new(vec![0.0, 0.4, 1.3], fam.block_layout()).unwrap();
        assert_eq!(q.evaluate(&fam, &zero).unwrap(), 0.0);
    }

    #[test]
    fn l2_mass_gradient_golden() {
        let (fam, theta) = single_gaussian();
        let q = ConservedQuantity::new(QuantityKind::L2Mass, &fam, &theta, None).unwrap();
        let g = q.gradient(&fam, &theta).unwrap();
        let expect = [
            SQRT_HALF_PI * 2.0 * 0.8 * 1.3,
            0.0,
            SQRT_HALF_PI * 0.8 * 0.8,
        ];
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let zero =
            ParameterVector::new(vec![0.0, 0.4, 1.3], fam.block_layout()).unwrap();
        let gz = q.gradient(&fam, &zero).unwrap();
        assert!(gz.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn probability_mass_2d_gaussian() {
        let fam = AnsatzFamily::GaussianMixture { dim: 2, terms: 1 };
        let theta =
            ParameterVector::new(vec![2.5, 0.3, -1.2, 1.7], fam.block_layout()).unwrap();
        let q =
            ConservedQuantity::new(QuantityKind::ProbabilityMass, &fam, &theta, None).unwrap();
        let expect = 2.5 * std::f64::consts::PI * 1.7 * 1.7;
        assert!((q.reference_value - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fam = AnsatzFamily::GaussianMixture { dim: 2, terms: 2 };
        let theta = ParameterVector::new(
            vec![0.9, 0.2, -0.3, 0.8, -0.5, 0.4, 0.1, 1.1],
            fam.block_layout(),
        )
        .unwrap();
        for kind in [QuantityKind::L2Mass, QuantityKind::ProbabilityMass] {
            let q = ConservedQuantity::new(kind, &fam, &theta, None).unwrap();
            let g = q.gradient(&fam, &theta).unwrap();
            let h = 1e-6;
            for i in 0..theta.len() {
                let mut up = theta.values.clone();
                up[i] += h;
                let mut dn = theta.values.clone();
                dn[i] -= h;
                let fu = q
                    .evaluate(
                        &fam,
                        &ParameterVector::new(up, fam.block_layout()).unwrap(),
                    )
                    .unwrap();
                let fd = q
                    .evaluate(
                        &fam,
                        &ParameterVector::new(dn, fam.block_layout()).unwrap(),
                    )
                    .unwrap();
                let est = (fu - fd) / (2.0 * h);
                assert!(
                    (g[i] - est).abs() < 1e-6 * (1.0 + est.abs()),
                    "{kind:?} component {i}: {} vs {est}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn quadrature_path_matches_closed_form() {
        let (fam, theta) = single_gaussian();
        let quad = QuadratureRule::gauss_legendre_truncated(1, 128, 14.0).unwrap();
        for kind in [QuantityKind::L2Mass, QuantityKind::ProbabilityMass] {
            let closed = ConservedQuantity::new(kind, &fam, &theta, None).unwrap();
            let mut via_quad = closed.clone();
            via_quad.quad = Some(quad.clone());
            let qv = via_quad.evaluate_quadrature(&fam, &theta).unwrap();
            assert!(
                (qv - closed.reference_value).abs() < 1e-10 * closed.reference_value.abs(),
                "{kind:?}: {qv} vs {}",
                closed.reference_value
            );
            let gq = via_quad.gradient_quadrature(&fam, &theta).unwrap();
            let gc = closed.gradient(&fam, &theta).unwrap();
            for (a, b) in gq.iter().zip(&gc) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn stream_quantities_match_quadrature() {
        let fam = AnsatzFamily::GaussianMixture { dim: 2, terms: 2 };
        let theta = ParameterVector::new(
            vec![1.0, 0.0, 0.8, 0.6, -1.0, 0.0, -0.8, 0.6],
            fam.block_layout(),
        )
        .unwrap();
        let quad = QuadratureRule::gauss_legendre_truncated(2, 140, 7.0).unwrap();
        for kind in [QuantityKind::KineticEnergy, QuantityKind::Enstrophy] {
            let exact = gaussian_stream_quantity(kind, &theta, 2, 2).unwrap();
            let q = ConservedQuantity {
                kind,
                quad: Some(quad.clone()),
                reference_value: 0.0,
            };
            let num = q.evaluate_quadrature(&fam, &theta).unwrap();
            assert!(
                (exact - num).abs() < 1e-8 * exact.abs().max(1.0),
                "{kind:?}: {exact} vs {num}"
            );
        }
    }

    #[test]
    fn nls_quantities_closed_forms() {
        let fam = AnsatzFamily::NlsWavepacket {
            channel: crate::ansatz::NlsChannel::Re,
        };
        let theta =
            ParameterVector::new(vec![0.2, 20.0, -0.05, 0.0], fam.block_layout()).unwrap();
        let mass = ConservedQuantity::new(QuantityKind::NlsMass, &fam, &theta, None).unwrap();
        assert!((mass.reference_value - SQRT_HALF_PI * 0.04 * 20.0).abs() < 1e-14);
        let ham =
            ConservedQuantity::new(QuantityKind::NlsHamiltonian, &fam, &theta, None).unwrap();
        let (a, s, v) = (0.2_f64, 20.0, -0.05);
        let expect = SQRT_HALF_PI * a * a * (1.0 / s + v * v * s)
            - 0.25 * a.powi(4) * s * std::f64::consts::PI.sqrt();
        assert!((ham.reference_value - expect).abs() < 1e-14);
        // gradient vs finite differences
        for (q, _) in [(&mass, "mass"), (&ham, "hamiltonian")] {
            let g = q.gradient(&fam, &theta).unwrap();
            let h = 1e-6;
            for i in 0..4 {
                let mut up = theta.values.clone();
                up[i] += h;
                let mut dn = theta.values.clone();
                dn[i] -= h;
                let fu = q
                    .evaluate(&fam, &ParameterVector::new(up, fam.block_layout()).unwrap())
                    .unwrap();
                let fd = q
                    .evaluate(&fam, &ParameterVector::new(dn, fam.block_layout()).unwrap())
                    .unwrap();
                let est = (fu - fd) / (2.0 * h);
                assert!((g[i] - est).abs() < 1e-5 * (1.0 + est.abs()));
            }
        }
    }

    // inviscid transport: the L2 mass is conserved, so its multiplier is 0
    fn working_example_system() -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (alpha, sigma, c, nu) = (0.8_f64, 1.3, 1.0, 0.0);
        let s = SQRT_HALF_PI;
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[
                s * sigma,
                0.0,
                s * alpha / 2.0,
                0.0,
                s * alpha * alpha / sigma,
                0.0,
                s * alpha / 2.0,
                0.0,
                s * 3.0 * alpha * alpha / (4.0 * sigma),
            ],
        );
        let f = DVector::from_vec(vec![
            -s * alpha * nu / sigma,
            s * alpha * alpha * c / sigma,
            s * alpha * alpha * nu / (2.0 * sigma * sigma),
        ]);
        let grad = DVector::from_vec(vec![
            s * 2.0 * alpha * sigma,
            0.0,
            s * alpha * alpha,
        ]);
        (m, f, grad)
    }

    #[test]
    fn working_example_multiplier_vanishes() {
        let (m, f, grad) = working_example_system();
        let sol = solve_lagrange(&m, &f, &[grad.clone()], None).unwrap();
        assert!(sol.lambda[0].abs() < 1e-12, "lambda = {}", sol.lambda[0]);
        assert!(!sol.pseudo_inverse_used);
        // b = <grad I, M^-1 f> vanishes for the diffusion dynamics
        let y = m.clone().lu().solve(&f).unwrap();
        assert!(grad.dot(&y).abs() < 1e-12);
        // the multiplier matrix itself: grad^T M^-1 grad = 2 sqrt(2 pi) a^2 s
        let yg = m.clone().lu().solve(&grad).unwrap();
        let c_val = grad.dot(&yg);
        let expect = 2.0 * (2.0 * std::f64::consts::PI).sqrt() * 0.64 * 1.3;
        assert!((c_val - expect).abs() < 1e-10 * expect, "C = {c_val}");
    }

    #[test]
    fn zero_rhs_gives_zero_multipliers() {
        let (m, _, grad) = working_example_system();
        let f = DVector::zeros(3);
        let sol = solve_lagrange(&m, &f, &[grad], None).unwrap();
        assert_eq!(sol.lambda[0], 0.0);
        assert_eq!(sol.constrained_rhs.amax(), 0.0);
    }

    #[test]
    fn gradient_parallel_to_rhs_freezes_quantity() {
        // 2-parameter hand system; oracle: lambda = b / C solved directly
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let f = DVector::from_vec(vec![0.8, -0.4]);
        let grad = 2.0 * &f;
        let sol = solve_lagrange(&m, &f, &[grad.clone()], None).unwrap();
        let theta_dot = m.clone().lu().solve(&sol.constrained_rhs).unwrap();
        assert!(grad.dot(&theta_dot).abs() < 1e-12);
        // oracle
        let minv_f = m.clone().lu().solve(&f).unwrap();
        let minv_g = m.clone().lu().solve(&grad).unwrap();
        let lambda = grad.dot(&minv_f) / grad.dot(&minv_g);
        assert!((sol.lambda[0] - lambda).abs() < 1e-12);
    }

    #[test]
    fn conservation_holds_for_random_systems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 5;
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let f = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let grads: Vec<DVector<f64>> = (0..2)
                .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let sol = solve_lagrange(&m, &f, &grads, None).unwrap();
            let td = m.clone().lu().solve(&sol.constrained_rhs).unwrap();
            for g in &grads {
                assert!(g.dot(&td).abs() <= 1e-10 * g.norm() * td.norm().max(1.0));
            }
        }
    }

    #[test]
    fn empty_constraint_set_is_bitwise_passthrough() {
        let (m, f, _) = working_example_system();
        let sol = solve_lagrange(&m, &f, &[], None).unwrap();
        assert_eq!(sol.constrained_rhs, f);
        assert_eq!(sol.lambda.len(), 0);
    }

    #[test]
    fn overconstrained_is_rejected() {
        let (m, f, grad) = working_example_system();
        let grads = vec![grad.clone(), grad.clone(), grad.clone(), grad];
        assert!(solve_lagrange(&m, &f, &grads, None).is_err());
    }

    #[test]
    fn dependent_gradients_use_pseudo_inverse() {
        let (m, f, grad) = working_example_system();
        let sol = solve_lagrange(&m, &f, &[grad.clone(), 2.0 * &grad], None).unwrap();
        assert!(sol.pseudo_inverse_used);
        let td = m.clone().lu().solve(&sol.constrained_rhs).unwrap();
        assert!(grad.dot(&td).abs() <= 1e-10 * grad.norm() * td.norm().max(1.0));
    }
}
