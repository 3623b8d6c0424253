//! Right-hand-side operators F(u) of the evolution equation u_t = F(u).
//!
//! Operators are evaluated pointwise from a spatial jet of the ansatz. The
//! 2D vorticity operator is special: the ansatz parameterizes the stream
//! function, and both the dynamics and the test functions are expressed
//! through its derivatives.

use std::fmt;
use std::sync::Arc;

use crate::ansatz::{Jet, SpatialPoint};
use crate::error::{Result, SmsError};
use crate::gausscalc::Poly;

#[derive(Clone)]
pub enum RhsOperator {
    /// u_t = -c . grad u + nu lap u
    AdvectionDiffusion { c: Vec<f64>, nu: f64 },
    /// u_t = -div(v u) + nu lap u with polynomial drift v(x)
    FokkerPlanck { nu: f64, drift: Vec<Poly> },
    /// u_t = -u u_x - u_xx - u_xxxx on a 1D domain
    KuramotoSivashinsky,
    /// Stream-function form: omega = -lap psi, v = (psi_y, -psi_x),
    /// omega_t = -v . grad omega + nu lap omega
    NsVorticity2d { nu: f64 },
    /// User-supplied pointwise operator needing jets up to `order`.
    Custom {
        order: usize,
        f: Arc<dyn Fn(&SpatialPoint, &Jet) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for RhsOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhsOperator::AdvectionDiffusion { c, nu } => f
                .debug_struct("AdvectionDiffusion")
                .field("c", c)
                .field("nu", nu)
                .finish(),
            RhsOperator::FokkerPlanck { nu, .. } => {
                f.debug_struct("FokkerPlanck").field("nu", nu).finish()
            }
            RhsOperator::KuramotoSivashinsky => f.write_str("KuramotoSivashinsky"),
            RhsOperator::NsVorticity2d { nu } => {
                f.debug_struct("NsVorticity2d").field("nu", nu).finish()
            }
            RhsOperator::Custom { order, .. } => {
                f.debug_struct("Custom").field("order", order).finish()
            }
        }
    }
}

impl RhsOperator {
    pub fn spatial_dim(&self) -> Option<usize> {
        match self {
            RhsOperator::AdvectionDiffusion { c, .. } => Some(c.len()),
            RhsOperator::FokkerPlanck { drift, .. } => Some(drift.len()),
            RhsOperator::KuramotoSivashinsky => Some(1),
            RhsOperator::NsVorticity2d { .. } => Some(2),
            RhsOperator::Custom { .. } => None,
        }
    }

    /// Highest spatial derivative the operator reads from the jet.
    pub fn required_jet_order(&self) -> usize {
        match self {
            RhsOperator::AdvectionDiffusion { .. } | RhsOperator::FokkerPlanck { .. } => 2,
            RhsOperator::KuramotoSivashinsky => 4,
            RhsOperator::NsVorticity2d { nu } => {
                if *nu == 0.0 {
                    3
                } else {
                    4
                }
            }
            RhsOperator::Custom { order, .. } => *order,
        }
    }

    /// True when the ansatz represents a stream function rather than the
    /// evolved field itself.
    pub fn uses_stream_function(&self) -> bool {
        matches!(self, RhsOperator::NsVorticity2d { .. })
    }

    pub fn validate(&self, ansatz_dim: usize, ansatz_order: usize) -> Result<()> {
        if let Some(d) = self.spatial_dim() {
            if d != ansatz_dim {
                return Err(SmsError::config(format!(
                    "operator expects dimension {d}, ansatz has dimension {ansatz_dim}"
                )));
            }
        }
        if self.required_jet_order() > ansatz_order {
            return Err(SmsError::capability(format!(
                "operator needs spatial derivatives of order {}, ansatz supports {}",
                self.required_jet_order(),
                ansatz_order
            )));
        }
        Ok(())
    }

    /// Evaluate F at one point from the jet of the ansatz (or of the stream
    /// function for the vorticity operator).
    pub fn eval(&self, x: &SpatialPoint, jet: &Jet) -> f64 {
        match self {
            RhsOperator::AdvectionDiffusion { c, nu } => {
                let d = c.len();
                let mut out = 0.0;
                for k in 0..d {
                    let mut e1 = vec![0usize; d];
                    e1[k] = 1;
                    out -= c[k] * jet.partial(&e1);
                    let mut e2 = vec![0usize; d];
                    e2[k] = 2;
                    out += nu * jet.partial(&e2);
                }
                out
            }
            RhsOperator::FokkerPlanck { nu, drift } => {
                let d = drift.len();
                let u = jet.partial(&vec![0; d]);
                let mut out = 0.0;
                for k in 0..d {
                    let mut e1 = vec![0usize; d];
                    e1[k] = 1;
                    let uk = jet.partial(&e1);
                    let mut e2 = vec![0usize; d];
                    e2[k] = 2;
                    out += nu * jet.partial(&e2);
                    out -= drift[k].deriv(k).eval(&x.0) * u + drift[k].eval(&x.0) * uk;
                }
                out
            }
            RhsOperator::KuramotoSivashinsky => {
                let u = jet.partial(&[0]);
                let ux = jet.partial(&[1]);
                let uxx = jet.partial(&[2]);
                let uxxxx = jet.partial(&[4]);
                -u * ux - uxx - uxxxx
            }
            RhsOperator::NsVorticity2d { nu } => {
                let p = |ex: usize, ey: usize| jet.partial(&[ex, ey]);
                let vx = p(0, 1);
                let vy = -p(1, 0);
                // omega = -(psi_xx + psi_yy)
                let wx = -(p(3, 0) + p(1, 2));
                let wy = -(p(2, 1) + p(0, 3));
                let mut out = -(vx * wx + vy * wy);
                if *nu != 0.0 {
                    let lap_w = -(p(4, 0) + 2.0 * p(2, 2) + p(0, 4));
                    out += nu * lap_w;
                }
                out
            }
            RhsOperator::Custom { f, .. } => f(x, jet),
        }
    }

    /// Value of the test function at a point, given the jet of the parameter
    /// partial du/dtheta_i. Identity except in stream-function form, where the
    /// test functions are -lap of the partials.
    pub fn test_value(&self, partial_jet: &Jet, dim: usize) -> f64 {
        match self {
            RhsOperator::NsVorticity2d { .. } => {
                -(partial_jet.partial(&[2, 0]) + partial_jet.partial(&[0, 2]))
            }
            _ => partial_jet.partial(&vec![0; dim]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{AnsatzFamily, ParameterVector};

    #[test]
    fn advection_diffusion_matches_hand_value() {
        // u = alpha exp(-(x-mu)^2/sigma^2); F = -c u_x + nu u_xx
        let fam = AnsatzFamily::GaussianMixture { dim: 1, terms: 1 };
        let theta = ParameterVector::new(vec![1.2, 0.3, 0.9], fam.block_layout()).unwrap();
        let x = SpatialPoint(vec![0.7]);
        let jet = fam.eval_jet(&theta, &x, 2).unwrap();
        let op = RhsOperator::AdvectionDiffusion {
            c: vec![1.0],
            nu: 0.1,
        };
        let (alpha, mu, sigma) = (1.2_f64, 0.3, 0.9);
        let z = (x.0[0] - mu) / (sigma * sigma);
        let u = alpha * (-(x.0[0] - mu) * (x.0[0] - mu) / (sigma * sigma)).exp();
        let ux = -2.0 * z * u;
        let uxx = (4.0 * z * z - 2.0 / (sigma * sigma)) * u;
        let expect = -1.0 * ux + 0.1 * uxx;
        assert!((op.eval(&x, &jet) - expect).abs() < 1e-12);
    }

    #[test]
    fn fokker_planck_reduces_to_advection_for_constant_drift() {
        let fam = AnsatzFamily::GaussianMixture { dim: 2, terms: 1 };
        let theta =
            ParameterVector::new(vec![0.8, 0.1, -0.2, 1.1], fam.block_layout()).unwrap();
        let x = SpatialPoint(vec![0.4, -0.5]);
        let jet = fam.eval_jet(&theta, &x, 2).unwrap();
        let fp = RhsOperator::FokkerPlanck {
            nu: 0.05,
            drift: vec![Poly::constant(2, 0.7), Poly::constant(2, -0.3)],
        };
        let ad = RhsOperator::AdvectionDiffusion {
            c: vec![0.7, -0.3],
            nu: 0.05,
        };
        assert!((fp.eval(&x, &jet) - ad.eval(&x, &jet)).abs() < 1e-13);
    }

    #[test]
    fn order_requirements() {
        assert_eq!(RhsOperator::KuramotoSivashinsky.required_jet_order(), 4);
        assert_eq!(RhsOperator::NsVorticity2d { nu: 0.0 }.required_jet_order(), 3);
        assert_eq!(
            RhsOperator::NsVorticity2d { nu: 1e-3 }.required_jet_order(),
            4
        );
    }
}
