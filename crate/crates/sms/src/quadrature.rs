//! Quadrature rules used by the Galerkin assembly and quadrature-backed
//! conserved quantities: truncated Gauss–Legendre, mapped Gauss–Hermite and
//! equispaced trapezoid for periodic integrands, extended to tensor products.

use crate::ansatz::SpatialPoint;
use crate::error::{Result, SmsError};
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    GaussLegendreTruncated,
    GaussHermiteMapped,
    PeriodicTrapezoid,
    TensorProduct,
}

#[derive(Clone, Debug)]
struct Axis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lo: f64,
    hi: f64,
}

/// A tensor-product quadrature rule over a d-dimensional box.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub scheme: Scheme,
    axes: Vec<Axis>,
    /// Truncation radius declared for decaying ansatz support checks.
    pub truncation_radius: f64,
}

impl QuadratureRule {
    /// Gauss–Legendre on [-radius, radius] per axis.
    pub fn gauss_legendre_truncated(dim: usize, nodes_per_axis: usize, radius: f64) -> Result<Self> {
        Self::gauss_legendre_box(&vec![(-radius, radius); dim], nodes_per_axis).map(|mut q| {
            q.truncation_radius = radius;
            q
        })
    }

    /// Gauss–Legendre on an arbitrary box.
    pub fn gauss_legendre_box(bounds: &[(f64, f64)], nodes_per_axis: usize) -> Result<Self> {
        if bounds.is_empty() || nodes_per_axis == 0 {
            return Err(SmsError::config("empty quadrature specification"));
        }
        let (xs, ws) = gauss_legendre(nodes_per_axis);
        let axes = bounds
            .iter()
            .map(|&(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo);
                Axis {
                    nodes: xs.iter().map(|&t| c + h * t).collect(),
                    weights: ws.iter().map(|&w| w * h).collect(),
                    lo,
                    hi,
                }
            })
            .collect();
        let radius = bounds
            .iter()
            .map(|&(lo, hi)| lo.abs().max(hi.abs()))
            .fold(0.0, f64::max);
        Ok(QuadratureRule {
            scheme: Scheme::GaussLegendreTruncated,
            axes,
            truncation_radius: radius,
        })
    }

    /// Gauss–Hermite nodes mapped by x = center + scale * t, reweighted for
    /// plain (unweighted) integrands that decay like a Gaussian.
    pub fn gauss_hermite_mapped(dim: usize, n: usize, center: f64, scale: f64) -> Result<Self> {
        if n == 0 || scale <= 0.0 {
            return Err(SmsError::config("hermite rule needs n >= 1, scale > 0"));
        }
        let (ts, ws) = gauss_hermite(n);
        let axis = Axis {
            nodes: ts.iter().map(|&t| center + scale * t).collect(),
            weights: ts
                .iter()
                .zip(&ws)
                .map(|(&t, &w)| w * (t * t).exp() * scale)
                .collect(),
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        };
        Ok(QuadratureRule {
            scheme: Scheme::GaussHermiteMapped,
            axes: vec![axis; dim],
            truncation_radius: f64::INFINITY,
        })
    }

    /// Equispaced trapezoid on the half-open interval [-L/2, L/2), spectrally
    /// accurate for L-periodic integrands.
    pub fn periodic_trapezoid(n: usize, period: f64) -> Result<Self> {
        if n == 0 || period <= 0.0 {
            return Err(SmsError::config("trapezoid rule needs n >= 1, period > 0"));
        }
        let h = period / n as f64;
        let axis = Axis {
            nodes: (0..n).map(|i| -period / 2.0 + i as f64 * h).collect(),
            weights: vec![h; n],
            lo: -period / 2.0,
            hi: period / 2.0,
        };
        Ok(QuadratureRule {
            scheme: Scheme::PeriodicTrapezoid,
            axes: vec![axis],
            truncation_radius: period / 2.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.axes.iter().map(|a| (a.lo, a.hi)).collect()
    }

    /// Same scheme with every axis node count doubled (convergence checks).
    pub fn refined(&self) -> Result<QuadratureRule> {
        match self.scheme {
            Scheme::GaussLegendreTruncated | Scheme::TensorProduct => {
                let bounds = self.bounds();
                let n = self.axes[0].nodes.len() * 2;
                let mut q = Self::gauss_legendre_box(&bounds, n)?;
                q.truncation_radius = self.truncation_radius;
                Ok(q)
            }
            Scheme::PeriodicTrapezoid => {
                let n = self.axes[0].nodes.len() * 2;
                Self::periodic_trapezoid(n, self.axes[0].hi - self.axes[0].lo)
            }
            Scheme::GaussHermiteMapped => Err(SmsError::capability(
                "refinement for mapped hermite rules is not provided",
            )),
        }
    }

    /// Iterate over tensor-product (point, weight) pairs.
    pub fn points(&self) -> Vec<(SpatialPoint, f64)> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; d];
        loop {
            let mut coords = Vec::with_capacity(d);
            let mut w = 1.0;
            for (a, &i) in self.axes.iter().zip(&idx) {
                coords.push(a.nodes[i]);
                w *= a.weights[i];
            }
            out.push((SpatialPoint(coords), w));
            // advance the odometer
            let mut axis = 0;
            loop {
                if axis == d {
                    return out;
                }
                idx[axis] += 1;
                if idx[axis] < self.axes[axis].nodes.len() {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }

    /// Integrate a scalar function over the rule.
    pub fn integrate(&self, mut f: impl FnMut(&SpatialPoint) -> f64) -> f64 {
        self.points().iter().map(|(p, w)| w * f(p)).sum()
    }
}

/// Gauss–Legendre nodes/weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Hermite nodes/weights (weight e^{-x^2}) via the Golub–Welsch
/// eigenvalue method on the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i - 1, i)] = b;
        jac[(i, i - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mu0 = std::f64::consts::PI.sqrt();
    for k in 0..n {
        let x = eig.eigenvalues[k];
        let v0 = eig.eigenvectors[(0, k)];
        pairs.push((x, mu0 * v0 * v0));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}
