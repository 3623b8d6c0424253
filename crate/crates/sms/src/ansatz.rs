//! Ansatz families: evaluation, parameter partials, and spatial-derivative jets.
//!
//! Every family evaluates through a scalar-generic composition graph, so the
//! same code path produces plain values (`f64`), spatial jets ([`Taylor`]) and
//! parameter tangents ([`Dual`]).

use crate::error::{Result, SmsError};
use crate::jet::{index_table, Dual, IndexTable, Scalar, Taylor};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Block layout of a parameter vector: `terms` blocks of `per_term` parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub terms: usize,
    pub per_term: usize,
}

/// The SMS parameter state theta(t).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub block_layout: Option<BlockLayout>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, block_layout: Option<BlockLayout>) -> Result<Self> {
        if values.is_empty() {
            return Err(SmsError::config("parameter vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SmsError::input("parameter vector contains non-finite values"));
        }
        if let Some(b) = block_layout {
            if b.terms * b.per_term != values.len() {
                return Err(SmsError::config(format!(
                    "block layout {}x{} does not match parameter count {}",
                    b.terms,
                    b.per_term,
                    values.len()
                )));
            }
        }
        Ok(ParameterVector {
            values,
            block_layout,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A point in the spatial domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialPoint(pub Vec<f64>);

impl SpatialPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|c| !c.is_finite()) {
            return Err(SmsError::input("spatial point must be finite and non-empty"));
        }
        Ok(SpatialPoint(coords))
    }
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Value plus spatial partial derivatives up to `max_order`, one entry per
/// sorted multi-index.
#[derive(Clone, Debug)]
pub struct Jet {
    table: Arc<IndexTable>,
    /// Derivative values (not Taylor coefficients) per multi-index slot.
    values: Vec<f64>,
}

impl Jet {
    pub fn from_taylor(t: &Taylor) -> Jet {
        let values = t
            .c
            .iter()
            .zip(&t.table.multifact)
            .map(|(c, f)| c * f)
            .collect();
        Jet {
            table: t.table.clone(),
            values,
        }
    }

    /// One-dimensional jet from derivative values [u, u_x, u_xx, ...].
    pub(crate) fn from_derivatives_1d(values: Vec<f64>) -> Jet {
        Jet {
            table: index_table(1, values.len() - 1),
            values,
        }
    }

    pub fn value(&self) -> f64 {
        self.values[0]
    }

    pub fn max_order(&self) -> usize {
        self.table.order
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    /// Derivative value for a multi-index, e.g. `partial(&[2])` = u_xx in 1D.
    pub fn partial(&self, exps: &[usize]) -> f64 {
        let idx = self.table.pos[&exps.to_vec()];
        self.values[idx]
    }

    pub fn partials(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.table
            .exps
            .iter()
            .map(|e| e.as_slice())
            .zip(self.values.iter().copied())
    }
}

/// Network activation; the families default to tanh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<S: Scalar>(&self, z: &S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => z.neg().exp().add_scalar(1.0).recip(),
        }
    }
}

/// Real/imaginary channel of the NLS Gaussian wave packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlsChannel {
    Re,
    Im,
}

/// An evaluable ansatz u_hat(x, theta) with parameter partials and spatial jets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnsatzFamily {
    /// Sum of isotropic Gaussians; per-term layout [alpha, mu_1..mu_d, sigma].
    GaussianMixture { dim: usize, terms: usize },
    /// Evolutional shallow network; per-term layout [alpha, w_1..w_d, b].
    ShallowNet {
        dim: usize,
        terms: usize,
        #[serde(default)]
        activation: Activation,
    },
    /// Evolutional deep network; `layers` lists input and hidden widths
    /// [d, h_1, .., h_L]; a trailing affine layer produces the scalar output.
    DeepNet {
        layers: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    /// Shape-morphing linear finite elements on [x_left, x_right];
    /// per-term layout [alpha_i, x_i] with static boundary nodes.
    ShapeFem {
        x_left: f64,
        x_right: f64,
        terms: usize,
    },
    /// Gaussian wave packet for NLS, one real channel; theta = [alpha, sigma, v, phi].
    NlsWavepacket { channel: NlsChannel },
    /// Periodic-embedded shallow tanh network; per-term layout [alpha, w, b, c].
    KsPeriodicNet { terms: usize, period: f64 },
}

impl AnsatzFamily {
    pub fn dim(&self) -> usize {
        match self {
            AnsatzFamily::GaussianMixture { dim, .. } => *dim,
            AnsatzFamily::ShallowNet { dim, .. } => *dim,
            AnsatzFamily::DeepNet { layers, .. } => layers[0],
            AnsatzFamily::ShapeFem { .. } => 1,
            AnsatzFamily::NlsWavepacket { .. } => 1,
            AnsatzFamily::KsPeriodicNet { .. } => 1,
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            AnsatzFamily::GaussianMixture { dim, terms } => terms * (dim + 2),
            AnsatzFamily::ShallowNet { dim, terms, .. } => terms * (dim + 2),
            AnsatzFamily::DeepNet { layers, .. } => {
                let mut n = 0;
                for w in layers.windows(2) {
                    n += w[1] * w[0] + w[1];
                }
                n + layers[layers.len() - 1] + 1
            }
            AnsatzFamily::ShapeFem { terms, .. } => 2 * terms,
            AnsatzFamily::NlsWavepacket { .. } => 4,
            AnsatzFamily::KsPeriodicNet { terms, .. } => 4 * terms,
        }
    }

    pub fn block_layout(&self) -> Option<BlockLayout> {
        match self {
            AnsatzFamily::GaussianMixture { dim, terms } => Some(BlockLayout {
                terms: *terms,
                per_term: dim + 2,
            }),
            AnsatzFamily::ShallowNet { dim, terms, .. } => Some(BlockLayout {
                terms: *terms,
                per_term: dim + 2,
            }),
            AnsatzFamily::KsPeriodicNet { terms, .. } => Some(BlockLayout {
                terms: *terms,
                per_term: 4,
            }),
            AnsatzFamily::ShapeFem { terms, .. } => Some(BlockLayout {
                terms: *terms,
                per_term: 2,
            }),
            _ => None,
        }
    }

    /// Highest spatial derivative order the family supports through jets.
    pub fn max_jet_order(&self) -> usize {
        match self {
            AnsatzFamily::ShapeFem { .. } => 1,
            _ => 4,
        }
    }

    /// Indices of parameters that must stay positive (Gaussian lengthscales,
    /// the NLS packet width).
    pub fn lengthscale_indices(&self) -> Vec<usize> {
        match self {
            AnsatzFamily::GaussianMixture { dim, terms } => {
                (0..*terms).map(|i| i * (dim + 2) + dim + 1).collect()
            }
            AnsatzFamily::NlsWavepacket { .. } => vec![1],
            _ => Vec::new(),
        }
    }

    /// Check family-specific parameter invariants.
    pub fn validate(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.param_len() {
            return Err(SmsError::config(format!(
                "family expects {} parameters, got {}",
                self.param_len(),
                theta.len()
            )));
        }
        if theta.values.iter().any(|v| !v.is_finite()) {
            return Err(SmsError::input("non-finite parameter"));
        }
        match self {
            AnsatzFamily::GaussianMixture { dim, terms } => {
                for i in 0..*terms {
                    let sigma = theta.values[i * (dim + 2) + dim + 1];
                    if sigma <= 0.0 {
                        return Err(SmsError::config(format!(
                            "gaussian term {i} has non-positive lengthscale {sigma}"
                        )));
                    }
                }
            }
            AnsatzFamily::ShapeFem {
                x_left,
                x_right,
                terms,
            } => {
                let mut prev = *x_left;
                for i in 0..*terms {
                    let node = theta.values[2 * i + 1];
                    if node <= prev {
                        return Err(SmsError::config(format!(
                            "shape_fem nodes must be strictly increasing; node {i} = {node} <= {prev}"
                        )));
                    }
                    prev = node;
                }
                if *x_right <= prev {
                    return Err(SmsError::config(
                        "shape_fem right boundary must exceed the last node",
                    ));
                }
            }
            AnsatzFamily::NlsWavepacket { .. } => {
                if theta.values[1] <= 0.0 {
                    return Err(SmsError::config("nls packet width must be positive"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Scalar-generic evaluation of u_hat(x, theta).
    pub fn eval_generic<S: Scalar>(&self, theta: &[S], x: &[S]) -> S {
        match self {
            AnsatzFamily::GaussianMixture { dim, terms } => {
                let k = dim + 2;
                let mut acc: Option<S> = None;
                for i in 0..*terms {
                    let blk = &theta[i * k..(i + 1) * k];
                    let alpha = &blk[0];
                    let sigma = &blk[dim + 1];
                    let mut r2: Option<S> = None;
                    for (a, xk) in x.iter().enumerate() {
                        let d = xk.sub(&blk[1 + a]);
                        let d2 = d.square();
                        r2 = Some(match r2 {
                            Some(s) => s.add(&d2),
                            None => d2,
                        });
                    }
                    let inv_s2 = sigma.square().recip();
                    let term = alpha.mul(&r2.unwrap().mul(&inv_s2).neg().exp());
                    acc = Some(match acc {
                        Some(s) => s.add(&term),
                        None => term,
                    });
                }
                acc.unwrap()
            }
            AnsatzFamily::ShallowNet {
                dim,
                terms,
                activation,
            } => {
                let k = dim + 2;
                let mut acc: Option<S> = None;
                for i in 0..*terms {
                    let blk = &theta[i * k..(i + 1) * k];
                    let mut z = blk[dim + 1].clone(); // bias
                    for (a, xk) in x.iter().enumerate() {
                        z = z.add(&blk[1 + a].mul(xk));
                    }
                    let term = blk[0].mul(&activation.apply(&z));
                    acc = Some(match acc {
                        Some(s) => s.add(&term),
                        None => term,
                    });
                }
                acc.unwrap()
            }
            AnsatzFamily::DeepNet { layers, activation } => {
                let mut cur: Vec<S> = x.to_vec();
                let mut off = 0;
                for w in layers.windows(2) {
                    let (nin, nout) = (w[0], w[1]);
                    let mut next = Vec::with_capacity(nout);
                    for o in 0..nout {
                        let mut z = theta[off + nout * nin + o].clone(); // bias
                        for (idx, item) in cur.iter().enumerate() {
                            z = z.add(&theta[off + o * nin + idx].mul(item));
                        }
                        next.push(activation.apply(&z));
                    }
                    off += nout * nin + nout;
                    cur = next;
                }
                // affine output layer
                let h = layers[layers.len() - 1];
                let mut out = theta[off + h].clone();
                for (idx, item) in cur.iter().enumerate() {
                    out = out.add(&theta[off + idx].mul(item));
                }
                out
            }
            AnsatzFamily::ShapeFem {
                x_left,
                x_right,
                terms,
            } => {
                let xv = x[0].value();
                let r = *terms;
                let node = |i: isize, theta: &[S]| -> S {
                    if i < 0 {
                        theta[0].constant_like(*x_left)
                    } else if i as usize >= r {
                        theta[0].constant_like(*x_right)
                    } else {
                        theta[2 * i as usize + 1].clone()
                    }
                };
                let mut acc = theta[0].constant_like(0.0);
                for i in 0..r as isize {
                    let xl = node(i - 1, theta);
                    let xc = node(i, theta);
                    let xr = node(i + 1, theta);
                    // left-limit convention: x <= x_i picks the rising piece
                    let phi = if xv > xl.value() && xv <= xc.value() {
                        x[0].sub(&xl).mul(&xc.sub(&xl).recip())
                    } else if xv > xc.value() && xv < xr.value() {
                        xr.sub(&x[0]).mul(&xr.sub(&xc).recip())
                    } else {
                        continue;
                    };
                    acc = acc.add(&theta[2 * i as usize].mul(&phi));
                }
                acc
            }
            AnsatzFamily::NlsWavepacket { channel } => {
                let (alpha, sigma, v, phi) = (&theta[0], &theta[1], &theta[2], &theta[3]);
                let x2 = x[0].square();
                let gauss = x2.mul(&sigma.square().recip()).neg().exp();
                let phase = x2.mul(v).mul(&sigma.recip()).add(phi);
                let osc = match channel {
                    NlsChannel::Re => phase.cos(),
                    NlsChannel::Im => phase.sin(),
                };
                alpha.mul(&gauss).mul(&osc)
            }
            AnsatzFamily::KsPeriodicNet { terms, period } => {
                let omega = 2.0 * std::f64::consts::PI / period;
                let mut acc: Option<S> = None;
                for i in 0..*terms {
                    let blk = &theta[4 * i..4 * i + 4];
                    let psi = x[0].scale(omega).add(&blk[3]).sin();
                    let z = blk[1].mul(&psi).add(&blk[2]);
                    let term = blk[0].mul(&z.tanh());
                    acc = Some(match acc {
                        Some(s) => s.add(&term),
                        None => term,
                    });
                }
                acc.unwrap()
            }
        }
    }

    /// Evaluate u_hat at a point.
    pub fn eval(&self, theta: &ParameterVector, x: &SpatialPoint) -> Result<f64> {
        self.check_point(theta, x)?;
        Ok(self.eval_generic(&theta.values, &x.0))
    }

    /// All parameter partials d u_hat / d theta_i at a point.
    pub fn param_gradient(&self, theta: &ParameterVector, x: &SpatialPoint) -> Result<Vec<f64>> {
        self.check_point(theta, x)?;
        match self {
            AnsatzFamily::DeepNet { layers, activation } => {
                Ok(deep_net_gradient(layers, *activation, &theta.values, &x.0))
            }
            AnsatzFamily::KsPeriodicNet { terms, period } => {
                // closed form; the generic dual path is too slow in the
                // collocation inner loop
                let omega = 2.0 * std::f64::consts::PI / period;
                let mut grad = vec![0.0; 4 * terms];
                for i in 0..*terms {
                    let [a, w, b, c] = theta.values[4 * i..4 * i + 4] else {
                        unreachable!()
                    };
                    let z = omega * x.0[0] + c;
                    let (p, q) = (z.sin(), z.cos());
                    let t = (w * p + b).tanh();
                    let f1 = 1.0 - t * t;
                    grad[4 * i] = t;
                    grad[4 * i + 1] = a * f1 * p;
                    grad[4 * i + 2] = a * f1;
                    grad[4 * i + 3] = a * f1 * w * q;
                }
                Ok(grad)
            }
            _ => Ok(self.param_gradient_forward(&theta.values, &x.0)),
        }
    }

    /// Forward-mode fallback: one dual evaluation per parameter. Block families
    /// only perturb the owning block, so unrelated blocks are skipped.
    fn param_gradient_forward(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let n = theta.len();
        let mut grad = vec![0.0; n];
        let xd: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
        if let Some(b) = self.separable_blocks() {
            // evaluate one block at a time: gradient of a sum is blockwise
            let sub = self.single_block();
            for t in 0..b.terms {
                let blk = &theta[t * b.per_term..(t + 1) * b.per_term];
                for i in 0..b.per_term {
                    let td: Vec<Dual<f64>> = blk
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            if i == j {
                                Dual::new(v, 1.0)
                            } else {
                                Dual::constant(v)
                            }
                        })
                        .collect();
                    grad[t * b.per_term + i] = sub.eval_generic(&td, &xd).eps;
                }
            }
        } else {
            for i in 0..n {
                let td: Vec<Dual<f64>> = theta
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        if i == j {
                            Dual::new(v, 1.0)
                        } else {
                            Dual::constant(v)
                        }
                    })
                    .collect();
                grad[i] = self.eval_generic(&td, &xd).eps;
            }
        }
        grad
    }

    /// Block layout for families whose terms do not share parameters
    /// (shape_fem hats share nodes with their neighbors, so it is excluded).
    fn separable_blocks(&self) -> Option<BlockLayout> {
        match self {
            AnsatzFamily::GaussianMixture { .. }
            | AnsatzFamily::ShallowNet { .. }
            | AnsatzFamily::KsPeriodicNet { .. } => self.block_layout(),
            _ => None,
        }
    }

    /// A one-term copy of a block family (used to localize gradient work).
    fn single_block(&self) -> AnsatzFamily {
        match self {
            AnsatzFamily::GaussianMixture { dim, .. } => AnsatzFamily::GaussianMixture {
                dim: *dim,
                terms: 1,
            },
            AnsatzFamily::ShallowNet {
                dim, activation, ..
            } => AnsatzFamily::ShallowNet {
                dim: *dim,
                terms: 1,
                activation: *activation,
            },
            AnsatzFamily::KsPeriodicNet { period, .. } => AnsatzFamily::KsPeriodicNet {
                terms: 1,
                period: *period,
            },
            other => other.clone(),
        }
    }

    /// Spatial-derivative jet of u_hat at a point, exact through the
    /// composition graph (no finite differencing).
    pub fn eval_jet(&self, theta: &ParameterVector, x: &SpatialPoint, max_order: usize) -> Result<Jet> {
        self.check_point(theta, x)?;
        if max_order > self.max_jet_order() {
            return Err(SmsError::capability(format!(
                "family supports jets up to order {}, requested {}",
                self.max_jet_order(),
                max_order
            )));
        }
        if let AnsatzFamily::KsPeriodicNet { terms, period } = self {
            return Ok(ks_net_jet(*terms, *period, &theta.values, x.0[0], max_order));
        }
        let d = self.dim();
        let tx: Vec<Taylor> = x
            .0
            .iter()
            .enumerate()
            .map(|(a, &v)| Taylor::variable(d, max_order, v, a))
            .collect();
        let tt: Vec<Taylor> = theta
            .values
            .iter()
            .map(|&v| Taylor::constant(d, max_order, v))
            .collect();
        Ok(Jet::from_taylor(&self.eval_generic(&tt, &tx)))
    }

    /// Spatial jets of every parameter partial (dual-over-Taylor), used by the
    /// vorticity assembly and quadrature constraint gradients.
    pub fn param_jets(
        &self,
        theta: &ParameterVector,
        x: &SpatialPoint,
        max_order: usize,
    ) -> Result<Vec<Jet>> {
        self.check_point(theta, x)?;
        if max_order > self.max_jet_order() {
            return Err(SmsError::capability("jet order above family capability"));
        }
        let d = self.dim();
        let n = theta.len();
        let xd: Vec<Dual<Taylor>> = x
            .0
            .iter()
            .enumerate()
            .map(|(a, &v)| Dual::constant(Taylor::variable(d, max_order, v, a)))
            .collect();
        let mut out = Vec::with_capacity(n);
        if let Some(b) = self.separable_blocks() {
            let sub = self.single_block();
            for t in 0..b.terms {
                let blk = &theta.values[t * b.per_term..(t + 1) * b.per_term];
                for i in 0..b.per_term {
                    let td: Vec<Dual<Taylor>> = blk
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let c = Taylor::constant(d, max_order, v);
                            if i == j {
                                Dual::seeded(c)
                            } else {
                                Dual::constant(c)
                            }
                        })
                        .collect();
                    out.push(Jet::from_taylor(&sub.eval_generic(&td, &xd).eps));
                }
            }
        } else {
            for i in 0..n {
                let td: Vec<Dual<Taylor>> = theta
                    .values
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let c = Taylor::constant(d, max_order, v);
                        if i == j {
                            Dual::seeded(c)
                        } else {
                            Dual::constant(c)
                        }
                    })
                    .collect();
                out.push(Jet::from_taylor(&self.eval_generic(&td, &xd).eps));
            }
        }
        Ok(out)
    }

    fn check_point(&self, theta: &ParameterVector, x: &SpatialPoint) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(SmsError::config(format!(
                "spatial point has dimension {}, family expects {}",
                x.dim(),
                self.dim()
            )));
        }
        self.validate(theta)
    }

    /// Linear-independence check of the parameter partials sampled at probes
    /// (the numerical stand-in for the Wronskian test).
    pub fn wronskian_check(
        &self,
        theta: &ParameterVector,
        probes: &[SpatialPoint],
        tol: f64,
    ) -> Result<IndependenceReport> {
        let n = self.param_len();
        if probes.len() < n {
            return Err(SmsError::config(format!(
                "need at least {n} probe points, got {}",
                probes.len()
            )));
        }
        let mut m = DMatrix::zeros(probes.len(), n);
        for (r, p) in probes.iter().enumerate() {
            let g = self.param_gradient(theta, p)?;
            for (c, v) in g.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        let svd = m.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let smax = sv.first().copied().unwrap_or(0.0);
        let cutoff = tol * smax.max(f64::MIN_POSITIVE);
        let rank = sv.iter().filter(|&&s| s > cutoff).count();
        Ok(IndependenceReport {
            rank,
            smallest_singular_value: sv.last().copied().unwrap_or(0.0),
            largest_singular_value: smax,
            full_rank: rank == n,
            tolerance: tol,
        })
    }
}

/// Result of [`AnsatzFamily::wronskian_check`].
#[derive(Clone, Debug)]
pub struct IndependenceReport {
    pub rank: usize,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
    pub full_rank: bool,
    pub tolerance: f64,
}

/// Reverse accumulation over the layer graph: one forward pass storing
/// activations, one backward pass producing all parameter partials.
/// Spatial jet of sum_i a_i tanh(w_i sin(omega x + c_i) + b_i) through order
/// four by the chain rule; matches the Taylor path but avoids its allocation
/// cost in the collocation inner loop.
fn ks_net_jet(terms: usize, period: f64, theta: &[f64], x: f64, max_order: usize) -> Jet {
    let omega = 2.0 * std::f64::consts::PI / period;
    let mut out = vec![0.0; max_order + 1];
    for i in 0..terms {
        let [a, w, b, c] = theta[4 * i..4 * i + 4] else {
            unreachable!()
        };
        let z = omega * x + c;
        let (p, q) = (z.sin(), z.cos());
        // inner derivatives s^(k) and tanh derivatives f^(k) at s
        let s1 = w * omega * q;
        let s2 = -w * omega * omega * p;
        let s3 = -w * omega * omega * omega * q;
        let s4 = w * omega * omega * omega * omega * p;
        let t = (w * p + b).tanh();
        let f1 = 1.0 - t * t;
        let f2 = -2.0 * t * f1;
        let f3 = -2.0 * (f1 * f1 + t * f2);
        let f4 = -6.0 * f1 * f2 - 2.0 * t * f3;
        let derivs = [
            t,
            f1 * s1,
            f2 * s1 * s1 + f1 * s2,
            f3 * s1 * s1 * s1 + 3.0 * f2 * s1 * s2 + f1 * s3,
            f4 * s1 * s1 * s1 * s1
                + 6.0 * f3 * s1 * s1 * s2
                + f2 * (3.0 * s2 * s2 + 4.0 * s1 * s3)
                + f1 * s4,
        ];
        for (acc, d) in out.iter_mut().zip(derivs) {
            *acc += a * d;
        }
    }
    Jet::from_derivatives_1d(out)
}

fn deep_net_gradient(layers: &[usize], activation: Activation, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()]; // post-activation outputs per layer
    let mut pre: Vec<Vec<f64>> = Vec::new(); // pre-activation values
    let mut off = 0;
    let mut offsets = Vec::new();
    for w in layers.windows(2) {
        let (nin, nout) = (w[0], w[1]);
        offsets.push(off);
        let cur = acts.last().unwrap();
        let mut z = vec![0.0; nout];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = theta[off + nout * nin + o];
            for (i, &ci) in cur.iter().enumerate() {
                *zo += theta[off + o * nin + i] * ci;
            }
        }
        let a: Vec<f64> = z.iter().map(|&v| act_val(activation, v)).collect();
        pre.push(z);
        acts.push(a);
        off += nout * nin + nout;
    }
    let out_off = off;
    let h = layers[layers.len() - 1];
    let mut grad = vec![0.0; theta.len()];
    let last = acts.last().unwrap();
    // output layer: u = sum w_i a_i + b
    for i in 0..h {
        grad[out_off + i] = last[i];
    }
    grad[out_off + h] = 1.0;
    // adjoint of the last hidden activations
    let mut bar: Vec<f64> = (0..h).map(|i| theta[out_off + i]).collect();
    for l in (0..layers.len() - 1).rev() {
        let (nin, nout) = (layers[l], layers[l + 1]);
        let off = offsets[l];
        let inp = &acts[l];
        let z = &pre[l];
        // through the activation
        let dz: Vec<f64> = bar
            .iter()
            .zip(z)
            .map(|(&b, &zv)| b * act_deriv(activation, zv))
            .collect();
        for o in 0..nout {
            for i in 0..nin {
                grad[off + o * nin + i] = dz[o] * inp[i];
            }
            grad[off + nout * nin + o] = dz[o];
        }
        if l > 0 {
            let mut prev = vec![0.0; nin];
            for (i, item) in prev.iter_mut().enumerate() {
                for (o, dzo) in dz.iter().enumerate() {
                    *item += dzo * theta[off + o * nin + i];
                }
            }
            bar = prev;
        }
    }
    grad
}

fn act_val(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

fn act_deriv(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        Activation::Sigmoid => {
            let s = 1.0 / (1.0 + (-z).exp());
            s * (1.0 - s)
        }
    }
}

/// Convenience: evaluate the jet partial table dimensions for a family/point.
pub fn jet_table(dim: usize, order: usize) -> Arc<IndexTable> {
    index_table(dim, order)
}
