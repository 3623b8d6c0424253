//! Boundary-condition machinery: the periodic sine coordinate map, a
//! domain-doubling construction that pins homogeneous Dirichlet values, and
//! validity checks for user-supplied embedding fields.

use std::path::Path;

use crate::ansatz::{AnsatzFamily, ParameterVector, SpatialPoint};
use crate::error::{Result, SmsError};
use crate::jet::Scalar;

/// sin(2 pi x / L + c). Generic over the scalar type so spatial jets
/// propagate through the map.
pub fn periodic_embed<S: Scalar>(x: &S, period: f64, shift: f64) -> S {
    x.scale(2.0 * std::f64::consts::PI / period).add_scalar(shift).sin()
}

/// Odd periodic extension: U(psi(x)) - U(psi(-x)) with psi(x) = sin(pi x / L
/// + c). The difference vanishes at x = 0 and x = L for any inner function,
/// which pins homogeneous Dirichlet values on [0, L].
///
/// Block-structured inner families take one shift per term; other families
/// share a single shift. `shifts` length must match.
pub fn doubled_dirichlet_eval(
    inner: &AnsatzFamily,
    theta: &ParameterVector,
    shifts: &[f64],
    x: f64,
    length: f64,
) -> Result<f64> {
    if length <= 0.0 {
        return Err(SmsError::config("doubling length must be positive"));
    }
    if inner.dim() != 1 {
        return Err(SmsError::capability("domain doubling is one-dimensional"));
    }
    let n_shifts = inner.block_layout().map_or(1, |b| b.terms);
    if shifts.len() != n_shifts {
        return Err(SmsError::config(format!(
            "expected {n_shifts} shifts, got {}",
            shifts.len()
        )));
    }
    let w = std::f64::consts::PI / length;
    match inner.block_layout() {
        Some(layout) => {
            let sub = blockwise_single(inner);
            let mut total = 0.0;
            for t in 0..layout.terms {
                let blk =
                    theta.values[t * layout.per_term..(t + 1) * layout.per_term].to_vec();
                let sub_theta = ParameterVector::new(blk, sub.block_layout())?;
                let c = shifts[t];
                let plus = sub.eval(&sub_theta, &SpatialPoint(vec![(w * x + c).sin()]))?;
                let minus = sub.eval(&sub_theta, &SpatialPoint(vec![(-w * x + c).sin()]))?;
                total += plus - minus;
            }
            Ok(total)
        }
        None => {
            let c = shifts[0];
            let plus = inner.eval(theta, &SpatialPoint(vec![(w * x + c).sin()]))?;
            let minus = inner.eval(theta, &SpatialPoint(vec![(-w * x + c).sin()]))?;
            Ok(plus - minus)
        }
    }
}

fn blockwise_single(inner: &AnsatzFamily) -> AnsatzFamily {
    match inner {
        AnsatzFamily::GaussianMixture { dim, .. } => AnsatzFamily::GaussianMixture {
            dim: *dim,
            terms: 1,
        },
        AnsatzFamily::ShallowNet { dim, activation, .. } => AnsatzFamily::ShallowNet {
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

/// A vector-valued embedding field with gradients, the interface the
/// boundary-condition checks run against.
pub trait PsiField {
    fn dim(&self) -> usize;
    fn embedding_dim(&self) -> usize;
    fn eval(&self, x: &SpatialPoint) -> Result<Vec<f64>>;
    /// gradient[i][k] = d psi_i / d x_k.
    fn gradient(&self, x: &SpatialPoint) -> Result<Vec<Vec<f64>>>;
}

/// Analytic embedding given by closures.
pub struct FnPsi<F, G> {
    pub dim: usize,
    pub embedding_dim: usize,
    pub f: F,
    pub g: G,
}

impl<F, G> PsiField for FnPsi<F, G>
where
    F: Fn(&SpatialPoint) -> Vec<f64>,
    G: Fn(&SpatialPoint) -> Vec<Vec<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    fn eval(&self, x: &SpatialPoint) -> Result<Vec<f64>> {
        Ok((self.f)(x))
    }
    fn gradient(&self, x: &SpatialPoint) -> Result<Vec<Vec<f64>>> {
        Ok((self.g)(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug)]
pub struct BoundarySample {
    pub point: SpatialPoint,
    /// Outward unit normal, required for Neumann checks.
    pub normal: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct EmbeddingReport {
    pub max_boundary_violation: f64,
    pub passes: bool,
    /// Standard deviation of each embedding component over interior samples.
    pub variability: Vec<f64>,
    /// All components (numerically) constant inside the domain: the embedding
    /// satisfies the boundary conditions vacuously and carries no information.
    pub trivial: bool,
}

const BOUNDARY_TOL: f64 = 1e-10;

/// Evaluates the boundary condition at every sample and an
/// interior-variability score flagging constant embeddings.
pub fn check_embedding_conditions(
    psi: &dyn PsiField,
    boundary: &[BoundarySample],
    bc: BcKind,
    interior: &[SpatialPoint],
) -> Result<EmbeddingReport> {
    if boundary.is_empty() {
        return Err(SmsError::config("no boundary samples supplied"));
    }
    let de = psi.embedding_dim();
    let mut max_violation = 0.0_f64;
    for s in boundary {
        match bc {
            BcKind::Dirichlet => {
                for v in psi.eval(&s.point)? {
                    max_violation = max_violation.max(v.abs());
                }
            }
            BcKind::Neumann => {
                let n = s.normal.as_ref().ok_or_else(|| {
                    SmsError::config("boundary sample lacks a normal for the flux check")
                })?;
                for row in psi.gradient(&s.point)? {
                    let flux: f64 = row.iter().zip(n).map(|(a, b)| a * b).sum();
                    max_violation = max_violation.max(flux.abs());
                }
            }
        }
    }

    let mut variability = vec![0.0; de];
    if !interior.is_empty() {
        let vals: Vec<Vec<f64>> = interior
            .iter()
            .map(|x| psi.eval(x))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..de {
            let mean: f64 = vals.iter().map(|v| v[i]).sum::<f64>() / vals.len() as f64;
            let var: f64 = vals
                .iter()
                .map(|v| (v[i] - mean) * (v[i] - mean))
                .sum::<f64>()
                / vals.len() as f64;
            variability[i] = var.sqrt();
        }
    }
    let trivial = variability.iter().all(|&s| s <= 1e-12);
    Ok(EmbeddingReport {
        max_boundary_violation: max_violation,
        passes: max_violation <= BOUNDARY_TOL,
        variability,
        trivial,
    })
}

/// Tabulated embedding on a tensor grid with piecewise multilinear
/// interpolation. File format: an optional `# ...` comment block, then a
/// header line `d d_e has_gradients`, then one whitespace-separated row per
/// grid point: d coordinates, d_e values, and d_e*d gradient entries when
/// `has_gradients` is 1. Rows may come in any order but must cover the full
/// tensor grid spanned by the distinct per-axis coordinates.
#[derive(Clone, Debug)]
pub struct CustomPsi {
    axes: Vec<Vec<f64>>,
    /// values[flat_index][component]
    values: Vec<Vec<f64>>,
    /// gradients[flat_index][component][axis], empty when absent
    gradients: Vec<Vec<Vec<f64>>>,
    embedding_dim: usize,
}

impl CustomPsi {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SmsError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| SmsError::input("empty embedding table"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| SmsError::input("bad header")))
            .collect::<Result<Vec<_>>>()?;
        let [d, de, has_grad] = head[..] else {
            return Err(SmsError::input(
                "header must be: dim embedding_dim has_gradients",
            ));
        };
        if d == 0 || de == 0 || has_grad > 1 {
            return Err(SmsError::input("invalid header values"));
        }
        let row_len = d + de + has_grad * de * d;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| SmsError::input(format!("bad number '{t}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != row_len {
                return Err(SmsError::input(format!(
                    "row has {} entries, expected {row_len}",
                    vals.len()
                )));
            }
            rows.push(vals);
        }
        // distinct sorted coordinates per axis define the grid
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
        for k in 0..d {
            let mut coords: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
            coords.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            if coords.len() < 2 {
                return Err(SmsError::input("each axis needs at least two samples"));
            }
            axes.push(coords);
        }
        let total: usize = axes.iter().map(|a| a.len()).product();
        if rows.len() != total {
            return Err(SmsError::input(format!(
                "{} rows do not cover the {total}-point tensor grid",
                rows.len()
            )));
        }
        let mut values = vec![Vec::new(); total];
        let mut gradients = vec![Vec::new(); total];
        for r in &rows {
            let mut flat = 0;
            for k in 0..d {
                let pos = axes[k]
                    .iter()
                    .position(|&c| (c - r[k]).abs() < 1e-12)
                    .ok_or_else(|| SmsError::input("row coordinate off the grid"))?;
                flat = flat * axes[k].len() + pos;
            }
            if !values[flat].is_empty() {
                return Err(SmsError::input("duplicate grid point"));
            }
            values[flat] = r[d..d + de].to_vec();
            if has_grad == 1 {
                gradients[flat] = (0..de)
                    .map(|i| r[d + de + i * d..d + de + (i + 1) * d].to_vec())
                    .collect();
            }
        }
        Ok(CustomPsi {
            axes,
            values,
            gradients: if has_grad == 1 { gradients } else { Vec::new() },
            embedding_dim: de,
        })
    }

    fn cell(&self, x: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut lo = Vec::with_capacity(self.axes.len());
        let mut frac = Vec::with_capacity(self.axes.len());
        for (k, axis) in self.axes.iter().enumerate() {
            let v = x[k];
            if v < axis[0] - 1e-12 || v > axis[axis.len() - 1] + 1e-12 {
                return Err(SmsError::input("point outside the tabulated domain"));
            }
            let i = match axis.partition_point(|&c| c <= v) {
                0 => 0,
                p => (p - 1).min(axis.len() - 2),
            };
            lo.push(i);
            frac.push(((v - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0));
        }
        Ok((lo, frac))
    }

    fn interpolate(&self, x: &[f64], table: &dyn Fn(usize) -> Vec<f64>) -> Result<Vec<f64>> {
        let (lo, frac) = self.cell(x)?;
        let d = self.axes.len();
        let mut out: Option<Vec<f64>> = None;
        for corner in 0..(1usize << d) {
            let mut flat = 0;
            let mut w = 1.0;
            for k in 0..d {
                let up = (corner >> k) & 1;
                flat = flat * self.axes[k].len() + lo[k] + up;
                w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            let vals = table(flat);
            match &mut out {
                None => out = Some(vals.iter().map(|v| v * w).collect()),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&vals) {
                        *a += v * w;
                    }
                }
            }
        }
        Ok(out.expect("at least one corner"))
    }
}

impl PsiField for CustomPsi {
    fn dim(&self) -> usize {
        self.axes.len()
    }
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    fn eval(&self, x: &SpatialPoint) -> Result<Vec<f64>> {
        self.interpolate(&x.0, &|flat| self.values[flat].clone())
    }
    fn gradient(&self, x: &SpatialPoint) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let de = self.embedding_dim;
        if !self.gradients.is_empty() {
            let flatg = self.interpolate(&x.0, &|flat| {
                self.gradients[flat].iter().flatten().copied().collect()
            })?;
            return Ok((0..de)
                .map(|i| flatg[i * d..(i + 1) * d].to_vec())
                .collect());
        }
        // no tabulated gradients: central differences on the interpolant,
        // one-sided at the domain edges
        let mut out = vec![vec![0.0; d]; de];
        for k in 0..d {
            let axis = &self.axes[k];
            let h = (axis[axis.len() - 1] - axis[0]) * 1e-6;
            let mut xp = x.0.clone();
            let mut xm = x.0.clone();
            xp[k] = (xp[k] + h).min(axis[axis.len() - 1]);
            xm[k] = (xm[k] - h).max(axis[0]);
            let vp = self.eval(&SpatialPoint(xp.clone()))?;
            let vm = self.eval(&SpatialPoint(xm.clone()))?;
            let dx = xp[k] - xm[k];
            for i in 0..de {
                out[i][k] = (vp[i] - vm[i]) / dx;
            }
        }
        Ok(out)
    }
}
