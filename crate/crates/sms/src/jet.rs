//! Truncated Taylor (jet) arithmetic and forward-mode duals.
//!
//! Spatial derivatives of the ansatz families are propagated through their
//! composition graphs as truncated multivariate Taylor expansions, so values
//! like u_xxxx come out exact to rounding rather than from finite differences.
//! Parameter tangents are propagated with [`Dual`] numbers layered over any
//! scalar, which also yields spatial jets of parameter partials when needed.

use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Scalar abstraction over which the ansatz families are evaluated.
///
/// Implemented by `f64` (plain evaluation), [`Taylor`] (spatial jets) and
/// [`Dual<T>`] (one parameter tangent over any scalar).
pub trait Scalar: Clone + std::fmt::Debug {
    /// Primal (zeroth-order) value.
    fn value(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, k: f64) -> Self;
    fn add_scalar(&self, k: f64) -> Self;
    fn recip(&self) -> Self;
    fn exp(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tanh(&self) -> Self;

    /// A constant with the same shape (dim/order/nesting) as `self`.
    fn constant_like(&self, v: f64) -> Self {
        self.scale(0.0).add_scalar(v)
    }
    fn square(&self) -> Self {
        self.mul(self)
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn add_scalar(&self, k: f64) -> Self {
        self + k
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
}

/// Enumeration of multi-indices with total degree <= order, in graded
/// lexicographic order, plus the truncated multiplication table.
#[derive(Debug)]
pub struct IndexTable {
    pub dim: usize,
    pub order: usize,
    /// Multi-index exponents per slot.
    pub exps: Vec<Vec<usize>>,
    /// Lookup from exponents to slot.
    pub pos: HashMap<Vec<usize>, usize>,
    /// (i, j, k) triples with exps[i] + exps[j] = exps[k], degree-truncated.
    pub prod: Vec<(usize, usize, usize)>,
    /// factorial(beta) = prod_k beta_k! per slot.
    pub multifact: Vec<f64>,
}

fn enumerate(dim: usize, order: usize) -> Vec<Vec<usize>> {
    fn exact_degree(
        axis: usize,
        left: usize,
        dim: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if axis == dim - 1 {
            cur[axis] = left;
            out.push(cur.clone());
            return;
        }
        for e in (0..=left).rev() {
            cur[axis] = e;
            exact_degree(axis + 1, left - e, dim, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; dim];
    for total in 0..=order {
        exact_degree(0, total, dim, &mut cur, &mut out);
    }
    out
}

impl IndexTable {
    fn new(dim: usize, order: usize) -> Self {
        assert!(dim >= 1);
        let exps = enumerate(dim, order);
        let mut pos = HashMap::new();
        for (i, e) in exps.iter().enumerate() {
            pos.insert(e.clone(), i);
        }
        let deg: Vec<usize> = exps.iter().map(|e| e.iter().sum()).collect();
        let mut prod = Vec::new();
        for i in 0..exps.len() {
            for j in 0..exps.len() {
                if deg[i] + deg[j] <= order {
                    let sum: Vec<usize> =
                        exps[i].iter().zip(&exps[j]).map(|(a, b)| a + b).collect();
                    prod.push((i, j, pos[&sum]));
                }
            }
        }
        let multifact = exps
            .iter()
            .map(|e| {
                e.iter()
                    .map(|&k| (1..=k).map(|v| v as f64).product::<f64>())
                    .product()
            })
            .collect();
        IndexTable {
            dim,
            order,
            exps,
            pos,
            prod,
            multifact,
        }
    }
}

static TABLES: Lazy<Mutex<HashMap<(usize, usize), Arc<IndexTable>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

pub fn index_table(dim: usize, order: usize) -> Arc<IndexTable> {
    let mut map = TABLES.lock().unwrap();
    map.entry((dim, order))
        .or_insert_with(|| Arc::new(IndexTable::new(dim, order)))
        .clone()
}

/// Truncated multivariate Taylor expansion around a base point.
///
/// Stores Taylor coefficients `c_beta = d^beta f / beta!`; derivative values
/// are recovered by multiplying with `beta!`.
#[derive(Clone, Debug)]
pub struct Taylor {
    pub table: Arc<IndexTable>,
    pub c: Vec<f64>,
}

impl Taylor {
    pub fn constant(dim: usize, order: usize, v: f64) -> Self {
        let table = index_table(dim, order);
        let mut c = vec![0.0; table.exps.len()];
        c[0] = v;
        Taylor { table, c }
    }

    /// Seed for the spatial variable along `axis`: value + (x - x0).
    pub fn variable(dim: usize, order: usize, v: f64, axis: usize) -> Self {
        let mut t = Taylor::constant(dim, order, v);
        if order >= 1 {
            let mut e = vec![0usize; dim];
            e[axis] = 1;
            let idx = t.table.pos[&e];
            t.c[idx] = 1.0;
        }
        t
    }

    /// Derivative value for the given multi-index.
    pub fn deriv(&self, exps: &[usize]) -> f64 {
        let idx = self.table.pos[&exps.to_vec()];
        self.c[idx] * self.table.multifact[idx]
    }

    /// Composition with a univariate outer function given its derivatives
    /// `outer_derivs[k] = f^(k)(u0)` at the inner constant term.
    fn compose(&self, outer_derivs: &[f64]) -> Taylor {
        let order = self.table.order;
        debug_assert!(outer_derivs.len() >= order + 1);
        // p = self with constant term removed; Horner over truncated polynomials.
        let mut p = self.clone();
        p.c[0] = 0.0;
        let mut fact = 1.0;
        let mut coeffs = vec![0.0; order + 1];
        for (k, item) in coeffs.iter_mut().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            *item = outer_derivs[k] / fact;
        }
        let mut r = Taylor::constant(self.table.dim, order, coeffs[order]);
        for k in (0..order).rev() {
            r = r.mul(&p);
            r.c[0] += coeffs[k];
        }
        r
    }
}

impl Scalar for Taylor {
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn add(&self, o: &Self) -> Self {
        let mut r = self.clone();
        for (a, b) in r.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        r
    }
    fn sub(&self, o: &Self) -> Self {
        let mut r = self.clone();
        for (a, b) in r.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        r
    }
    fn mul(&self, o: &Self) -> Self {
        let mut r = Taylor {
            table: self.table.clone(),
            c: vec![0.0; self.c.len()],
        };
        for &(i, j, k) in &self.table.prod {
            r.c[k] += self.c[i] * o.c[j];
        }
        r
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn scale(&self, k: f64) -> Self {
        let mut r = self.clone();
        for a in r.c.iter_mut() {
            *a *= k;
        }
        r
    }
    fn add_scalar(&self, k: f64) -> Self {
        let mut r = self.clone();
        r.c[0] += k;
        r
    }
    fn recip(&self) -> Self {
        // f^(k)(u) = (-1)^k k! / u^(k+1)
        let u = self.c[0];
        let order = self.table.order;
        let mut d = vec![0.0; order + 1];
        let mut sign = 1.0;
        let mut fact = 1.0;
        for (k, item) in d.iter_mut().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            *item = sign * fact / u.powi(k as i32 + 1);
            sign = -sign;
        }
        self.compose(&d)
    }
    fn exp(&self) -> Self {
        let e = self.c[0].exp();
        let d = vec![e; self.table.order + 1];
        self.compose(&d)
    }
    fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let d: Vec<f64> = (0..=self.table.order).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let d: Vec<f64> = (0..=self.table.order).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }
    fn tanh(&self) -> Self {
        let t = self.c[0].tanh();
        // Represent tanh^(k) as a polynomial in t: p_{k+1} = p_k' * (1 - t^2).
        let order = self.table.order;
        let mut d = Vec::with_capacity(order + 1);
        let mut p = vec![0.0, 1.0]; // p_0(t) = t
        d.push(horner(&p, t));
        for _ in 0..order {
            // dp = p'
            let dp: Vec<f64> = (1..p.len()).map(|i| p[i] * i as f64).collect();
            // p_next = dp * (1 - t^2)
            let mut pn = vec![0.0; dp.len() + 2];
            for (i, &a) in dp.iter().enumerate() {
                pn[i] += a;
                pn[i + 2] -= a;
            }
            d.push(horner(&pn, t));
            p = pn;
        }
        self.compose(&d)
    }
}

fn horner(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Forward-mode dual number over any scalar: primal + one tangent direction.
#[derive(Clone, Debug)]
pub struct Dual<T: Scalar> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }
    pub fn constant(re: T) -> Self {
        let eps = re.constant_like(0.0);
        Dual { re, eps }
    }
    pub fn seeded(re: T) -> Self {
        let eps = re.constant_like(1.0);
        Dual { re, eps }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn add(&self, o: &Self) -> Self {
        Dual::new(self.re.add(&o.re), self.eps.add(&o.eps))
    }
    fn sub(&self, o: &Self) -> Self {
        Dual::new(self.re.sub(&o.re), self.eps.sub(&o.eps))
    }
    fn mul(&self, o: &Self) -> Self {
        Dual::new(
            self.re.mul(&o.re),
            self.eps.mul(&o.re).add(&self.re.mul(&o.eps)),
        )
    }
    fn neg(&self) -> Self {
        Dual::new(self.re.neg(), self.eps.neg())
    }
    fn scale(&self, k: f64) -> Self {
        Dual::new(self.re.scale(k), self.eps.scale(k))
    }
    fn add_scalar(&self, k: f64) -> Self {
        Dual::new(self.re.add_scalar(k), self.eps.clone())
    }
    fn recip(&self) -> Self {
        let r = self.re.recip();
        let dr = r.mul(&r).neg();
        Dual::new(r, self.eps.mul(&dr))
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        Dual::new(e.clone(), self.eps.mul(&e))
    }
    fn sin(&self) -> Self {
        Dual::new(self.re.sin(), self.eps.mul(&self.re.cos()))
    }
    fn cos(&self) -> Self {
        Dual::new(self.re.cos(), self.eps.mul(&self.re.sin()).neg())
    }
    fn tanh(&self) -> Self {
        let t = self.re.tanh();
        let sech2 = t.mul(&t).neg().add_scalar(1.0);
        Dual::new(t, self.eps.mul(&sech2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd4(f: &dyn Fn(f64) -> f64, x: f64, order: usize, h: f64) -> f64 {
        // central finite differences, recursive
        match order {
            0 => f(x),
            _ => (fd4(f, x + h, order - 1, h) - fd4(f, x - h, order - 1, h)) / (2.0 * h),
        }
    }

    #[test]
    fn taylor_exp_gaussian_derivs() {
        // f(x) = exp(-x^2) at x = 0.7, orders 0..=4
        let x0 = 0.7;
        let x = Taylor::variable(1, 4, x0, 0);
        let f = x.mul(&x).neg().exp();
        let g = |x: f64| (-x * x).exp();
        for k in 0..=4usize {
            let fd = fd4(&g, x0, k, 1e-3);
            let jet = f.deriv(&[k]);
            let tol = 1e-5 * jet.abs().max(1.0);
            assert!(
                (jet - fd).abs() < tol.max(1e-4),
                "order {k}: jet {jet} vs fd {fd}"
            );
        }
    }

    #[test]
    fn taylor_tanh_and_sin() {
        let x0 = 0.3;
        let x = Taylor::variable(1, 4, x0, 0);
        let f = x.scale(2.0).add_scalar(0.1).tanh().mul(&x.sin());
        let g = |x: f64| (2.0 * x + 0.1).tanh() * x.sin();
        for k in 0..=4usize {
            let fd = fd4(&g, x0, k, 1e-3);
            let jet = f.deriv(&[k]);
            assert!(
                (jet - fd).abs() < 1e-3 * jet.abs().max(1.0),
                "order {k}: {jet} vs {fd}"
            );
        }
    }

    #[test]
    fn taylor_2d_mixed_partials() {
        // f(x,y) = exp(-(x^2 + y^2)) * sin(x + 2y)
        let (x0, y0) = (0.4, -0.2);
        let x = Taylor::variable(2, 3, x0, 0);
        let y = Taylor::variable(2, 3, y0, 1);
        let f = x
            .square()
            .add(&y.square())
            .neg()
            .exp()
            .mul(&x.add(&y.scale(2.0)).sin());
        let g = |x: f64, y: f64| (-(x * x + y * y)).exp() * (x + 2.0 * y).sin();
        let h = 1e-4;
        // d^2/dxdy
        let fd = ((g(x0 + h, y0 + h) - g(x0 - h, y0 + h)) - (g(x0 + h, y0 - h) - g(x0 - h, y0 - h)))
            / (4.0 * h * h);
        let jet = f.deriv(&[1, 1]);
        assert!((jet - fd).abs() < 1e-5 * jet.abs().max(1.0));
    }

    #[test]
    fn taylor_recip() {
        let x0 = 1.7;
        let x = Taylor::variable(1, 4, x0, 0);
        let f = x.add_scalar(1.0).recip();
        for k in 0..=4usize {
            let fd = fd4(&|x| 1.0 / (x + 1.0), x0, k, 1e-3);
            let jet = f.deriv(&[k]);
            assert!((jet - fd).abs() < 1e-4 * jet.abs().max(1.0));
        }
    }

    #[test]
    fn dual_over_taylor() {
        // d/da of exp(-a x^2) and its spatial derivative, at a = 1.3, x = 0.5
        let (a0, x0) = (1.3, 0.5);
        let x = Dual::constant(Taylor::variable(1, 2, x0, 0));
        let a = Dual::seeded(Taylor::constant(1, 2, a0));
        let f = a.mul(&x.square()).neg().exp();
        // d/da exp(-a x^2) = -x^2 exp(-a x^2)
        let expect = -x0 * x0 * (-a0 * x0 * x0).exp();
        assert!((f.eps.value() - expect).abs() < 1e-12);
        // d/da d/dx exp(-a x^2) = d/dx (-x^2 e^{-a x^2}) wrt a:
        // analytic: d/da (-2 a x e^{-a x^2}) = (-2x + 2 a x^3) e^{-a x^2}
        let expect_x = (-2.0 * x0 + 2.0 * a0 * x0.powi(3)) * (-a0 * x0 * x0).exp();
        assert!((f.eps.deriv(&[1]) - expect_x).abs() < 1e-12);
    }
}
