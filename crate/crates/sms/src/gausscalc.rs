//! Exact polynomial-times-Gaussian calculus.
//!
//! Terms of the form p(x) * exp(-a |x - mu|^2) are closed under products,
//! differentiation and multiplication by polynomials, and integrate in closed
//! form over R^d through Gaussian moments. The Galerkin block assembly for
//! Gaussian mixtures and the closed-form conserved quantities are built on
//! this algebra; the quadrature assembler serves as its independent oracle.

use std::collections::BTreeMap;

/// Sparse multivariate polynomial keyed by exponent multi-indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub dim: usize,
    pub terms: BTreeMap<Vec<u8>, f64>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Poly::zero(dim);
        if c != 0.0 {
            p.terms.insert(vec![0; dim], c);
        }
        p
    }

    pub fn var(dim: usize, axis: usize) -> Self {
        let mut e = vec![0u8; dim];
        e[axis] = 1;
        let mut p = Poly::zero(dim);
        p.terms.insert(e, 1.0);
        p
    }

    pub fn add_term(&mut self, exps: Vec<u8>, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            // keep the map sparse
        }
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (e, &c) in &o.terms {
            r.add_term(e.clone(), c);
        }
        r
    }

    pub fn scale(&self, k: f64) -> Poly {
        let mut r = self.clone();
        for c in r.terms.values_mut() {
            *c *= k;
        }
        r
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::zero(self.dim);
        for (e1, &c1) in &self.terms {
            for (e2, &c2) in &o.terms {
                let e: Vec<u8> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                r.add_term(e, c1 * c2);
            }
        }
        r
    }

    pub fn deriv(&self, axis: usize) -> Poly {
        let mut r = Poly::zero(self.dim);
        for (e, &c) in &self.terms {
            if e[axis] > 0 {
                let mut en = e.clone();
                en[axis] -= 1;
                r.add_term(en, c * e[axis] as f64);
            }
        }
        r
    }

    /// Substitute x_k -> x_k + c_k (re-centering).
    pub fn shift(&self, center: &[f64]) -> Poly {
        let mut r = Poly::zero(self.dim);
        for (e, &c) in &self.terms {
            // expand prod_k (x_k + c_k)^{e_k} via per-axis binomials
            let mut acc: Vec<(Vec<u8>, f64)> = vec![(vec![0u8; self.dim], c)];
            for (k, &ek) in e.iter().enumerate() {
                let mut next = Vec::with_capacity(acc.len() * (ek as usize + 1));
                for (base, coeff) in &acc {
                    let mut binom = 1.0;
                    for j in 0..=ek {
                        // C(ek, j) * c_k^(ek - j) * x_k^j
                        let mut nb = base.clone();
                        nb[k] += j;
                        next.push((nb, coeff * binom * center[k].powi((ek - j) as i32)));
                        binom *= (ek - j) as f64 / (j + 1) as f64;
                    }
                }
                acc = next;
            }
            for (e, c) in acc {
                r.add_term(e, c);
            }
        }
        r
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, &c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&k, &xv)| xv.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&v| v as usize).sum())
            .max()
            .unwrap_or(0)
    }
}

/// p(x) * exp(-a |x - mu|^2) with a > 0.
#[derive(Clone, Debug)]
pub struct GaussTerm {
    pub poly: Poly,
    pub a: f64,
    pub mu: Vec<f64>,
}

impl GaussTerm {
    pub fn new(poly: Poly, a: f64, mu: Vec<f64>) -> Self {
        debug_assert!(a > 0.0);
        GaussTerm { poly, a, mu }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn scale(&self, k: f64) -> GaussTerm {
        GaussTerm {
            poly: self.poly.scale(k),
            a: self.a,
            mu: self.mu.clone(),
        }
    }

    pub fn mul_poly(&self, p: &Poly) -> GaussTerm {
        GaussTerm {
            poly: self.poly.mul(p),
            a: self.a,
            mu: self.mu.clone(),
        }
    }

    /// Product of two terms: exponents combine into a single completed square.
    pub fn product(&self, o: &GaussTerm) -> GaussTerm {
        let a = self.a + o.a;
        let mu: Vec<f64> = self
            .mu
            .iter()
            .zip(&o.mu)
            .map(|(&m1, &m2)| (self.a * m1 + o.a * m2) / a)
            .collect();
        let norm2 = |v: &[f64]| v.iter().map(|&t| t * t).sum::<f64>();
        let log_factor = a * norm2(&mu) - self.a * norm2(&self.mu) - o.a * norm2(&o.mu);
        let factor = log_factor.exp();
        GaussTerm {
            poly: self.poly.mul(&o.poly).scale(factor),
            a,
            mu,
        }
    }

    pub fn deriv(&self, axis: usize) -> GaussTerm {
        // (p' - 2a (x_k - mu_k) p) e^{...}
        let shift = Poly::var(self.dim(), axis).add(&Poly::constant(self.dim(), -self.mu[axis]));
        let poly = self
            .poly
            .deriv(axis)
            .add(&shift.mul(&self.poly).scale(-2.0 * self.a));
        GaussTerm {
            poly,
            a: self.a,
            mu: self.mu.clone(),
        }
    }

    pub fn laplacian(&self) -> GaussTerm {
        let mut acc = Poly::zero(self.dim());
        for k in 0..self.dim() {
            acc = acc.add(&self.deriv(k).deriv(k).poly);
        }
        GaussTerm {
            poly: acc,
            a: self.a,
            mu: self.mu.clone(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.mu)
            .map(|(&xv, &m)| (xv - m) * (xv - m))
            .sum();
        self.poly.eval(x) * (-self.a * r2).exp()
    }

    /// Integral of the product of two terms, fused so no intermediate
    /// polynomial is built; the assembly inner loop calls this O(n^2) times.
    pub fn product_integral(&self, o: &GaussTerm) -> f64 {
        let d = self.dim();
        let a = self.a + o.a;
        let mu: Vec<f64> = self
            .mu
            .iter()
            .zip(&o.mu)
            .map(|(&m1, &m2)| (self.a * m1 + o.a * m2) / a)
            .collect();
        let norm2 = |v: &[f64]| v.iter().map(|&t| t * t).sum::<f64>();
        let factor = (a * norm2(&mu) - self.a * norm2(&self.mu) - o.a * norm2(&o.mu)).exp();
        // B[k][e] = integral of x^e exp(-a (x - mu_k)^2) dx, by binomial
        // expansion around mu_k (odd central moments vanish)
        let emax = self.poly.degree() + o.poly.degree();
        let mut central = vec![0.0; emax + 1];
        for (j, c) in central.iter_mut().enumerate() {
            *c = gauss_moment(j, a);
        }
        let b: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                (0..=emax)
                    .map(|e| {
                        let mut binom = 1.0;
                        let mut total = 0.0;
                        for j in 0..=e {
                            total += binom * mu[k].powi((e - j) as i32) * central[j];
                            binom *= (e - j) as f64 / (j + 1) as f64;
                        }
                        total
                    })
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        for (e1, &c1) in &self.poly.terms {
            for (e2, &c2) in &o.poly.terms {
                let mut v = c1 * c2;
                for k in 0..d {
                    v *= b[k][(e1[k] + e2[k]) as usize];
                    if v == 0.0 {
                        break;
                    }
                }
                total += v;
            }
        }
        total * factor
    }

    /// Exact integral over R^d via centered Gaussian moments.
    pub fn integral(&self) -> f64 {
        let centered = self.poly.shift(&self.mu);
        let mut total = 0.0;
        for (e, &c) in &centered.terms {
            let mut m = c;
            for &ek in e {
                m *= gauss_moment(ek as usize, self.a);
                if m == 0.0 {
                    break;
                }
            }
            total += m;
        }
        total
    }
}

/// 1D moment: integral of y^e exp(-a y^2) dy over R.
fn gauss_moment(e: usize, a: f64) -> f64 {
    if e % 2 == 1 {
        return 0.0;
    }
    let mut m = (std::f64::consts::PI / a).sqrt();
    let mut k = 2;
    while k <= e {
        // double factorial recursion: m_{k} = (k-1)/(2a) m_{k-2}
        m *= (k - 1) as f64 / (2.0 * a);
        k += 2;
    }
    m
}

/// One Gaussian term of a mixture, from its parameter block [alpha, mu.., sigma].
pub fn mixture_term(block: &[f64], dim: usize) -> GaussTerm {
    let alpha = block[0];
    let sigma = block[dim + 1];
    GaussTerm::new(
        Poly::constant(dim, alpha),
        1.0 / (sigma * sigma),
        block[1..1 + dim].to_vec(),
    )
}

/// Parameter partial of one Gaussian term; `comp` indexes within the block.
pub fn mixture_partial(block: &[f64], dim: usize, comp: usize) -> GaussTerm {
    let alpha = block[0];
    let mu = block[1..1 + dim].to_vec();
    let sigma = block[dim + 1];
    let a = 1.0 / (sigma * sigma);
    if comp == 0 {
        GaussTerm::new(Poly::constant(dim, 1.0), a, mu)
    } else if comp <= dim {
        let axis = comp - 1;
        let shift = Poly::var(dim, axis).add(&Poly::constant(dim, -mu[axis]));
        GaussTerm::new(shift.scale(2.0 * alpha * a), a, mu)
    } else {
        // d/d sigma: 2 alpha |x-mu|^2 / sigma^3
        let mut r2 = Poly::zero(dim);
        for k in 0..dim {
            let s = Poly::var(dim, k).add(&Poly::constant(dim, -mu[k]));
            r2 = r2.add(&s.mul(&s));
        }
        GaussTerm::new(r2.scale(2.0 * alpha / sigma.powi(3)), a, mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_known_values() {
        let a = 1.7;
        let spi = (std::f64::consts::PI / a).sqrt();
        assert!((gauss_moment(0, a) - spi).abs() < 1e-15);
        assert!((gauss_moment(2, a) - spi / (2.0 * a)).abs() < 1e-15);
        assert!((gauss_moment(4, a) - spi * 3.0 / (4.0 * a * a)).abs() < 1e-15);
        assert_eq!(gauss_moment(3, a), 0.0);
    }

    #[test]
    fn product_and_integral_match_quadrature() {
        use crate::quadrature::QuadratureRule;
        let g1 = GaussTerm::new(Poly::constant(1, 1.3), 0.7, vec![0.4]);
        let p = Poly::var(1, 0).mul(&Poly::var(1, 0)).scale(2.0);
        let g2 = GaussTerm::new(p, 1.1, vec![-0.6]);
        let prod = g1.product(&g2);
        let exact = prod.integral();
        let q = QuadratureRule::gauss_legendre_truncated(1, 140, 15.0).unwrap();
        let quad = q.integrate(|pt| g1.eval(&pt.0) * g2.eval(&pt.0));
        assert!(
            (exact - quad).abs() <= 1e-10 * exact.abs().max(1.0),
            "{exact} vs {quad}"
        );
    }

    #[test]
    fn fused_product_integral_matches_compositional_path() {
        let mut p1 = Poly::zero(2);
        p1.add_term(vec![2, 1], 0.7);
        p1.add_term(vec![0, 3], -1.2);
        p1.add_term(vec![0, 0], 0.4);
        let g1 = GaussTerm::new(p1, 0.8, vec![0.3, -0.9]);
        let mut p2 = Poly::zero(2);
        p2.add_term(vec![1, 2], 1.5);
        p2.add_term(vec![4, 0], 0.2);
        let g2 = GaussTerm::new(p2, 1.4, vec![-0.5, 0.6]);
        let slow = g1.product(&g2).integral();
        let fast = g1.product_integral(&g2);
        assert!((slow - fast).abs() <= 1e-13 * slow.abs().max(1.0), "{slow} vs {fast}");
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p = Poly::var(2, 0).add(&Poly::constant(2, 0.3));
        let g = GaussTerm::new(p, 0.9, vec![0.2, -0.1]);
        let d = g.deriv(1);
        let x = [0.35, 0.7];
        let h = 1e-6;
        let fd = (g.eval(&[x[0], x[1] + h]) - g.eval(&[x[0], x[1] - h])) / (2.0 * h);
        assert!((d.eval(&x) - fd).abs() < 1e-8);
    }

    #[test]
    fn mass_integral_2d_gaussian() {
        // integral of alpha exp(-|x-mu|^2/sigma^2) over R^2 = alpha pi sigma^2
        let block = [2.5, 0.3, -1.2, 1.7];
        let g = mixture_term(&block, 2);
        let expect = 2.5 * std::f64::consts::PI * 1.7 * 1.7;
        assert!((g.integral() - expect).abs() < 1e-12 * expect);
    }
}
