//! Truncated multivariate Taylor polynomials ("jets") of arbitrary order.
//!
//! Used where a fixed derivative order is not enough, e.g. nested symmetric
//! products whose evaluation needs one more derivative per nesting level.

use std::collections::HashMap;
use std::sync::Arc;

use super::scalar::{Elementary, Scalar};

/// Monomial bookkeeping shared by all jets of one (variables, order) pair.
#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    order: usize,
    monomials: Vec<Vec<u8>>,
    /// (lhs, rhs, product) index triples with total degree <= order.
    products: Vec<(u32, u32, u32)>,
    /// Per variable: (source, target, factor) for d/dx_var.
    derivative: Vec<Vec<(u32, u32, f64)>>,
}

impl JetSpace {
    pub fn new(nvars: usize, order: usize) -> Arc<Self> {
        let mut monomials: Vec<Vec<u8>> = vec![vec![0; nvars]];
        let mut frontier = monomials.clone();
        for _ in 0..order {
            let mut next: Vec<Vec<u8>> = Vec::new();
            for m in &frontier {
                // Only raise variables at or after the last nonzero one so that
                // each monomial is generated exactly once.
                let last = m.iter().rposition(|&e| e > 0).unwrap_or(0);
                for v in last..nvars {
                    let mut m2 = m.clone();
                    m2[v] += 1;
                    next.push(m2);
                }
            }
            monomials.extend(next.iter().cloned());
            frontier = next;
        }
        let index: HashMap<Vec<u8>, usize> =
            monomials.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let degree: Vec<usize> =
            monomials.iter().map(|m| m.iter().map(|&e| e as usize).sum()).collect();

        let mut products = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                if degree[i] + degree[j] > order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                products.push((i as u32, j as u32, index[&sum] as u32));
            }
        }

        let mut derivative = vec![Vec::new(); nvars];
        for (var, table) in derivative.iter_mut().enumerate() {
            for (src, m) in monomials.iter().enumerate() {
                if m[var] == 0 {
                    continue;
                }
                let mut lowered = m.clone();
                lowered[var] -= 1;
                table.push((src as u32, index[&lowered] as u32, m[var] as f64));
            }
        }

        Arc::new(JetSpace { nvars, order, monomials, products, derivative })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

/// A truncated Taylor expansion about a base point.
///
/// Coefficients are Taylor coefficients (`f_alpha / alpha!`), not raw
/// partial derivatives. A jet without a space is a constant.
#[derive(Clone, Debug)]
pub struct Jet {
    space: Option<Arc<JetSpace>>,
    coeffs: Vec<f64>,
}

impl Jet {
    /// `x_var` expanded about `value`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, value: f64) -> Self {
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = value;
        if space.order() >= 1 {
            let mut m = vec![0u8; space.nvars()];
            m[var] = 1;
            let idx = space.monomials.iter().position(|x| *x == m).expect("degree-1 monomial");
            coeffs[idx] = 1.0;
        }
        Jet { space: Some(space.clone()), coeffs }
    }

    pub fn zero(space: &Arc<JetSpace>) -> Self {
        Jet { space: Some(space.clone()), coeffs: vec![0.0; space.len()] }
    }

    /// Partial derivative in `var`; the top-order coefficients become zero.
    pub fn derivative(&self, var: usize) -> Jet {
        let Some(space) = &self.space else {
            return Jet::constant(0.0);
        };
        let mut out = vec![0.0; space.len()];
        for &(src, dst, factor) in &space.derivative[var] {
            out[dst as usize] += factor * self.coeffs[src as usize];
        }
        Jet { space: Some(space.clone()), coeffs: out }
    }

    fn full(&self, space: &Arc<JetSpace>) -> Vec<f64> {
        match &self.space {
            Some(_) => self.coeffs.clone(),
            None => {
                let mut v = vec![0.0; space.len()];
                v[0] = self.coeffs[0];
                v
            }
        }
    }

    fn common_space(&self, other: &Jet) -> Option<Arc<JetSpace>> {
        self.space.clone().or_else(|| other.space.clone())
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        match self.common_space(other) {
            None => Jet::constant(f(self.coeffs[0], other.coeffs[0])),
            Some(space) => {
                let a = self.full(&space);
                let b = other.full(&space);
                let coeffs = a.iter().zip(&b).map(|(x, y)| f(*x, *y)).collect();
                Jet { space: Some(space), coeffs }
            }
        }
    }
}

impl Scalar for Jet {
    fn constant(c: f64) -> Self {
        Jet { space: None, coeffs: vec![c] }
    }
    fn value(&self) -> f64 {
        self.coeffs[0]
    }
    fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&c| c == 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }
    fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }
    fn mul(&self, o: &Self) -> Self {
        let Some(space) = self.common_space(o) else {
            return Jet::constant(self.coeffs[0] * o.coeffs[0]);
        };
        if self.space.is_none() {
            return o.scale(self.coeffs[0]);
        }
        if o.space.is_none() {
            return self.scale(o.coeffs[0]);
        }
        let mut out = vec![0.0; space.len()];
        for &(i, j, k) in &space.products {
            out[k as usize] += self.coeffs[i as usize] * o.coeffs[j as usize];
        }
        Jet { space: Some(space), coeffs: out }
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn scale(&self, k: f64) -> Self {
        Jet { space: self.space.clone(), coeffs: self.coeffs.iter().map(|c| c * k).collect() }
    }
    fn apply(&self, f: Elementary) -> Self {
        let Some(space) = &self.space else {
            return Jet::constant(self.coeffs[0].apply(f));
        };
        // f(a0 + h) = sum_k f^(k)(a0) / k! h^k, h nilpotent beyond `order`.
        let d = f.derivatives(self.coeffs[0], space.order());
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut out = vec![0.0; space.len()];
        out[0] = d[0];
        let mut power = h.clone();
        let mut factorial = 1.0;
        for (k, dk) in d.iter().enumerate().skip(1) {
            factorial *= k as f64;
            let c = dk / factorial;
            if c != 0.0 {
                for (o, p) in out.iter_mut().zip(&power.coeffs) {
                    *o += c * p;
                }
            }
            if k < space.order() {
                power = power.mul(&h);
            }
        }
        Jet { space: Some(space.clone()), coeffs: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count_matches_binomial() {
        // C(n + m, m)
        assert_eq!(JetSpace::new(2, 3).len(), 10);
        assert_eq!(JetSpace::new(3, 2).len(), 10);
        assert_eq!(JetSpace::new(3, 0).len(), 1);
        assert!(JetSpace::new(3, 4).monomials.iter().all(|m| m.iter().map(|&e| e as usize).sum::<usize>() <= 4));
    }

    #[test]
    fn third_derivative_of_sin_product() {
        // f = sin(x) * y ; d^3 f / dx^3 = -cos(x) * y
        let space = JetSpace::new(2, 3);
        let x = Jet::variable(&space, 0, 0.4);
        let y = Jet::variable(&space, 1, 2.0);
        let f = x.apply(Elementary::Sin).mul(&y);
        let fxxx = f.derivative(0).derivative(0).derivative(0);
        assert!((fxxx.value() + 0.4f64.cos() * 2.0).abs() < 1e-14);
        let fxy = f.derivative(0).derivative(1);
        assert!((fxy.value() - 0.4f64.cos()).abs() < 1e-14);
    }
}
