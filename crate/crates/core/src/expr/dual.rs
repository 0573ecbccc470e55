//! First- and second-order forward-mode dual numbers.
//!
//! Derivative storage may be empty, which stands for "all zero"; literals and
//! unseeded variables therefore cost nothing beyond their value.

use super::scalar::{Elementary, Scalar};

/// Value plus gradient over a fixed set of seed directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual1 {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Dual1 {
    /// Seed direction `index` out of `count`.
    pub fn variable(value: f64, index: usize, count: usize) -> Self {
        let mut grad = vec![0.0; count];
        grad[index] = 1.0;
        Dual1 { value, grad }
    }

    pub fn d(&self, index: usize) -> f64 {
        self.grad.get(index).copied().unwrap_or(0.0)
    }
}

fn combine(a: &[f64], ka: f64, b: &[f64], kb: f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let x = a.get(i).map_or(0.0, |v| v * ka);
            let y = b.get(i).map_or(0.0, |v| v * kb);
            x + y
        })
        .collect()
}

impl Scalar for Dual1 {
    fn constant(c: f64) -> Self {
        Dual1 { value: c, grad: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn is_constant(&self) -> bool {
        self.grad.iter().all(|&g| g == 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        Dual1 { value: self.value + o.value, grad: combine(&self.grad, 1.0, &o.grad, 1.0) }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual1 { value: self.value - o.value, grad: combine(&self.grad, 1.0, &o.grad, -1.0) }
    }
    fn mul(&self, o: &Self) -> Self {
        Dual1 {
            value: self.value * o.value,
            grad: combine(&self.grad, o.value, &o.grad, self.value),
        }
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn scale(&self, k: f64) -> Self {
        Dual1 { value: self.value * k, grad: self.grad.iter().map(|g| g * k).collect() }
    }
    fn apply(&self, f: Elementary) -> Self {
        let d = f.derivatives(self.value, 1);
        Dual1 { value: d[0], grad: self.grad.iter().map(|g| g * d[1]).collect() }
    }
}

/// Value, gradient and Hessian over a fixed set of seed directions.
///
/// The Hessian is stored packed (upper triangle, row-major), so
/// `second(i, j)` and `second(j, i)` read the same slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual2 {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

fn packed_len(m: usize) -> usize {
    m * (m + 1) / 2
}

fn packed_index(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * m - i * (i + 1) / 2 + j
}

impl Dual2 {
    pub fn variable(value: f64, index: usize, count: usize) -> Self {
        let mut grad = vec![0.0; count];
        grad[index] = 1.0;
        Dual2 { value, grad, hess: Vec::new() }
    }

    /// Number of seed directions carried (0 for a constant).
    pub fn seeds(&self) -> usize {
        self.grad.len()
    }

    pub fn d(&self, i: usize) -> f64 {
        self.grad.get(i).copied().unwrap_or(0.0)
    }

    pub fn second(&self, i: usize, j: usize) -> f64 {
        let m = self.grad.len();
        if self.hess.is_empty() || i >= m || j >= m {
            return 0.0;
        }
        self.hess[packed_index(m, i, j)]
    }

    fn dims(a: &Dual2, b: &Dual2) -> usize {
        a.grad.len().max(b.grad.len())
    }

    fn hess_of(&self, m: usize, i: usize, j: usize) -> f64 {
        if self.grad.len() == m {
            self.second(i, j)
        } else {
            0.0
        }
    }
}

impl Scalar for Dual2 {
    fn constant(c: f64) -> Self {
        Dual2 { value: c, grad: Vec::new(), hess: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn is_constant(&self) -> bool {
        self.grad.iter().all(|&g| g == 0.0) && self.hess.iter().all(|&h| h == 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        let m = Self::dims(self, o);
        let hess = if self.hess.is_empty() && o.hess.is_empty() {
            Vec::new()
        } else {
            let mut h = vec![0.0; packed_len(m)];
            for i in 0..m {
                for j in i..m {
                    h[packed_index(m, i, j)] = self.hess_of(m, i, j) + o.hess_of(m, i, j);
                }
            }
            h
        };
        Dual2 { value: self.value + o.value, grad: combine(&self.grad, 1.0, &o.grad, 1.0), hess }
    }
    fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }
    fn mul(&self, o: &Self) -> Self {
        let m = Self::dims(self, o);
        let grad = combine(&self.grad, o.value, &o.grad, self.value);
        let mut hess = Vec::new();
        if m > 0 {
            hess = vec![0.0; packed_len(m)];
            for i in 0..m {
                for j in i..m {
                    let cross = self.d(i) * o.d(j) + o.d(i) * self.d(j);
                    hess[packed_index(m, i, j)] =
                        self.hess_of(m, i, j) * o.value + o.hess_of(m, i, j) * self.value + cross;
                }
            }
        }
        Dual2 { value: self.value * o.value, grad, hess }
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn scale(&self, k: f64) -> Self {
        Dual2 {
            value: self.value * k,
            grad: self.grad.iter().map(|g| g * k).collect(),
            hess: self.hess.iter().map(|h| h * k).collect(),
        }
    }
    fn apply(&self, f: Elementary) -> Self {
        let d = f.derivatives(self.value, 2);
        let m = self.grad.len();
        let mut hess = Vec::new();
        if m > 0 {
            hess = vec![0.0; packed_len(m)];
            for i in 0..m {
                for j in i..m {
                    hess[packed_index(m, i, j)] =
                        d[1] * self.hess_of(m, i, j) + d[2] * self.grad[i] * self.grad[j];
                }
            }
        }
        Dual2 { value: d[0], grad: self.grad.iter().map(|g| g * d[1]).collect(), hess }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_second_order() {
        // f = x*y*y at (2, 3): fx = 9, fy = 12, fxy = 6, fyy = 4
        let x = Dual2::variable(2.0, 0, 2);
        let y = Dual2::variable(3.0, 1, 2);
        let f = x.mul(&y).mul(&y);
        assert_eq!(f.value, 18.0);
        assert_eq!((f.d(0), f.d(1)), (9.0, 12.0));
        assert_eq!(f.second(0, 0), 0.0);
        assert_eq!(f.second(0, 1), 6.0);
        assert_eq!(f.second(1, 0), 6.0);
        assert_eq!(f.second(1, 1), 4.0);
    }

    #[test]
    fn constants_mix_with_seeded_values() {
        let x = Dual2::variable(1.5, 0, 1);
        let f = x.mul(&Dual2::constant(4.0)).add(&Dual2::constant(1.0));
        assert_eq!(f.value, 7.0);
        assert_eq!(f.d(0), 4.0);
        assert_eq!(f.second(0, 0), 0.0);
    }

    #[test]
    fn chain_rule_through_exp() {
        let x = Dual1::variable(0.5, 0, 1);
        let f = x.mul(&x).apply(Elementary::Exp);
        assert!((f.d(0) - 2.0 * 0.5 * 0.25f64.exp()).abs() < 1e-15);
    }
}
