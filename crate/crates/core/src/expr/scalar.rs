//! Number types an [`Expression`](super::Expression) can be evaluated over.

/// Elementary univariate maps, described by their derivative sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementary {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Abs,
    /// `x^c` for a fixed real exponent.
    Pow(f64),
}

impl Elementary {
    /// `[f(x), f'(x), ..., f^(order)(x)]`.
    pub fn derivatives(self, x: f64, order: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(order + 1);
        match self {
            Elementary::Sin | Elementary::Cos => {
                let (s, c) = x.sin_cos();
                let cycle = [s, c, -s, -c];
                let shift = if self == Elementary::Sin { 0 } else { 1 };
                for k in 0..=order {
                    out.push(cycle[(k + shift) % 4]);
                }
            }
            Elementary::Exp => {
                let e = x.exp();
                out.resize(order + 1, e);
            }
            Elementary::Log => {
                out.push(x.ln());
                // f^(k) = (-1)^(k-1) (k-1)! / x^k
                let mut fact = 1.0;
                for k in 1..=order {
                    if k > 1 {
                        fact *= (k - 1) as f64;
                    }
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    out.push(sign * fact / x.powi(k as i32));
                }
            }
            Elementary::Abs => {
                out.push(x.abs());
                if order >= 1 {
                    out.push(if x < 0.0 { -1.0 } else { 1.0 });
                }
                out.resize(order + 1, 0.0);
            }
            Elementary::Pow(c) => {
                let mut coeff = 1.0;
                for k in 0..=order {
                    let e = c - k as f64;
                    out.push(if coeff == 0.0 { 0.0 } else { coeff * pow_real(x, e) });
                    coeff *= e;
                }
            }
            Elementary::Tan => {
                // d/dx P(T) = P'(T) (1 + T^2), starting from P(T) = T.
                let t = x.tan();
                let mut poly = vec![0.0, 1.0];
                for _ in 0..=order {
                    out.push(horner(&poly, t));
                    let mut deriv = vec![0.0; poly.len() + 1];
                    for (i, &p) in poly.iter().enumerate().skip(1) {
                        let d = p * i as f64;
                        deriv[i - 1] += d;
                        deriv[i + 1] += d;
                    }
                    poly = deriv;
                }
            }
        }
        out
    }
}

fn horner(poly: &[f64], x: f64) -> f64 {
    poly.iter().rev().fold(0.0, |acc, &p| acc * x + p)
}

/// `x^e` that stays real for negative bases with integer exponents.
pub(crate) fn pow_real(x: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() < i32::MAX as f64 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Arithmetic needed by the evaluator.
///
/// Implementations differ only in how many derivatives they carry along; the
/// evaluator itself is written once, generically.
pub trait Scalar: Clone + Sized {
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    /// True when every carried derivative is zero.
    fn is_constant(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, k: f64) -> Self;
    /// Chain rule through an elementary map.
    fn apply(&self, f: Elementary) -> Self;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn apply(&self, f: Elementary) -> Self {
        match f {
            Elementary::Sin => self.sin(),
            Elementary::Cos => self.cos(),
            Elementary::Tan => self.tan(),
            Elementary::Exp => self.exp(),
            Elementary::Log => self.ln(),
            Elementary::Abs => self.abs(),
            Elementary::Pow(c) if c == 0.5 => self.sqrt(),
            Elementary::Pow(c) => pow_real(*self, c),
        }
    }
}
