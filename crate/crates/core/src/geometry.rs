//! Chart-level Riemannian calculus: metric, Levi-Civita connection, musical
//! maps, gradients, covariant derivatives, Laplace-Beltrami, Killing residuals
//! and product systems.
//!
//! All derivatives come from forward-mode AD on the metric and field
//! expressions, never from finite differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, Expression};
use crate::system::{eval_dual1, eval_dual2, ConstraintKind, System};

/// Above this dimension `g^{-1}` is applied through the Cholesky factor
/// instead of an explicitly stored inverse.
pub const EXPLICIT_INVERSE_MAX_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub at: Vec<f64>,
    pub components: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub at: Vec<f64>,
    pub components: Vec<f64>,
}

/// Lower-triangular Cholesky factor, or the first failing pivot.
pub fn cholesky(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err((j, d));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve a small symmetric positive-definite system, reporting a (near)
/// singular matrix as rank deficiency of `what`. Pivots below `1e-12` times
/// the largest diagonal entry count as zero.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &[f64], what: &str, at: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    let deficient = || Error::RankDeficient { what: what.to_string(), at: at.to_vec() };
    let l = cholesky(a).map_err(|_| deficient())?;
    if (0..n).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        return Err(deficient());
    }
    Ok(cholesky_solve(&l, b))
}

/// The metric at one point together with a factorization for raising indices.
#[derive(Clone, Debug)]
pub struct MetricEval {
    pub q: Vec<f64>,
    pub g: DMatrix<f64>,
    chol: DMatrix<f64>,
    inverse: Option<DMatrix<f64>>,
}

impl MetricEval {
    pub fn new(sys: &System, q: &[f64]) -> Result<Self> {
        Self::with_inverse_policy(sys, q, sys.dim() <= EXPLICIT_INVERSE_MAX_DIM)
    }

    /// Forces the choice between explicit inverse and factor solves.
    pub fn with_inverse_policy(sys: &System, q: &[f64], explicit: bool) -> Result<Self> {
        let g = evaluate_metric(sys, q)?;
        let chol = cholesky(&g).map_err(|(pivot, value)| Error::NotPositiveDefinite {
            pivot,
            value,
            at: q.to_vec(),
        })?;
        let inverse = if explicit {
            let inv = g.clone().try_inverse().ok_or_else(|| Error::Singular {
                what: "metric".into(),
                at: q.to_vec(),
            })?;
            Some(inv)
        } else {
            None
        };
        Ok(MetricEval { q: q.to_vec(), g, chol, inverse })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn uses_explicit_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    /// `v_i = g_ij u^j`.
    pub fn lower(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.g[(i, j)] * u[j]).sum()).collect()
    }

    /// `u^i = g^ij w_j`.
    pub fn raise(&self, w: &[f64]) -> Vec<f64> {
        match &self.inverse {
            Some(inv) => {
                let n = self.dim();
                (0..n).map(|i| (0..n).map(|j| inv[(i, j)] * w[j]).sum()).collect()
            }
            None => cholesky_solve(&self.chol, w),
        }
    }

    pub fn inner(&self, u: &[f64], w: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.g[(i, j)] * u[i] * w[j];
            }
        }
        s
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// `g^{-1}(a, b)` for covectors.
    pub fn inner_covectors(&self, a: &[f64], b: &[f64]) -> f64 {
        let ra = self.raise(a);
        ra.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match &self.inverse {
            Some(inv) => inv.clone(),
            None => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let col = cholesky_solve(&self.chol, &e);
                    for i in 0..n {
                        out[(i, j)] = col[i];
                    }
                }
                out
            }
        }
    }
}

fn check_guards(sys: &System, q: &[f64]) -> Result<()> {
    let values = sys.position_values(q);
    for guard in sys.metric_guards() {
        let f: f64 = guard.eval(&values).map_err(|e| Error::eval("conformal factor", e))?;
        if !(f > 0.0) {
            return Err(Error::JacobiFactor { value: f, at: q.to_vec() });
        }
    }
    Ok(())
}

fn evaluate_metric(sys: &System, q: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(sys, q)?;
    check_guards(sys, q)?;
    let n = sys.dim();
    let values = sys.position_values(q);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = sys
                .metric_entry(i, j)
                .eval(&values)
                .map_err(|e| Error::eval(format!("g[{}][{}]", i + 1, j + 1), e))?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

fn check_dim(sys: &System, q: &[f64]) -> Result<()> {
    if q.len() != sys.dim() {
        return Err(Error::InvalidState(format!(
            "point has {} components, system dimension is {}",
            q.len(),
            sys.dim()
        )));
    }
    Ok(())
}

pub fn metric_at(sys: &System, q: &[f64]) -> Result<DMatrix<f64>> {
    Ok(MetricEval::new(sys, q)?.g)
}

pub fn inverse_metric_at(sys: &System, q: &[f64]) -> Result<DMatrix<f64>> {
    Ok(MetricEval::new(sys, q)?.inverse())
}

/// Christoffel symbols `Gamma^k_ij` at a point; `get(k, i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelEval {
    pub at: Vec<f64>,
    n: usize,
    data: Vec<f64>,
}

impl ChristoffelEval {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `Gamma^k_ij u^i w^j` for every k.
    pub fn contract(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    if u[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        s += self.get(k, i, j) * u[i] * w[j];
                    }
                }
                s
            })
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n;
        let mut m: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    m = m.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        m
    }
}

/// Metric, its first derivatives and the connection at one point.
#[derive(Clone, Debug)]
pub struct PointGeometry {
    pub metric: MetricEval,
    /// `dg[l][(i, j)] = d g_ij / d q^l`.
    pub dg: Vec<DMatrix<f64>>,
    pub christoffel: ChristoffelEval,
}

impl PointGeometry {
    pub fn new(sys: &System, q: &[f64]) -> Result<Self> {
        let metric = MetricEval::new(sys, q)?;
        Self::from_metric(sys, metric)
    }

    pub fn from_metric(sys: &System, metric: MetricEval) -> Result<Self> {
        let n = sys.dim();
        let q = metric.q.clone();
        let values = sys.position_values(&q);
        let seeds: Vec<usize> = (0..n).collect();
        let mut dg = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            for j in i..n {
                let entry = sys.metric_entry(i, j);
                if entry.as_constant().is_some() {
                    continue;
                }
                let d = eval_dual1(entry, &values, &seeds)
                    .map_err(|e| Error::eval(format!("g[{}][{}]", i + 1, j + 1), e))?;
                for (l, m) in dg.iter_mut().enumerate() {
                    m[(i, j)] = d.d(l);
                    m[(j, i)] = d.d(l);
                }
            }
        }
        // First kind: [ij,l] = (d_i g_jl + d_j g_il - d_l g_ij) / 2
        let mut data = vec![0.0; n * n * n];
        let mut first = vec![0.0; n];
        for i in 0..n {
            for j in i..n {
                for (l, f) in first.iter_mut().enumerate() {
                    *f = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                let raised = metric.raise(&first);
                for k in 0..n {
                    data[(k * n + i) * n + j] = raised[k];
                    data[(k * n + j) * n + i] = raised[k];
                }
            }
        }
        let christoffel = ChristoffelEval { at: q, n, data };
        Ok(PointGeometry { metric, dg, christoffel })
    }
}

pub fn christoffel_at(sys: &System, q: &[f64]) -> Result<ChristoffelEval> {
    Ok(PointGeometry::new(sys, q)?.christoffel)
}

pub fn flat(sys: &System, v: &TangentVector) -> Result<Covector> {
    check_dim(sys, &v.components)?;
    let m = MetricEval::new(sys, &v.at)?;
    Ok(Covector { at: v.at.clone(), components: m.lower(&v.components) })
}

pub fn sharp(sys: &System, alpha: &Covector) -> Result<TangentVector> {
    check_dim(sys, &alpha.components)?;
    let m = MetricEval::new(sys, &alpha.at)?;
    Ok(TangentVector { at: alpha.at.clone(), components: m.raise(&alpha.components) })
}

/// Differential of a position-dependent scalar.
pub(crate) fn differential(sys: &System, f: &Expression, q: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = sys.dim();
    let seeds: Vec<usize> = (0..n).collect();
    let d = eval_dual1(f, &sys.position_values(q), &seeds).map_err(|e| Error::eval(what, e))?;
    Ok((0..n).map(|i| d.d(i)).collect())
}

pub fn gradient(sys: &System, f: &Expression, q: &[f64]) -> Result<TangentVector> {
    let m = MetricEval::new(sys, q)?;
    let df = differential(sys, f, q, "scalar field")?;
    Ok(TangentVector { at: q.to_vec(), components: m.raise(&df) })
}

/// A vector field's components and Jacobian `jac[(k, j)] = d X^k / d q^j`.
#[derive(Clone, Debug)]
pub struct FieldEval {
    pub value: Vec<f64>,
    pub jacobian: DMatrix<f64>,
}

pub fn eval_field(sys: &System, field: &[Expression], q: &[f64]) -> Result<FieldEval> {
    check_dim(sys, q)?;
    if field.len() != sys.dim() {
        return Err(Error::InvalidSystem(format!(
            "vector field has {} components, system dimension is {}",
            field.len(),
            sys.dim()
        )));
    }
    let n = sys.dim();
    let values = sys.position_values(q);
    let seeds: Vec<usize> = (0..n).collect();
    let mut value = vec![0.0; n];
    let mut jacobian = DMatrix::zeros(n, n);
    for (k, e) in field.iter().enumerate() {
        let d = eval_dual1(e, &values, &seeds).map_err(|e| Error::eval(format!("field component {}", k + 1), e))?;
        value[k] = d.value;
        for j in 0..n {
            jacobian[(k, j)] = d.d(j);
        }
    }
    Ok(FieldEval { value, jacobian })
}

/// `(nabla_Y Z)^k = Y^j d_j Z^k + Gamma^k_ij Y^i Z^j` from already evaluated parts.
pub fn covariant_derivative_parts(geom: &PointGeometry, y: &FieldEval, z: &FieldEval) -> Vec<f64> {
    let n = y.value.len();
    let gamma = geom.christoffel.contract(&y.value, &z.value);
    (0..n)
        .map(|k| (0..n).map(|j| y.value[j] * z.jacobian[(k, j)]).sum::<f64>() + gamma[k])
        .collect()
}

pub fn covariant_derivative(sys: &System, y: &[Expression], z: &[Expression], q: &[f64]) -> Result<TangentVector> {
    let geom = PointGeometry::new(sys, q)?;
    let ye = eval_field(sys, y, q)?;
    let ze = eval_field(sys, z, q)?;
    Ok(TangentVector { at: q.to_vec(), components: covariant_derivative_parts(&geom, &ye, &ze) })
}

/// `nabla_Y Z` for two named fields.
pub fn covariant_derivative_field(sys: &System, y: &str, z: &str, q: &[f64]) -> Result<TangentVector> {
    covariant_derivative(sys, sys.field(y)?, sys.field(z)?, q)
}

/// `[Y, Z]^k = Y^j d_j Z^k - Z^j d_j Y^k`.
pub fn lie_bracket(sys: &System, y: &[Expression], z: &[Expression], q: &[f64]) -> Result<TangentVector> {
    let ye = eval_field(sys, y, q)?;
    let ze = eval_field(sys, z, q)?;
    let n = sys.dim();
    let components = (0..n)
        .map(|k| {
            (0..n).map(|j| ye.value[j] * ze.jacobian[(k, j)] - ze.value[j] * ye.jacobian[(k, j)]).sum()
        })
        .collect();
    Ok(TangentVector { at: q.to_vec(), components })
}

/// Laplace-Beltrami operator.
///
/// Uses `Delta f = g^ij (d_i d_j f - Gamma^k_ij d_k f)`, algebraically equal to
/// `(1/sqrt|g|) d_i (sqrt|g| g^ij d_j f)` for the Levi-Civita connection.
pub fn laplace_beltrami(sys: &System, f: &Expression, q: &[f64]) -> Result<f64> {
    let geom = PointGeometry::new(sys, q)?;
    laplace_beltrami_at(sys, &geom, f)
}

pub(crate) fn laplace_beltrami_at(sys: &System, geom: &PointGeometry, f: &Expression) -> Result<f64> {
    let n = sys.dim();
    let seeds: Vec<usize> = (0..n).collect();
    let d = eval_dual2(f, &sys.position_values(&geom.metric.q), &seeds)
        .map_err(|e| Error::eval("scalar field", e))?;
    let inv = geom.metric.inverse();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut h = d.second(i, j);
            for k in 0..n {
                h -= geom.christoffel.get(k, i, j) * d.d(k);
            }
            s += inv[(i, j)] * h;
        }
    }
    Ok(s)
}

/// Riemannian divergence `d_i X^i + Gamma^i_ik X^k`.
pub fn divergence(sys: &System, field: &[Expression], q: &[f64]) -> Result<f64> {
    let geom = PointGeometry::new(sys, q)?;
    let x = eval_field(sys, field, q)?;
    Ok(divergence_parts(&geom, &x))
}

pub(crate) fn divergence_parts(geom: &PointGeometry, x: &FieldEval) -> f64 {
    let n = x.value.len();
    let mut s = 0.0;
    for i in 0..n {
        s += x.jacobian[(i, i)];
        for k in 0..n {
            s += geom.christoffel.get(i, i, k) * x.value[k];
        }
    }
    s
}

/// `(L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k`.
pub fn lie_derivative_metric(sys: &System, field: &[Expression], q: &[f64]) -> Result<DMatrix<f64>> {
    let geom = PointGeometry::new(sys, q)?;
    let x = eval_field(sys, field, q)?;
    Ok(lie_derivative_metric_parts(&geom, &x))
}

pub(crate) fn lie_derivative_metric_parts(geom: &PointGeometry, x: &FieldEval) -> DMatrix<f64> {
    let n = x.value.len();
    let g = &geom.metric.g;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..n {
                s += x.value[k] * geom.dg[k][(i, j)]
                    + g[(k, j)] * x.jacobian[(k, i)]
                    + g[(i, k)] * x.jacobian[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Killing residual `L_X g` for a named field; zero iff X is Killing at q.
pub fn killing_residual(sys: &System, field: &str, q: &[f64]) -> Result<DMatrix<f64>> {
    lie_derivative_metric(sys, sys.field(field)?, q)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

pub fn max_abs_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    DVector::from_column_slice(v).norm()
}

/// Disjoint union of systems with block-diagonal metric.
///
/// Coordinates that clash are prefixed with `<system name>_`. Potentials add
/// up, which on a block-diagonal metric gives each block its own `-grad V`.
/// Forces are concatenated; if any block uses a work form, all blocks are
/// expressed as work forms. Interaction forces referencing several blocks can
/// be added afterwards with [`System::with_force`].
pub fn product_system(systems: &[System]) -> Result<System> {
    if systems.is_empty() {
        return Err(Error::InvalidSystem("product of zero systems".into()));
    }
    let mut counts = std::collections::HashMap::<&str, usize>::new();
    for s in systems {
        for c in s.coords() {
            *counts.entry(c.as_str()).or_default() += 1;
        }
    }
    let mut coords: Vec<String> = Vec::new();
    for (k, s) in systems.iter().enumerate() {
        for c in s.coords() {
            let mut name = if counts[c.as_str()] > 1 { format!("{}_{}", s.name(), c) } else { c.clone() };
            if coords.contains(&name) {
                name = format!("s{}_{}", k + 1, c);
            }
            coords.push(name);
        }
    }
    let name = systems.iter().map(|s| s.name()).collect::<Vec<_>>().join("+");
    let refs: Vec<&str> = coords.iter().map(String::as_str).collect();
    let mut builder = System::builder(name, &refs)?;
    let total: usize = coords.len();

    // Remap a block's symbol ids (q, v, t) into the product layout.
    let mut offset = 0;
    let mut remaps = Vec::new();
    for s in systems {
        let n = s.dim();
        let off = offset;
        remaps.push(move |id: usize| {
            if id < n {
                off + id
            } else if id < 2 * n {
                total + off + (id - n)
            } else {
                2 * total
            }
        });
        offset += n;
    }

    let zero = Expression::constant(0.0);
    let mut metric = vec![vec![zero.clone(); total]; total];
    let mut potential: Option<Expression> = None;
    let any_work = systems.iter().any(|s| s.work_form().is_some());
    let any_force = systems.iter().any(|s| s.force().is_some() || s.work_form().is_some());
    let mut force = vec![zero.clone(); total];
    let mut holonomic = Vec::new();
    let mut nonholonomic = Vec::new();
    let mut fields: Vec<(String, Vec<Expression>, bool)> = Vec::new();
    let mut scalars = Vec::new();
    offset = 0;
    for (s, map) in systems.iter().zip(&remaps) {
        let n = s.dim();
        for i in 0..n {
            for j in 0..n {
                metric[offset + i][offset + j] = s.metric_entry(i, j).remap(map);
            }
        }
        if let Some(v) = s.potential() {
            let v = v.remap(map);
            potential = Some(match potential {
                None => v,
                Some(p) => Expression::binary(BinaryOp::Add, &p, &v),
            });
        }
        let block: Option<Vec<Expression>> = match (s.force(), s.work_form()) {
            (Some(f), _) if any_work => Some(
                (0..n)
                    .map(|i| {
                        (0..n).fold(zero.clone(), |acc, j| {
                            let term = Expression::binary(BinaryOp::Mul, s.metric_entry(i, j), &f[j]);
                            Expression::binary(BinaryOp::Add, &acc, &term)
                        })
                    })
                    .collect(),
            ),
            (Some(f), _) => Some(f.to_vec()),
            (None, Some(w)) => Some(w.to_vec()),
            (None, None) => None,
        };
        if let Some(b) = block {
            for (i, e) in b.iter().enumerate() {
                force[offset + i] = e.remap(map);
            }
        }
        for h in s.holonomic() {
            holonomic.push((format!("{}_{}", s.name(), h.name), h.expr.remap(map)));
        }
        for h in s.nonholonomic() {
            nonholonomic.push((format!("{}_{}", s.name(), h.name), h.kind, h.expr.remap(map)));
        }
        for (f, control) in s.fields().iter().map(|f| (f, false)).chain(s.controls().iter().map(|f| (f, true))) {
            let mut comps = vec![zero.clone(); total];
            for (i, e) in f.components.iter().enumerate() {
                comps[offset + i] = e.remap(map);
            }
            fields.push((format!("{}_{}", s.name(), f.name), comps, control));
        }
        for sc in s.scalars() {
            scalars.push((format!("{}_{}", s.name(), sc.name), sc.expr.remap(map)));
        }
        offset += n;
    }
    let symbols = builder.symbols().clone();
    let show = |e: &Expression| e.display(&symbols).to_string();
    for i in 0..total {
        for j in i..total {
            if metric[i][j].as_constant() != Some(0.0) {
                builder.metric(i, j, &show(&metric[i][j]))?;
            }
        }
    }
    if let Some(p) = &potential {
        builder.potential(&show(p))?;
    }
    if any_force {
        for (i, e) in force.iter().enumerate() {
            if any_work {
                builder.work_form(i, &show(e))?;
            } else {
                builder.force(i, &show(e))?;
            }
        }
    }
    for (name, e) in &holonomic {
        builder.holonomic(name, &show(e))?;
    }
    for (name, kind, e) in &nonholonomic {
        let kind: ConstraintKind = *kind;
        builder.nonholonomic(name, kind, &show(e))?;
    }
    for (name, comps, control) in &fields {
        for (i, e) in comps.iter().enumerate() {
            if *control {
                builder.control(name, i, &show(e))?;
            } else {
                builder.field(name, i, &show(e))?;
            }
        }
    }
    for (name, e) in &scalars {
        builder.scalar(name, &show(e))?;
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn plane() -> System {
        let mut b = System::builder("plane", &["x", "y"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "1").unwrap();
        b.field("rot", 0, "-y").unwrap().field("rot", 1, "x").unwrap();
        b.field("stretch", 0, "x").unwrap();
        b.field("Y", 0, "x^2").unwrap();
        b.field("Z", 0, "y").unwrap();
        b.field("zero", 0, "0").unwrap();
        b.field("c1", 0, "1").unwrap().field("c1", 1, "2").unwrap();
        b.build().unwrap()
    }

    fn sphere() -> System {
        let mut b = System::builder("sphere", &["th", "ph"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "sin(th)^2").unwrap();
        b.field("dph", 1, "1").unwrap();
        b.build().unwrap()
    }

    fn polar() -> System {
        let mut b = System::builder("polar", &["r", "ph"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "r^2").unwrap();
        b.scalar("logr", "log(r)").unwrap();
        b.build().unwrap()
    }

    fn diag21() -> System {
        let mut b = System::builder("d", &["a", "b"]).unwrap();
        b.metric(0, 0, "2").unwrap().metric(1, 1, "1").unwrap();
        b.build().unwrap()
    }

    #[test]
    fn metric_examples() {
        let g = metric_at(&plane(), &[0.3, -2.0]).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        let g = metric_at(&sphere(), &[FRAC_PI_2, 0.0]).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        let inv = inverse_metric_at(&diag21(), &[0.0, 0.0]).unwrap();
        assert_eq!(inv, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0])));
    }

    #[test]
    fn degenerate_metric_reports_pivot() {
        let err = metric_at(&sphere(), &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }), "{err}");
    }

    #[test]
    fn christoffel_examples() {
        let c = christoffel_at(&plane(), &[1.0, 2.0]).unwrap();
        assert!(c.data.iter().all(|&x| x == 0.0));

        let c = christoffel_at(&sphere(), &[FRAC_PI_4, 0.0]).unwrap();
        assert!((c.get(0, 1, 1) + 0.5).abs() < 1e-15);
        assert!((c.get(1, 0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(c.get(1, 0, 1), c.get(1, 1, 0));

        let c = christoffel_at(&polar(), &[2.0, 0.3]).unwrap();
        assert!((c.get(0, 1, 1) + 2.0).abs() < 1e-15);
        assert!((c.get(1, 0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn musical_examples() {
        let sys = diag21();
        let v = TangentVector { at: vec![0.0, 0.0], components: vec![1.0, 1.0] };
        let w = flat(&sys, &v).unwrap();
        assert_eq!(w.components, vec![2.0, 1.0]);
        assert_eq!(sharp(&sys, &w).unwrap(), v);
        let id = flat(&plane(), &TangentVector { at: vec![0.0, 0.0], components: vec![3.0, -1.0] }).unwrap();
        assert_eq!(id.components, vec![3.0, -1.0]);
    }

    #[test]
    fn gradient_examples() {
        let sys = plane();
        let f = Expression::parse("x^2", sys.symbols()).unwrap();
        assert_eq!(gradient(&sys, &f, &[3.0, 0.0]).unwrap().components, vec![6.0, 0.0]);
        let sys = diag21();
        let f = Expression::parse("a", sys.symbols()).unwrap();
        assert_eq!(gradient(&sys, &f, &[1.0, 1.0]).unwrap().components, vec![0.5, 0.0]);
        let c = Expression::parse("7", sys.symbols()).unwrap();
        assert_eq!(gradient(&sys, &c, &[1.0, 1.0]).unwrap().components, vec![0.0, 0.0]);
    }

    #[test]
    fn covariant_derivative_examples() {
        let sys = plane();
        let z = covariant_derivative_field(&sys, "c1", "c1", &[0.4, 0.1]).unwrap();
        assert_eq!(z.components, vec![0.0, 0.0]);
        let zy = covariant_derivative_field(&sys, "Z", "Y", &[1.0, 1.0]).unwrap();
        assert_eq!(zy.components, vec![2.0, 0.0]);
        let yz = covariant_derivative_field(&sys, "Y", "Z", &[1.0, 1.0]).unwrap();
        assert_eq!(yz.components[0] + zy.components[0], 2.0);

        let s = sphere();
        let d = covariant_derivative_field(&s, "dph", "dph", &[FRAC_PI_4, 0.0]).unwrap();
        assert!((d.components[0] + 0.5).abs() < 1e-15);

        assert!(matches!(
            covariant_derivative_field(&sys, "nope", "Y", &[0.0, 0.0]),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn laplacian_examples() {
        let sys = plane();
        let f = Expression::parse("x^2 + y^2", sys.symbols()).unwrap();
        assert!((laplace_beltrami(&sys, &f, &[0.3, 0.8]).unwrap() - 4.0).abs() < 1e-14);
        let lin = Expression::parse("3*x - y", sys.symbols()).unwrap();
        assert_eq!(laplace_beltrami(&sys, &lin, &[0.3, 0.8]).unwrap(), 0.0);
        let p = polar();
        let lg = laplace_beltrami(&p, p.scalar("logr").unwrap(), &[2.0, 0.1]).unwrap();
        assert!(lg.abs() < 1e-15, "{lg}");
    }

    #[test]
    fn killing_examples() {
        let sys = plane();
        assert_eq!(max_abs(&killing_residual(&sys, "rot", &[0.7, -0.2]).unwrap()), 0.0);
        let k = killing_residual(&sys, "stretch", &[1.0, 1.0]).unwrap();
        assert_eq!(k[(0, 0)], 2.0);
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(1, 1)], 0.0);
        assert_eq!(max_abs(&killing_residual(&sphere(), "dph", &[0.9, 0.0]).unwrap()), 0.0);
        assert_eq!(max_abs(&killing_residual(&sys, "zero", &[3.0, 1.0]).unwrap()), 0.0);
    }

    #[test]
    fn product_examples() {
        let line = |name: &str, g: &str| {
            let mut b = System::builder(name, &["x"]).unwrap();
            b.metric(0, 0, g).unwrap();
            b.build().unwrap()
        };
        let p = product_system(&[line("a", "1"), line("b", "1")]).unwrap();
        assert_eq!(p.coords(), &["a_x".to_string(), "b_x".to_string()]);
        assert_eq!(metric_at(&p, &[0.0, 0.0]).unwrap(), DMatrix::identity(2, 2));
        let p = product_system(&[line("a", "2"), line("b", "3")]).unwrap();
        assert_eq!(metric_at(&p, &[0.0, 0.0]).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));

        let coupled = Expression::parse("b_x - a_x", p.symbols()).unwrap();
        let p = p.with_force(Some(vec![coupled.clone(), coupled.neg()])).unwrap();
        let vals = p.values(0.0, &[1.0, 4.0], &[0.0, 0.0]);
        let f: Vec<f64> = p.force().unwrap().iter().map(|e| e.eval::<f64>(&vals).unwrap()).collect();
        assert_eq!(f, vec![3.0, -3.0]);
    }

    #[test]
    fn explicit_and_factored_inverse_agree() {
        let mut b = System::builder("s", &["a", "b", "c"]).unwrap();
        b.metric(0, 0, "2 + a^2").unwrap().metric(0, 1, "0.3*b").unwrap();
        b.metric(1, 1, "1.5").unwrap().metric(1, 2, "0.1").unwrap().metric(2, 2, "exp(c)").unwrap();
        let sys = b.build().unwrap();
        let q = [0.4, -0.7, 0.2];
        let e = MetricEval::with_inverse_policy(&sys, &q, true).unwrap();
        let f = MetricEval::with_inverse_policy(&sys, &q, false).unwrap();
        let w = [0.3, -1.1, 2.0];
        let (a, b) = (e.raise(&w), f.raise(&w));
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
        assert!(max_abs(&(e.inverse() - f.inverse())) < 1e-12);
    }
}
