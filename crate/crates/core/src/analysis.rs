//! Audits built on the connection: Hamilton-Jacobi vector fields, the Jacobi
//! metric, Noether quantities, the stationary Euler example and the
//! Schrodinger triple check.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, force_at, PhaseState, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{BinaryOp, Expression};
use crate::geometry::{
    covariant_derivative_parts, divergence_parts, eval_field, laplace_beltrami_at, lie_derivative_metric_parts,
    max_abs, FieldEval, PointGeometry, TangentVector,
};
use crate::integrator::{self, IntegratorConfig, Method};
use crate::parallel::{self, ExecMode};
use crate::system::{eval_dual1, System};

/// Default number of grid points per axis.
pub const DEFAULT_POINTS_PER_AXIS: usize = 11;

/// State used to evaluate `F` along a field: `v = X(q)`, `t = 0`.
fn field_state(q: &[f64], x: &FieldEval) -> PhaseState {
    PhaseState::new(0.0, q.to_vec(), x.value.clone())
}

fn hj_parts(sys: &System, geom: &PointGeometry, x: &FieldEval) -> Result<Vec<f64>> {
    let q = &geom.metric.q;
    let nabla = covariant_derivative_parts(geom, x, x);
    let f = force_at(sys, &geom.metric, &field_state(q, x))?;
    Ok(nabla.iter().zip(f).map(|(a, b)| a - b).collect())
}

/// `nabla_X X - F` at `q`, with the force evaluated at `v = X(q)`, `t = 0`.
pub fn hj_residual(sys: &System, field: &str, q: &[f64]) -> Result<TangentVector> {
    let geom = PointGeometry::new(sys, q)?;
    let x = eval_field(sys, sys.field(field)?, q)?;
    Ok(TangentVector { at: q.to_vec(), components: hj_parts(sys, &geom, &x)? })
}

fn closedness_parts(geom: &PointGeometry, x: &FieldEval) -> DMatrix<f64> {
    let n = x.value.len();
    let g = &geom.metric.g;
    // d_i (g_jk X^k)
    let d = |i: usize, j: usize| -> f64 {
        (0..n).map(|k| geom.dg[i][(j, k)] * x.value[k] + g[(j, k)] * x.jacobian[(k, i)]).sum()
    };
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = d(i, j) - d(j, i);
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    m
}

/// `M_ij = d_i (flat X)_j - d_j (flat X)_i`, the components of `d(i_X g)`.
///
/// Only closedness is tested. On a domain that is not simply connected a
/// closed `flat X` need not be exact.
pub fn closedness_residual(sys: &System, field: &str, q: &[f64]) -> Result<DMatrix<f64>> {
    let geom = PointGeometry::new(sys, q)?;
    let x = eval_field(sys, sys.field(field)?, q)?;
    Ok(closedness_parts(&geom, &x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Box grid: listed axes are sampled, the other coordinates stay at `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
    pub base: Vec<f64>,
}

impl Grid {
    pub fn new(axes: Vec<GridAxis>, base: Vec<f64>) -> Result<Grid> {
        for a in &axes {
            if a.coord >= base.len() {
                return Err(Error::Config(format!("grid axis {} out of range", a.coord + 1)));
            }
            if a.count == 0 {
                return Err(Error::Config("grid is empty".into()));
            }
            if !(a.lo.is_finite() && a.hi.is_finite()) || a.hi < a.lo {
                return Err(Error::Config(format!("bad grid range {}..{}", a.lo, a.hi)));
            }
            if a.count == 1 && a.hi != a.lo {
                return Err(Error::Config("a one-point axis needs lo == hi".into()));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if !axes.iter().all(|a| seen.insert(a.coord)) {
            return Err(Error::Config("grid axis listed twice".into()));
        }
        Ok(Grid { axes, base })
    }

    fn axis_value(a: &GridAxis, i: usize) -> f64 {
        if a.count == 1 {
            a.lo
        } else if i + 1 == a.count {
            a.hi
        } else {
            a.lo + (a.hi - a.lo) * i as f64 / (a.count - 1) as f64
        }
    }

    /// Points in row-major order, last axis fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let total: usize = self.axes.iter().map(|a| a.count).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.axes.len()];
        for _ in 0..total {
            let mut q = self.base.clone();
            for (a, &i) in self.axes.iter().zip(&idx) {
                q[a.coord] = Self::axis_value(a, i);
            }
            out.push(q);
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < self.axes[k].count {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjPoint {
    pub q: Vec<f64>,
    pub residual: Vec<f64>,
    /// g-norm of `residual`.
    pub residual_norm: f64,
    /// Largest entry of `d(i_X g)`.
    pub closedness: f64,
    /// `E(q, X(q)) = g(X, X)/2 + V(q)`.
    pub energy: f64,
}

/// Thresholds for the two-way audit of "closed X: HJ field iff E o X constant".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjTolerances {
    pub closedness: f64,
    pub residual: f64,
    /// Energy deviation tolerance is `energy_rel * (1 + |mean E|)`.
    pub energy_rel: f64,
}

impl Default for HjTolerances {
    fn default() -> Self {
        HjTolerances { closedness: 1e-10, residual: 1e-6, energy_rel: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjReport {
    pub field: String,
    pub points: Vec<HjPoint>,
    pub max_residual: f64,
    pub max_closedness: f64,
    pub energy_mean: f64,
    /// Largest `|E o X - mean|` over the grid.
    pub energy_deviation: f64,
    pub tolerances: HjTolerances,
    pub closed: bool,
    pub hj_satisfied: bool,
    pub energy_constant: bool,
    /// Whether the equivalence held on this grid; `None` when X is not closed.
    pub equivalence_holds: Option<bool>,
}

fn potential_q(sys: &System, q: &[f64]) -> Result<f64> {
    match sys.potential() {
        None => Ok(0.0),
        Some(v) => v.eval::<f64>(&sys.position_values(q)).map_err(|e| Error::eval("potential", e)),
    }
}

fn hj_point(sys: &System, field: &[Expression], q: &[f64]) -> Result<HjPoint> {
    let geom = PointGeometry::new(sys, q)?;
    let x = eval_field(sys, field, q)?;
    let residual = hj_parts(sys, &geom, &x)?;
    let closedness = max_abs(&closedness_parts(&geom, &x));
    let energy = 0.5 * geom.metric.inner(&x.value, &x.value) + potential_q(sys, q)?;
    Ok(HjPoint { q: q.to_vec(), residual_norm: geom.metric.norm(&residual), residual, closedness, energy })
}

pub fn hj_energy_check(sys: &System, field: &str, grid: &Grid, mode: ExecMode) -> Result<HjReport> {
    hj_energy_check_with(sys, field, grid, HjTolerances::default(), mode)
}

pub fn hj_energy_check_with(
    sys: &System,
    field: &str,
    grid: &Grid,
    tolerances: HjTolerances,
    mode: ExecMode,
) -> Result<HjReport> {
    if grid.base.len() != sys.dim() {
        return Err(Error::Config(format!("grid base point has {} coordinates", grid.base.len())));
    }
    let x = sys.field(field)?;
    let qs = grid.points();
    if qs.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    let points = parallel::map(&qs, mode, |q| hj_point(sys, x, q)).into_iter().collect::<Result<Vec<_>>>()?;
    let max_residual = points.iter().map(|p| p.residual_norm).fold(0.0, f64::max);
    let max_closedness = points.iter().map(|p| p.closedness).fold(0.0, f64::max);
    let energy_mean = points.iter().map(|p| p.energy).sum::<f64>() / points.len() as f64;
    let energy_deviation = points.iter().map(|p| (p.energy - energy_mean).abs()).fold(0.0, f64::max);
    let closed = max_closedness <= tolerances.closedness;
    let hj_satisfied = max_residual <= tolerances.residual;
    let energy_constant = energy_deviation <= tolerances.energy_rel * (1.0 + energy_mean.abs());
    Ok(HjReport {
        field: field.to_string(),
        points,
        max_residual,
        max_closedness,
        energy_mean,
        energy_deviation,
        tolerances,
        closed,
        hj_satisfied,
        energy_constant,
        equivalence_holds: closed.then_some(hj_satisfied == energy_constant),
    })
}

/// Largest `||nabla_c' c' - F||_g` along an integral curve `c' = X(c)` from
/// `q0`, integrated by RK4. Velocities are `X(c)`, accelerations central
/// differences of `X(c(t))`.
pub fn integral_curve_residual(sys: &System, field: &str, q0: &[f64], t1: f64, dt: f64) -> Result<f64> {
    let x = sys.field(field)?;
    let cfg = IntegratorConfig::rk4(0.0, t1, dt);
    let rhs = |_: usize, _: f64, q: &[f64]| -> Result<Vec<f64>> { Ok(eval_field(sys, x, q)?.value) };
    let sol = integrator::solve(&cfg, q0, &[0.0, t1], &rhs)?;
    if let Some(e) = sol.error {
        return Err(e);
    }
    if sol.times.len() < 3 {
        return Err(Error::Config("integral curve needs at least 3 samples".into()));
    }
    let vel: Vec<Vec<f64>> = sol.states.iter().map(|q| eval_field(sys, x, q).map(|f| f.value)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 1..sol.times.len() - 1 {
        let h = sol.times[i + 1] - sol.times[i - 1];
        let q = &sol.states[i];
        let s = PhaseState::new(0.0, q.clone(), vel[i].clone());
        let geom = PointGeometry::new(sys, q)?;
        let free = dynamics::free_acceleration(sys, &geom, &s)?;
        let r: Vec<f64> = (0..sys.dim()).map(|k| (vel[i + 1][k] - vel[i - 1][k]) / h - free[k]).collect();
        worst = worst.max(geom.metric.norm(&r));
    }
    Ok(worst)
}

/// `g0 = (E0 - V) g` without forcing. The factor is checked for positivity
/// at every metric evaluation of the returned system.
pub fn jacobi_metric(sys: &System, e0: f64) -> Result<System> {
    let v = sys.potential().ok_or_else(|| Error::InvalidSystem("the Jacobi metric needs a potential".into()))?;
    if sys.potential_is_time_dependent() {
        return Err(Error::InvalidSystem("the Jacobi metric needs a time-independent potential".into()));
    }
    let factor = Expression::binary(BinaryOp::Sub, &Expression::constant(e0), v);
    sys.conformal(&factor, format!("{}_jacobi", sys.name()))
}

/// One-sided and symmetric distances between two polylines in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDistance {
    /// `sup_{a in A} dist(a, B)`.
    pub forward: f64,
    /// `sup_{b in B} dist(b, A)`.
    pub backward: f64,
    pub max: f64,
}

fn point_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for k in 0..p.len() {
        let d = b[k] - a[k];
        ab2 += d * d;
        ap_ab += (p[k] - a[k]) * d;
    }
    let s = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut d2 = 0.0;
    for k in 0..p.len() {
        let x = p[k] - (a[k] + s * (b[k] - a[k]));
        d2 += x * x;
    }
    d2.sqrt()
}

fn one_sided(a: &[Vec<f64>], b: &[Vec<f64>], mode: ExecMode) -> f64 {
    let per = parallel::map(a, mode, |p| {
        if b.len() == 1 {
            return point_segment(p, &b[0], &b[0]);
        }
        b.windows(2).map(|w| point_segment(p, &w[0], &w[1])).fold(f64::INFINITY, f64::min)
    });
    per.into_iter().fold(0.0, f64::max)
}

pub fn trace_distance(a: &[Vec<f64>], b: &[Vec<f64>], mode: ExecMode) -> TraceDistance {
    let forward = one_sided(a, b, mode);
    let backward = one_sided(b, a, mode);
    TraceDistance { forward, backward, max: forward.max(backward) }
}

#[derive(Clone, Debug)]
pub struct JacobiComparison {
    pub distance: TraceDistance,
    /// g0-length of the Newton trajectory, the parameter range of the geodesic.
    pub length: f64,
    pub newton: Trajectory,
    pub geodesic: Trajectory,
}

/// `E(s0)` must equal `E0` to this tolerance.
pub const JACOBI_ENERGY_TOL: f64 = 1e-9;

/// Compare the Newton trajectory from `s0` with the g0-geodesic leaving the
/// same point in the same direction, parametrized by g0-arclength over the
/// same length, as point sets.
pub fn jacobi_compare(sys: &System, e0: f64, s0: &PhaseState, cfg: &IntegratorConfig, mode: ExecMode) -> Result<JacobiComparison> {
    let e = dynamics::total_energy(sys, s0)?;
    if (e - e0).abs() > JACOBI_ENERGY_TOL {
        return Err(Error::InvalidState(format!("initial energy {e} differs from E0 = {e0}")));
    }
    let jac = jacobi_metric(sys, e0)?;
    let newton = dynamics::integrate(&sys.clone().unconstrained(), s0, cfg)?.into_result()?;

    // g0-speed sqrt(E0 - V) |v|_g along the Newton trajectory.
    let speeds: Vec<f64> = newton
        .samples
        .iter()
        .map(|s| {
            let m = crate::geometry::MetricEval::new(&jac, &s.state.q)?;
            Ok(m.norm(&s.state.v))
        })
        .collect::<Result<_>>()?;
    let times = newton.times();
    let length = integrate_samples(&times, &speeds);
    if !(speeds[0] > 0.0) {
        return Err(Error::InvalidState("initial velocity is zero; no geodesic direction".into()));
    }
    let w0: Vec<f64> = s0.v.iter().map(|x| x / speeds[0]).collect();
    let steps = newton.len() - 1;
    let gcfg = match cfg.method {
        Method::Rk4 { .. } => IntegratorConfig::rk4(0.0, length, length / steps as f64),
        Method::Rk45 { rtol, atol, dt_min, dt_max } => IntegratorConfig::rk45(0.0, length, rtol, atol, dt_min, dt_max),
    };
    let geodesic = dynamics::integrate(&jac, &PhaseState::new(0.0, s0.q.clone(), w0), &gcfg)?.into_result()?;
    let a: Vec<Vec<f64>> = newton.samples.iter().map(|s| s.state.q.clone()).collect();
    let b: Vec<Vec<f64>> = geodesic.samples.iter().map(|s| s.state.q.clone()).collect();
    Ok(JacobiComparison { distance: trace_distance(&a, &b, mode), length, newton, geodesic })
}

/// Composite Simpson on uniform samples with an even number of intervals,
/// trapezoid otherwise.
fn integrate_samples(t: &[f64], f: &[f64]) -> f64 {
    let n = t.len() - 1;
    let uniform = n >= 2 && {
        let h = (t[n] - t[0]) / n as f64;
        t.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
    };
    if uniform && n % 2 == 0 {
        let h = (t[n] - t[0]) / n as f64;
        let mut s = f[0] + f[n];
        for (i, fi) in f.iter().enumerate().take(n).skip(1) {
            s += if i % 2 == 1 { 4.0 * fi } else { 2.0 * fi };
        }
        return s * h / 3.0;
    }
    t.windows(2).zip(f.windows(2)).map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1])).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoetherReport {
    pub field: String,
    pub times: Vec<f64>,
    /// `I_X = g(X, v)` per sample.
    pub values: Vec<f64>,
    /// `max |I_X(t) - I_X(t0)|`.
    pub max_drift: f64,
    /// `max_drift / max(|I_X(t0)|, tiny)`.
    pub relative_drift: f64,
    /// Largest entry of `L_X g` over the samples.
    pub max_killing_residual: f64,
    /// Largest `|g(X, F)|` over the samples.
    pub max_force_pairing: f64,
}

pub fn noether_quantity(sys: &System, field: &str, traj: &Trajectory) -> Result<NoetherReport> {
    let x = sys.field(field)?;
    let mut values = Vec::with_capacity(traj.len());
    let mut killing: f64 = 0.0;
    let mut pairing: f64 = 0.0;
    for s in &traj.samples {
        let geom = PointGeometry::new(sys, &s.state.q)?;
        let xe = eval_field(sys, x, &s.state.q)?;
        values.push(geom.metric.inner(&xe.value, &s.state.v));
        killing = killing.max(max_abs(&lie_derivative_metric_parts(&geom, &xe)));
        let f = force_at(sys, &geom.metric, &s.state)?;
        pairing = pairing.max(geom.metric.inner(&xe.value, &f).abs());
    }
    let i0 = values.first().copied().unwrap_or(0.0);
    let max_drift = values.iter().map(|v| (v - i0).abs()).fold(0.0, f64::max);
    Ok(NoetherReport {
        field: field.to_string(),
        times: traj.times(),
        relative_drift: max_drift / i0.abs().max(f64::MIN_POSITIVE),
        values,
        max_drift,
        max_killing_residual: killing,
        max_force_pairing: pairing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerFluidReport {
    /// HJ audit with `F = -grad p`.
    pub hj: HjReport,
    /// Riemannian divergence of X per grid point.
    pub divergence: Vec<f64>,
    pub max_divergence: f64,
}

/// Stationary incompressible Euler flow check: the pressure is the system's
/// potential, so the HJ residual is `nabla_X X + grad p`.
pub fn stationary_euler_example(sys: &System, field: &str, grid: &Grid, mode: ExecMode) -> Result<EulerFluidReport> {
    if sys.potential().is_none() {
        return Err(Error::InvalidSystem("the pressure must be declared as the potential".into()));
    }
    let hj = hj_energy_check(sys, field, grid, mode)?;
    let x = sys.field(field)?;
    let qs: Vec<Vec<f64>> = hj.points.iter().map(|p| p.q.clone()).collect();
    let divergence = parallel::map(&qs, mode, |q| -> Result<f64> {
        let geom = PointGeometry::new(sys, q)?;
        Ok(divergence_parts(&geom, &eval_field(sys, x, q)?))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let max_divergence = divergence.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(EulerFluidReport { hj, divergence, max_divergence })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientSign {
    /// `X = -grad S`.
    #[default]
    Minus,
    /// `X = grad S`.
    Plus,
}

impl GradientSign {
    pub fn factor(self) -> f64 {
        match self {
            GradientSign::Minus => -1.0,
            GradientSign::Plus => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchrodingerPoint {
    pub q: Vec<f64>,
    /// `E(X) - E0` with `X = sign * grad S`.
    pub energy_residual: f64,
    pub laplacian: f64,
    /// Real part of `(-Delta/2 + V - E0) Psi / Psi` for `Psi = exp(iS)`.
    pub wave_re: f64,
    /// Imaginary part of the same quotient.
    pub wave_im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchrodingerReport {
    pub scalar: String,
    pub e0: f64,
    pub sign: GradientSign,
    pub points: Vec<SchrodingerPoint>,
    /// (i) `max |E o X - E0|`.
    pub hj: f64,
    /// (ii) `max |Delta S|`.
    pub harmonic: f64,
    /// (iii) `max max(|Re|, |Im|)`.
    pub schrodinger: f64,
}

impl SchrodingerReport {
    /// Which of (i), (ii), (iii) exceed `tol`.
    pub fn violated(&self, tol: f64) -> [bool; 3] {
        [self.hj > tol, self.harmonic > tol, self.schrodinger > tol]
    }
}

pub fn schrodinger_triple_check(
    sys: &System,
    scalar: &str,
    e0: f64,
    points: &[Vec<f64>],
    sign: GradientSign,
    mode: ExecMode,
) -> Result<SchrodingerReport> {
    let s = sys.scalar(scalar)?;
    if points.is_empty() {
        return Err(Error::Config("no sample points".into()));
    }
    let n = sys.dim();
    let per = parallel::map(points, mode, |q| -> Result<SchrodingerPoint> {
        if q.len() != n {
            return Err(Error::Config(format!("sample point has {} coordinates", q.len())));
        }
        let geom = PointGeometry::new(sys, q)?;
        let seeds: Vec<usize> = (0..n).collect();
        let ds = eval_dual1(s, &sys.position_values(q), &seeds).map_err(|e| Error::eval("scalar field", e))?;
        let grad = geom.metric.raise(&(0..n).map(|i| ds.d(i)).collect::<Vec<_>>());
        let x: Vec<f64> = grad.iter().map(|g| sign.factor() * g).collect();
        let v = potential_q(sys, q)?;
        let kinetic = 0.5 * geom.metric.inner(&x, &x);
        let laplacian = laplace_beltrami_at(sys, &geom, s)?;
        // Delta exp(iS) = (i Delta S - g(grad S, grad S)) exp(iS)
        let g2 = geom.metric.inner(&grad, &grad);
        Ok(SchrodingerPoint {
            q: q.clone(),
            energy_residual: kinetic + v - e0,
            laplacian,
            wave_re: 0.5 * g2 + v - e0,
            wave_im: -0.5 * laplacian,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let fold = |f: &dyn Fn(&SchrodingerPoint) -> f64| per.iter().map(f).fold(0.0, f64::max);
    Ok(SchrodingerReport {
        scalar: scalar.to_string(),
        e0,
        sign,
        hj: fold(&|p| p.energy_residual.abs()),
        harmonic: fold(&|p| p.laplacian.abs()),
        schrodinger: fold(&|p| p.wave_re.abs().max(p.wave_im.abs())),
        points: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(potential: Option<&str>, fields: &[(&str, &str, &str)]) -> System {
        let mut b = System::builder("plane", &["x", "y"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "1").unwrap();
        if let Some(p) = potential {
            b.potential(p).unwrap();
        }
        for (name, fx, fy) in fields {
            b.field(name, 0, fx).unwrap().field(name, 1, fy).unwrap();
        }
        b.build().unwrap()
    }

    fn freefall() -> System {
        plane(Some("9.8*y"), &[("X", "0", "-sqrt(2*9.8*(1 - y))")])
    }

    fn y_grid(count: usize) -> Grid {
        Grid::new(vec![GridAxis { coord: 1, lo: -1.0, hi: 0.9, count }], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn hj_residual_examples() {
        let sys = plane(None, &[("C", "1.5", "-2"), ("S", "x", "0")]);
        assert_eq!(hj_residual(&sys, "C", &[0.3, 0.4]).unwrap().components, vec![0.0, 0.0]);
        assert_eq!(hj_residual(&sys, "S", &[2.0, 0.0]).unwrap().components, vec![2.0, 0.0]);
        let r = hj_residual(&freefall(), "X", &[0.0, -0.3]).unwrap();
        assert!(r.components.iter().all(|c| c.abs() <= 1e-10));
    }

    #[test]
    fn closedness_examples() {
        let sys = plane(None, &[("rot", "-y", "x"), ("C", "1", "2"), ("G", "2*x*y", "x^2")]);
        let m = closedness_residual(&sys, "rot", &[0.2, 0.7]).unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(1, 0)], -2.0);
        assert_eq!(max_abs(&closedness_residual(&sys, "C", &[0.2, 0.7]).unwrap()), 0.0);
        assert!(max_abs(&closedness_residual(&sys, "G", &[0.2, 0.7]).unwrap()) <= 1e-10);
    }

    #[test]
    fn hj_energy_examples() {
        let rep = hj_energy_check(&freefall(), "X", &y_grid(20), ExecMode::Parallel).unwrap();
        assert_eq!(rep.points.len(), 20);
        assert!(rep.max_residual <= 1e-10 && rep.max_closedness <= 1e-10);
        assert!(rep.energy_deviation <= 1e-10);
        assert!((rep.energy_mean - 9.8).abs() <= 1e-10);
        assert_eq!(rep.equivalence_holds, Some(true));

        let sys = plane(Some("0"), &[("C", "1", "2")]);
        let grid = Grid::new(
            vec![GridAxis { coord: 0, lo: -1.0, hi: 1.0, count: 5 }, GridAxis { coord: 1, lo: 0.0, hi: 1.0, count: 3 }],
            vec![0.0, 0.0],
        )
        .unwrap();
        let rep = hj_energy_check(&sys, "C", &grid, ExecMode::Sequential).unwrap();
        assert_eq!(rep.points.len(), 15);
        assert_eq!(rep.energy_deviation, 0.0);

        let sys = plane(Some("0"), &[("S", "x", "0")]);
        let grid = Grid::new(vec![GridAxis { coord: 0, lo: 0.5, hi: 2.0, count: 7 }], vec![0.0, 0.0]).unwrap();
        let rep = hj_energy_check(&sys, "S", &grid, ExecMode::Sequential).unwrap();
        assert!(rep.closed && !rep.hj_satisfied && !rep.energy_constant);
        assert_eq!(rep.equivalence_holds, Some(true));
    }

    #[test]
    fn modes_give_identical_reports() {
        let a = hj_energy_check(&freefall(), "X", &y_grid(50), ExecMode::Sequential).unwrap();
        let b = hj_energy_check(&freefall(), "X", &y_grid(50), ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn integral_curve_is_a_trajectory() {
        let r = integral_curve_residual(&freefall(), "X", &[0.0, 0.9], 0.5, 1e-3).unwrap();
        assert!(r <= 1e-6, "{r}");
    }

    #[test]
    fn jacobi_metric_examples() {
        let sys = plane(Some("0"), &[]);
        let j = jacobi_metric(&sys, 2.0).unwrap();
        assert_eq!(crate::geometry::metric_at(&j, &[0.3, 0.1]).unwrap(), DMatrix::identity(2, 2) * 2.0);

        let osc = plane(Some("0.5*(x^2 + y^2)"), &[]);
        let j = jacobi_metric(&osc, 1.0).unwrap();
        let g = crate::geometry::metric_at(&j, &[1.0, 0.0]).unwrap();
        assert_eq!(g[(0, 0)], 0.5);
        assert!(matches!(crate::geometry::metric_at(&j, &[2.0, 0.0]), Err(Error::JacobiFactor { .. })));
    }

    #[test]
    fn jacobi_compare_free_particle() {
        let sys = plane(Some("0"), &[]);
        let s0 = PhaseState::new(0.0, vec![0.0, 0.0], vec![1.0, 0.5]);
        let e0 = 0.5 * 1.25;
        let cmp = jacobi_compare(&sys, e0, &s0, &IntegratorConfig::rk4(0.0, 2.0, 1e-2), ExecMode::Parallel).unwrap();
        assert!(cmp.distance.max <= 1e-9, "{:?}", cmp.distance);
        assert!(jacobi_compare(&sys, e0 + 1e-6, &s0, &IntegratorConfig::rk4(0.0, 2.0, 1e-2), ExecMode::Parallel).is_err());
    }

    #[test]
    fn jacobi_compare_oscillator_line() {
        // Stop short of the turning point, where the Jacobi metric degenerates.
        let mut b = System::builder("osc", &["q"]).unwrap();
        b.metric(0, 0, "1").unwrap().potential("0.5*q^2").unwrap();
        let sys = b.build().unwrap();
        let s0 = PhaseState::new(0.0, vec![0.0], vec![1.0]);
        let cmp = jacobi_compare(&sys, 0.5, &s0, &IntegratorConfig::rk4(0.0, 1.4, 1e-3), ExecMode::Parallel).unwrap();
        assert!(cmp.distance.max <= 1e-4, "{:?}", cmp.distance);
    }

    #[test]
    fn trace_distance_basics() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        let d = trace_distance(&a, &b, ExecMode::Sequential);
        assert_eq!((d.forward, d.backward, d.max), (1.0, 1.0, 1.0));
        assert_eq!(trace_distance(&a, &a, ExecMode::Sequential).max, 0.0);
    }

    #[test]
    fn noether_examples() {
        let cfg = IntegratorConfig::rk4(0.0, 10.0, 1e-3);
        let sys = plane(None, &[("T", "1", "0")]);
        let tr = dynamics::integrate(&sys, &PhaseState::new(0.0, vec![0.0, 0.0], vec![0.7, -0.2]), &cfg).unwrap();
        let rep = noether_quantity(&sys, "T", &tr).unwrap();
        assert_eq!(rep.max_drift, 0.0);

        let s0 = PhaseState::new(0.0, vec![1.0, 0.0], vec![0.0, 0.5]);
        let central = plane(Some("0.5*(x^2 + y^2)"), &[("rot", "-y", "x")]);
        let tr = dynamics::integrate(&central, &s0, &cfg).unwrap();
        let rep = noether_quantity(&central, "rot", &tr).unwrap();
        assert!(rep.relative_drift <= 1e-6, "{}", rep.relative_drift);
        assert_eq!(rep.max_killing_residual, 0.0);
        assert!(rep.max_force_pairing <= 1e-12);

        let broken = plane(Some("9.8*y"), &[("rot", "-y", "x")]);
        let tr = dynamics::integrate(&broken, &s0, &cfg).unwrap();
        assert!(noether_quantity(&broken, "rot", &tr).unwrap().max_drift > 1e-2);
    }

    #[test]
    fn euler_fluid_examples() {
        let grid = Grid::new(
            vec![GridAxis { coord: 0, lo: -1.0, hi: 1.0, count: 5 }, GridAxis { coord: 1, lo: -1.0, hi: 1.0, count: 5 }],
            vec![0.0, 0.0],
        )
        .unwrap();
        let w = 1.3;
        let rigid = plane(
            Some(&format!("0.5*{w}^2*(x^2 + y^2)")),
            &[("X", &format!("-{w}*y"), &format!("{w}*x"))],
        );
        let rep = stationary_euler_example(&rigid, "X", &grid, ExecMode::Parallel).unwrap();
        assert!(rep.hj.max_residual <= 1e-10 && rep.max_divergence <= 1e-12);

        let still = plane(Some("4"), &[("X", "1", "2")]);
        let rep = stationary_euler_example(&still, "X", &grid, ExecMode::Parallel).unwrap();
        assert_eq!((rep.hj.max_residual, rep.max_divergence), (0.0, 0.0));

        let strain = plane(Some("0.5*(x^2 + y^2)"), &[("X", "x", "-y")]);
        let rep = stationary_euler_example(&strain, "X", &grid, ExecMode::Parallel).unwrap();
        assert!(rep.hj.max_residual > 1.0);
        assert_eq!(rep.max_divergence, 0.0);
    }

    #[test]
    fn schrodinger_examples() {
        let line = |pot: &str, s: &str| {
            let mut b = System::builder("line", &["x"]).unwrap();
            b.metric(0, 0, "1").unwrap().potential(pot).unwrap().scalar("S", s).unwrap();
            b.build().unwrap()
        };
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
        let rep = schrodinger_triple_check(&line("0", "2*x"), "S", 2.0, &pts, GradientSign::Minus, ExecMode::Parallel).unwrap();
        assert!(rep.hj <= 1e-12 && rep.harmonic <= 1e-12 && rep.schrodinger <= 1e-12);

        let rep = schrodinger_triple_check(&line("3", "5"), "S", 3.0, &pts, GradientSign::Minus, ExecMode::Parallel).unwrap();
        assert_eq!((rep.hj, rep.harmonic, rep.schrodinger), (0.0, 0.0, 0.0));

        let rep = schrodinger_triple_check(&line("0", "x^2"), "S", 2.0, &[vec![1.0], vec![-1.0]], GradientSign::Minus, ExecMode::Parallel)
            .unwrap();
        assert_eq!(rep.violated(1e-12), [false, true, true]);
        assert_eq!(rep.harmonic, 2.0);
    }
}
