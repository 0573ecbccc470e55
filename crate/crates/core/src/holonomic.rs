//! Motion on a configuration submanifold `S = {phi_a(q) = 0}` under
//! d'Alembert constraint forces `R = sum_a lambda_a sharp(d phi_a)`.
//!
//! Integration happens in the ambient chart; the multipliers come from
//! requiring `phi_a(q(t))` to have zero second derivative, with Baumgarte
//! feedback `-2 a dphi(v) - b^2 phi` against numerical drift.
//!
//! The multipliers give `R(q, v)` pointwise on `TS`. This is a numerical
//! device: physically the reaction is only determined along actual motions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, assemble, free_acceleration, pack_rhs, ConstraintClass, PhaseState, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{solve_spd, MetricEval, PointGeometry, TangentVector};
use crate::integrator::{self, IntegratorConfig};
use crate::system::{eval_dual1, eval_dual2, System};

/// Initial states closer than this to `S` are accepted as they are.
pub const EXACT_TOL: f64 = 1e-10;
/// Default bound below which initial states are projected onto `S`.
pub const DEFAULT_PROJECT_TOL: f64 = 1e-6;
/// Gram-Schmidt discards vectors whose g-norm falls below this.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baumgarte {
    pub a: f64,
    pub b: f64,
}

impl Default for Baumgarte {
    fn default() -> Self {
        Baumgarte { a: 5.0, b: 5.0 }
    }
}

impl Baumgarte {
    pub const OFF: Baumgarte = Baumgarte { a: 0.0, b: 0.0 };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolonomicOptions {
    pub stabilization: Baumgarte,
    pub project_tol: f64,
}

impl Default for HolonomicOptions {
    fn default() -> Self {
        HolonomicOptions { stabilization: Baumgarte::default(), project_tol: DEFAULT_PROJECT_TOL }
    }
}

/// Values, differentials and Hessians of every holonomic constraint at `q`.
pub(crate) struct ConstraintJets {
    pub value: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
    pub hess: Vec<DMatrix<f64>>,
}

fn eval_constraints(sys: &System, q: &[f64], hessians: bool) -> Result<ConstraintJets> {
    let n = sys.dim();
    let values = sys.position_values(q);
    let seeds: Vec<usize> = (0..n).collect();
    let mut out = ConstraintJets { value: Vec::new(), grad: Vec::new(), hess: Vec::new() };
    for c in sys.holonomic() {
        let ctx = || format!("holonomic {}", c.name);
        if hessians {
            let d = eval_dual2(&c.expr, &values, &seeds).map_err(|e| Error::eval(ctx(), e))?;
            out.value.push(d.value);
            out.grad.push((0..n).map(|i| d.d(i)).collect());
            out.hess.push(DMatrix::from_fn(n, n, |i, j| d.second(i, j)));
        } else {
            let d = eval_dual1(&c.expr, &values, &seeds).map_err(|e| Error::eval(ctx(), e))?;
            out.value.push(d.value);
            out.grad.push((0..n).map(|i| d.d(i)).collect());
        }
    }
    Ok(out)
}

/// Orthogonal splitting `T_qQ = T_qS + (T_qS)^perp` with respect to g.
#[derive(Clone, Debug)]
pub struct Projector {
    pub at: Vec<f64>,
    /// Onto `T_qS`.
    pub tangent: DMatrix<f64>,
    /// Onto the g-orthogonal complement.
    pub normal: DMatrix<f64>,
    /// g-orthonormal basis of the complement (Gram-Schmidt of `sharp d phi_a`).
    pub normal_basis: Vec<Vec<f64>>,
    /// g-orthonormal basis of `T_qS`.
    pub tangent_basis: Vec<Vec<f64>>,
}

impl Projector {
    pub fn apply_tangent(&self, u: &[f64]) -> Vec<f64> {
        mat_vec(&self.tangent, u)
    }

    pub fn apply_normal(&self, u: &[f64]) -> Vec<f64> {
        mat_vec(&self.normal, u)
    }
}

fn mat_vec(m: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * u[j]).sum()).collect()
}

/// g-orthonormalize `vectors` in order. Returns `None` as soon as one of
/// them is (numerically) dependent on its predecessors.
pub(crate) fn gram_schmidt(metric: &MetricEval, vectors: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let w = orthogonalize(metric, &basis, v);
        let norm = metric.norm(&w);
        if !(norm > RANK_TOL) {
            return None;
        }
        basis.push(w.into_iter().map(|x| x / norm).collect());
    }
    Some(basis)
}

fn orthogonalize(metric: &MetricEval, basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut w = v.to_vec();
    // Two passes keep the result orthogonal to working precision.
    for _ in 0..2 {
        for e in basis {
            let c = metric.inner(e, &w);
            for (wi, ei) in w.iter_mut().zip(e) {
                *wi -= c * ei;
            }
        }
    }
    w
}

/// Complete a g-orthonormal set to a basis of the whole space and return the
/// added vectors.
pub(crate) fn complete_basis(metric: &MetricEval, basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = metric.dim();
    let mut all = basis.to_vec();
    let mut added = Vec::new();
    // Coordinate vectors in order of decreasing remaining norm, so the choice
    // is well conditioned.
    while all.len() < n {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let w = orthogonalize(metric, &all, &e);
            let norm = metric.norm(&w);
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, w));
            }
        }
        let (norm, w) = best.expect("dimension is positive");
        let unit: Vec<f64> = w.into_iter().map(|x| x / norm).collect();
        all.push(unit.clone());
        added.push(unit);
    }
    added
}

pub(crate) fn projector_from(metric: &MetricEval, covectors: &[Vec<f64>], what: &str) -> Result<Projector> {
    let n = metric.dim();
    let q = metric.q.clone();
    let normals: Vec<Vec<f64>> = covectors.iter().map(|c| metric.raise(c)).collect();
    let normal_basis = gram_schmidt(metric, &normals)
        .ok_or_else(|| Error::RankDeficient { what: what.to_string(), at: q.clone() })?;
    let tangent_basis = complete_basis(metric, &normal_basis);
    // P_perp u = sum_a e_a g(e_a, u)
    let mut normal = DMatrix::zeros(n, n);
    for e in &normal_basis {
        let ge = metric.lower(e);
        for i in 0..n {
            for j in 0..n {
                normal[(i, j)] += e[i] * ge[j];
            }
        }
    }
    let tangent = DMatrix::identity(n, n) - &normal;
    Ok(Projector { at: q, tangent, normal, normal_basis, tangent_basis })
}

pub fn tangent_projector(sys: &System, q: &[f64]) -> Result<Projector> {
    let metric = MetricEval::new(sys, q)?;
    let c = eval_constraints(sys, q, false)?;
    projector_from(&metric, &c.grad, "holonomic constraint differentials")
}

/// `F^S = P(F)` at a state.
pub fn project_force(sys: &System, s: &PhaseState) -> Result<TangentVector> {
    s.check_dim(sys)?;
    let metric = MetricEval::new(sys, &s.q)?;
    let f = dynamics::force_at(sys, &metric, s)?;
    let c = eval_constraints(sys, &s.q, false)?;
    let p = projector_from(&metric, &c.grad, "holonomic constraint differentials")?;
    Ok(TangentVector { at: s.q.clone(), components: p.apply_tangent(&f) })
}

fn gram(metric: &MetricEval, covectors: &[Vec<f64>]) -> DMatrix<f64> {
    let h = covectors.len();
    let raised: Vec<Vec<f64>> = covectors.iter().map(|c| metric.raise(c)).collect();
    let mut a = DMatrix::zeros(h, h);
    for i in 0..h {
        for j in i..h {
            let x: f64 = covectors[i].iter().zip(&raised[j]).map(|(p, r)| p * r).sum();
            a[(i, j)] = x;
            a[(j, i)] = x;
        }
    }
    a
}

pub(crate) fn check_class(sys: &System, class: ConstraintClass) -> Result<()> {
    let mixed = match class {
        ConstraintClass::Holonomic => !sys.nonholonomic().is_empty(),
        ConstraintClass::Nonholonomic => !sys.holonomic().is_empty(),
        ConstraintClass::None => false,
    };
    if mixed {
        return Err(Error::InvalidSystem(
            "systems with both holonomic and nonholonomic constraints are not supported".into(),
        ));
    }
    Ok(())
}

struct MultiplierSolve {
    lambda: Vec<f64>,
    jets: ConstraintJets,
    free: Vec<f64>,
}

fn solve_multipliers(sys: &System, geom: &PointGeometry, s: &PhaseState, stab: Baumgarte) -> Result<MultiplierSolve> {
    let n = sys.dim();
    let jets = eval_constraints(sys, &s.q, true)?;
    let free = free_acceleration(sys, geom, s)?;
    let h = jets.value.len();
    if h == 0 {
        return Ok(MultiplierSolve { lambda: Vec::new(), jets, free });
    }
    let a = gram(&geom.metric, &jets.grad);
    let rhs: Vec<f64> = (0..h)
        .map(|k| {
            let d = &jets.grad[k];
            let hv: f64 = (0..n).map(|i| (0..n).map(|j| jets.hess[k][(i, j)] * s.v[i] * s.v[j]).sum::<f64>()).sum();
            let dfree: f64 = d.iter().zip(&free).map(|(x, y)| x * y).sum();
            let dv: f64 = d.iter().zip(&s.v).map(|(x, y)| x * y).sum();
            -hv - dfree - 2.0 * stab.a * dv - stab.b * stab.b * jets.value[k]
        })
        .collect();
    let lambda = solve_spd(&a, &rhs, "holonomic Gram matrix", &s.q)?;
    Ok(MultiplierSolve { lambda, jets, free })
}

fn combine_force(metric: &MetricEval, covectors: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    let n = metric.dim();
    let mut w = vec![0.0; n];
    for (c, l) in covectors.iter().zip(lambda) {
        for (wi, ci) in w.iter_mut().zip(c) {
            *wi += l * ci;
        }
    }
    if lambda.is_empty() {
        return w;
    }
    metric.raise(&w)
}

/// Multipliers `lambda` of the constraint force at a state, without
/// stabilization terms.
pub fn holonomic_multipliers(sys: &System, s: &PhaseState) -> Result<Vec<f64>> {
    holonomic_multipliers_with(sys, s, Baumgarte::OFF)
}

pub fn holonomic_multipliers_with(sys: &System, s: &PhaseState, stab: Baumgarte) -> Result<Vec<f64>> {
    s.check_dim(sys)?;
    let geom = PointGeometry::new(sys, &s.q)?;
    Ok(solve_multipliers(sys, &geom, s, stab)?.lambda)
}

/// `R = sum_a lambda_a sharp(d phi_a)` at `q`.
pub fn holonomic_constraint_force(sys: &System, q: &[f64], lambda: &[f64]) -> Result<TangentVector> {
    let metric = MetricEval::new(sys, q)?;
    let c = eval_constraints(sys, q, false)?;
    if lambda.len() != c.grad.len() {
        return Err(Error::InvalidState(format!(
            "{} multipliers for {} constraints",
            lambda.len(),
            c.grad.len()
        )));
    }
    Ok(TangentVector { at: q.to_vec(), components: combine_force(&metric, &c.grad, lambda) })
}

/// Largest `|phi_a(q)|` and `|d phi_a(v)|`.
pub fn constraint_violation(sys: &System, s: &PhaseState) -> Result<(f64, f64)> {
    let c = eval_constraints(sys, &s.q, false)?;
    let phi = c.value.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dphi = c
        .grad
        .iter()
        .map(|d| d.iter().zip(&s.v).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Ok((phi, dphi))
}

/// Newton iteration onto `S` along g-normal directions, then `v <- P v`.
pub fn project_state(sys: &System, s: &PhaseState) -> Result<PhaseState> {
    let mut q = s.q.clone();
    for _ in 0..50 {
        let c = eval_constraints(sys, &q, false)?;
        if c.value.iter().all(|x| x.abs() <= 1e-15) {
            break;
        }
        let metric = MetricEval::new(sys, &q)?;
        let a = gram(&metric, &c.grad);
        let mu = solve_spd(&a, &c.value, "holonomic Gram matrix", &q)?;
        let dq = combine_force(&metric, &c.grad, &mu);
        let before = c.value.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (qi, d) in q.iter_mut().zip(&dq) {
            *qi -= d;
        }
        if dq.iter().all(|d| d.abs() <= 1e-16 * (1.0 + before)) {
            break;
        }
    }
    let p = tangent_projector(sys, &q)?;
    let v = p.apply_tangent(&s.v);
    Ok(PhaseState { t: s.t, q, v })
}

/// Accept, project or reject an initial state.
pub fn prepare_initial_state(sys: &System, s0: &PhaseState, project_tol: f64) -> Result<PhaseState> {
    s0.check_dim(sys)?;
    let (phi, dphi) = constraint_violation(sys, s0)?;
    let worst = phi.max(dphi);
    if worst <= EXACT_TOL {
        return Ok(s0.clone());
    }
    if worst > project_tol {
        return Err(Error::InvalidState(format!(
            "initial state violates the holonomic constraints by {worst:e} (|phi| = {phi:e}, |dphi(v)| = {dphi:e}); \
             states within {project_tol:e} are projected"
        )));
    }
    let p = project_state(sys, s0)?;
    let (phi, dphi) = constraint_violation(sys, &p)?;
    if phi.max(dphi) > EXACT_TOL {
        return Err(Error::InvalidState(format!(
            "projection onto the constraint set did not converge (|phi| = {phi:e}, |dphi(v)| = {dphi:e})"
        )));
    }
    Ok(p)
}

/// Integrate `nabla_v v = F + R` on `S`. Each sample records `phi`, the
/// multipliers used by the dynamics and `R`.
pub fn integrate_holonomic(
    sys: &System,
    s0: &PhaseState,
    cfg: &IntegratorConfig,
    opts: &HolonomicOptions,
) -> Result<Trajectory> {
    check_class(sys, ConstraintClass::Holonomic)?;
    cfg.validate()?;
    if s0.t != cfg.t0 {
        return Err(Error::Config(format!("initial state time {} differs from t0 = {}", s0.t, cfg.t0)));
    }
    let start = prepare_initial_state(sys, s0, opts.project_tol)?;
    let stab = opts.stabilization;
    let rhs = |_: usize, t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let s = PhaseState::unpack(t, y);
        let geom = PointGeometry::new(sys, &s.q)?;
        let m = solve_multipliers(sys, &geom, &s, stab)?;
        let r = combine_force(&geom.metric, &m.jets.grad, &m.lambda);
        let a = m.free.iter().zip(r).map(|(x, y)| x + y).collect();
        Ok(pack_rhs(&s.v, a))
    };
    let diag = |s: &PhaseState| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let geom = PointGeometry::new(sys, &s.q)?;
        let m = solve_multipliers(sys, &geom, s, stab)?;
        let r = combine_force(&geom.metric, &m.jets.grad, &m.lambda);
        Ok((m.jets.value, m.lambda, r))
    };
    let sol = integrator::solve(cfg, &start.pack(), &[cfg.t0, cfg.t1], &rhs)?;
    let names = sys.holonomic().iter().map(|c| c.name.clone()).collect();
    Ok(assemble(sys, cfg, ConstraintClass::Holonomic, names, sol, &diag))
}

/// Constraint force along a trajectory, two ways.
#[derive(Clone, Debug)]
pub struct ConstraintForces {
    /// `sum lambda_a sharp(d phi_a)` per sample, from stored multipliers when
    /// present, otherwise recomputed.
    pub from_multipliers: Vec<TangentVector>,
    /// `nabla_v v - F` with the acceleration from central differences of the
    /// stored velocities; interior samples only.
    pub from_acceleration: Vec<TangentVector>,
}

impl ConstraintForces {
    /// Largest componentwise gap between the two routes at interior samples.
    pub fn max_disagreement(&self) -> f64 {
        self.from_acceleration
            .iter()
            .zip(&self.from_multipliers[1..])
            .flat_map(|(a, b)| a.components.iter().zip(&b.components).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn constraint_force_along(sys: &System, traj: &Trajectory) -> Result<ConstraintForces> {
    let mut from_multipliers = Vec::with_capacity(traj.len());
    for s in &traj.samples {
        let lambda = if s.lambda.len() == sys.holonomic().len() {
            s.lambda.clone()
        } else {
            holonomic_multipliers(sys, &s.state)?
        };
        from_multipliers.push(holonomic_constraint_force(sys, &s.state.q, &lambda)?);
    }
    let mut from_acceleration = Vec::new();
    for i in 1..traj.len().saturating_sub(1) {
        let (p, s, nx) = (&traj.samples[i - 1], &traj.samples[i], &traj.samples[i + 1]);
        let dt = nx.state.t - p.state.t;
        let geom = PointGeometry::new(sys, &s.state.q)?;
        let free = free_acceleration(sys, &geom, &s.state)?;
        let components = (0..sys.dim()).map(|k| (nx.state.v[k] - p.state.v[k]) / dt - free[k]).collect();
        from_acceleration.push(TangentVector { at: s.state.q.clone(), components });
    }
    Ok(ConstraintForces { from_multipliers, from_acceleration })
}
