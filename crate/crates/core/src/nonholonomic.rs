//! Velocity constraints `phi^a(q, v) = 0` with constraint forces in the span
//! of `sharp(d^V phi^a)`.
//!
//! For constraints nonlinear in `v` this is the Chetaev form of d'Alembert's
//! principle; vakonomic dynamics are not provided.

use serde::{Deserialize, Serialize};

use crate::dynamics::{assemble, free_acceleration, pack_rhs, ConstraintClass, PhaseState, Trajectory};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{solve_spd, Covector, MetricEval, PointGeometry, TangentVector};
use crate::holonomic::{check_class, projector_from};
use crate::integrator::{self, IntegratorConfig};
use crate::system::{eval_dual1, eval_dual2, ConstraintKind, System};

/// Initial states must satisfy every constraint to this absolute tolerance.
pub const STATE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonholonomicOptions {
    /// Feedback gain `k` in `c_a -= k phi^a`.
    pub stabilization: f64,
}

impl Default for NonholonomicOptions {
    fn default() -> Self {
        NonholonomicOptions { stabilization: 5.0 }
    }
}

/// `d^V phi = (d phi / d v^i) dq^i` at a state.
pub fn vertical_differential(sys: &System, phi: &Expression, s: &PhaseState) -> Result<Covector> {
    s.check_dim(sys)?;
    let ids: Vec<usize> = (0..sys.dim()).map(|i| sys.v_id(i)).collect();
    let d = eval_dual1(phi, &sys.values(s.t, &s.q, &s.v), &ids).map_err(|e| Error::eval("constraint", e))?;
    Ok(Covector { at: s.q.clone(), components: (0..sys.dim()).map(|i| d.d(i)).collect() })
}

/// Every constraint differentiated once in all phase variables.
struct ConstraintEval {
    value: Vec<f64>,
    /// d phi / d q
    dq: Vec<Vec<f64>>,
    /// d phi / d v
    dv: Vec<Vec<f64>>,
    /// d phi / d t
    dt: Vec<f64>,
}

fn eval_constraints(sys: &System, s: &PhaseState) -> Result<ConstraintEval> {
    let n = sys.dim();
    let values = sys.values(s.t, &s.q, &s.v);
    let seeds: Vec<usize> = (0..=2 * n).collect();
    let mut out = ConstraintEval { value: Vec::new(), dq: Vec::new(), dv: Vec::new(), dt: Vec::new() };
    for c in sys.nonholonomic() {
        let d = eval_dual1(&c.expr, &values, &seeds).map_err(|e| Error::eval(format!("nonholonomic {}", c.name), e))?;
        out.value.push(d.value);
        out.dq.push((0..n).map(|i| d.d(i)).collect());
        out.dv.push((0..n).map(|i| d.d(n + i)).collect());
        out.dt.push(d.d(2 * n));
    }
    Ok(out)
}

/// Check declared linear/affine specializations at a state: the second
/// velocity derivatives vanish, and linear constraints vanish at `v = 0`.
pub fn verify_specializations(sys: &System, s: &PhaseState) -> Result<()> {
    let n = sys.dim();
    let ids: Vec<usize> = (0..n).map(|i| sys.v_id(i)).collect();
    for c in sys.nonholonomic() {
        if c.kind == ConstraintKind::General {
            continue;
        }
        let ctx = || format!("nonholonomic {}", c.name);
        let d = eval_dual2(&c.expr, &sys.values(s.t, &s.q, &s.v), &ids).map_err(|e| Error::eval(ctx(), e))?;
        let curved = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).any(|(i, j)| d.second(i, j) != 0.0);
        let kind = if c.kind == ConstraintKind::Linear { "linear" } else { "affine" };
        if curved {
            return Err(Error::InvalidSystem(format!(
                "constraint '{}' is declared {kind} but is not linear in the velocities",
                c.name
            )));
        }
        if c.kind == ConstraintKind::Linear {
            let at_rest: f64 = c
                .expr
                .eval(&sys.values(s.t, &s.q, &vec![0.0; n]))
                .map_err(|e| Error::eval(ctx(), e))?;
            if at_rest.abs() > 1e-12 * (1.0 + d.value.abs()) {
                return Err(Error::InvalidSystem(format!(
                    "constraint '{}' is declared linear but equals {at_rest:e} at zero velocity",
                    c.name
                )));
            }
        }
    }
    Ok(())
}

/// g-orthonormal basis of the virtual velocities `{w : d^V phi^a(w) = 0}`.
pub fn virtual_velocity_basis(sys: &System, s: &PhaseState) -> Result<Vec<TangentVector>> {
    s.check_dim(sys)?;
    let metric = MetricEval::new(sys, &s.q)?;
    let c = eval_constraints(sys, s)?;
    let p = projector_from(&metric, &c.dv, "vertical differentials of the nonholonomic constraints")?;
    Ok(p.tangent_basis.into_iter().map(|components| TangentVector { at: s.q.clone(), components }).collect())
}

fn gram(metric: &MetricEval, covectors: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    let r = covectors.len();
    let raised: Vec<Vec<f64>> = covectors.iter().map(|c| metric.raise(c)).collect();
    nalgebra::DMatrix::from_fn(r, r, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        covectors[a].iter().zip(&raised[b]).map(|(x, y)| x * y).sum()
    })
}

struct Solve {
    lambda: Vec<f64>,
    eval: ConstraintEval,
    free: Vec<f64>,
}

fn solve(sys: &System, geom: &PointGeometry, s: &PhaseState, k: f64) -> Result<Solve> {
    let eval = eval_constraints(sys, s)?;
    let free = free_acceleration(sys, geom, s)?;
    let r = eval.value.len();
    let a = gram(&geom.metric, &eval.dv);
    let c: Vec<f64> = (0..r)
        .map(|al| {
            let qv: f64 = eval.dq[al].iter().zip(&s.v).map(|(x, y)| x * y).sum();
            let vf: f64 = eval.dv[al].iter().zip(&free).map(|(x, y)| x * y).sum();
            -(qv + eval.dt[al] + vf) - k * eval.value[al]
        })
        .collect();
    let lambda = solve_spd(&a, &c, "nonholonomic constraint matrix", &s.q)?;
    Ok(Solve { lambda, eval, free })
}

fn combine(metric: &MetricEval, covectors: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; metric.dim()];
    for (c, l) in covectors.iter().zip(lambda) {
        for (wi, ci) in w.iter_mut().zip(c) {
            *wi += l * ci;
        }
    }
    metric.raise(&w)
}

fn check_state(sys: &System, s: &PhaseState) -> Result<()> {
    let c = eval_constraints(sys, s)?;
    for (name, v) in sys.nonholonomic().iter().map(|c| &c.name).zip(&c.value) {
        if v.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "state violates nonholonomic constraint '{name}' by {v:e} (tolerance {STATE_TOL:e})"
            )));
        }
    }
    Ok(())
}

/// Multipliers keeping the constraints satisfied along the flow.
pub fn nonholo_multipliers(sys: &System, s: &PhaseState) -> Result<Vec<f64>> {
    s.check_dim(sys)?;
    check_state(sys, s)?;
    let geom = PointGeometry::new(sys, &s.q)?;
    Ok(solve(sys, &geom, s, 0.0)?.lambda)
}

/// `R = sum_a lambda_a sharp(d^V phi^a)`.
pub fn constraint_force(sys: &System, s: &PhaseState, lambda: &[f64]) -> Result<TangentVector> {
    s.check_dim(sys)?;
    let metric = MetricEval::new(sys, &s.q)?;
    let c = eval_constraints(sys, s)?;
    if lambda.len() != c.dv.len() {
        return Err(Error::InvalidState(format!("{} multipliers for {} constraints", lambda.len(), c.dv.len())));
    }
    Ok(TangentVector { at: s.q.clone(), components: combine(&metric, &c.dv, lambda) })
}

/// `max_a |g(R, w_a)|` over the virtual-velocity basis.
pub fn dalembert_check(sys: &System, s: &PhaseState, r: &[f64]) -> Result<f64> {
    let metric = MetricEval::new(sys, &s.q)?;
    let basis = virtual_velocity_basis(sys, s)?;
    Ok(basis.iter().map(|w| metric.inner(r, &w.components).abs()).fold(0.0, f64::max))
}

pub fn integrate_nonholonomic(
    sys: &System,
    s0: &PhaseState,
    cfg: &IntegratorConfig,
    opts: &NonholonomicOptions,
) -> Result<Trajectory> {
    check_class(sys, ConstraintClass::Nonholonomic)?;
    cfg.validate()?;
    s0.check_dim(sys)?;
    if s0.t != cfg.t0 {
        return Err(Error::Config(format!("initial state time {} differs from t0 = {}", s0.t, cfg.t0)));
    }
    check_state(sys, s0)?;
    verify_specializations(sys, s0)?;
    let k = opts.stabilization;
    let constrained = !sys.nonholonomic().is_empty();
    let rhs = |_: usize, t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let s = PhaseState::unpack(t, y);
        let geom = PointGeometry::new(sys, &s.q)?;
        if !constrained {
            return Ok(pack_rhs(&s.v, free_acceleration(sys, &geom, &s)?));
        }
        let m = solve(sys, &geom, &s, k)?;
        let r = combine(&geom.metric, &m.eval.dv, &m.lambda);
        Ok(pack_rhs(&s.v, m.free.iter().zip(r).map(|(a, b)| a + b).collect()))
    };
    let diag = |s: &PhaseState| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if !constrained {
            return Ok((Vec::new(), Vec::new(), Vec::new()));
        }
        verify_specializations(sys, s)?;
        let geom = PointGeometry::new(sys, &s.q)?;
        let m = solve(sys, &geom, s, k)?;
        let r = combine(&geom.metric, &m.eval.dv, &m.lambda);
        Ok((m.eval.value, m.lambda, r))
    };
    let sol = integrator::solve(cfg, &s0.pack(), &[cfg.t0, cfg.t1], &rhs)?;
    let names = sys.nonholonomic().iter().map(|c| c.name.clone()).collect();
    Ok(assemble(sys, cfg, ConstraintClass::Nonholonomic, names, sol, &diag))
}
