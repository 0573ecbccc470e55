//! Unconstrained Newton dynamics `nabla_v v = F`: right-hand side, integration,
//! energies, momenta and residual audits of stored trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{Covector, MetricEval, PointGeometry};
use crate::integrator::{self, IntegratorConfig, OdeSolution};
use crate::parallel::{self, ExecMode};
use crate::system::{eval_dual1, System};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(t: f64, q: Vec<f64>, v: Vec<f64>) -> Self {
        PhaseState { t, q, v }
    }

    pub(crate) fn pack(&self) -> Vec<f64> {
        let mut y = self.q.clone();
        y.extend_from_slice(&self.v);
        y
    }

    pub(crate) fn unpack(t: f64, y: &[f64]) -> Self {
        let n = y.len() / 2;
        PhaseState { t, q: y[..n].to_vec(), v: y[n..].to_vec() }
    }

    pub fn check_dim(&self, sys: &System) -> Result<()> {
        if self.q.len() != sys.dim() || self.v.len() != sys.dim() {
            return Err(Error::InvalidState(format!(
                "state has {} positions and {} velocities, system dimension is {}",
                self.q.len(),
                self.v.len(),
                sys.dim()
            )));
        }
        if !(self.t.is_finite() && self.q.iter().chain(&self.v).all(|x| x.is_finite())) {
            return Err(Error::InvalidState("state contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintClass {
    None,
    Holonomic,
    Nonholonomic,
}

/// One trajectory sample with its diagnostics. Constraint vectors are empty
/// for unconstrained runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: PhaseState,
    pub kinetic: f64,
    /// `K + V` when the system has a potential, otherwise `K`.
    pub energy: f64,
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Constraint force `R`, contravariant components.
    pub constraint_force: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub system: String,
    pub coords: Vec<String>,
    pub constraint_class: ConstraintClass,
    pub constraint_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub method: String,
    /// Uniform step of fixed-step runs.
    pub step: Option<f64>,
    /// False when `energy` is only the kinetic energy.
    pub potential_included: bool,
    /// Set when integration stopped early; samples run up to the failure.
    pub error: Option<Error>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.t).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    /// Turn an early stop into an error.
    pub fn into_result(self) -> Result<Trajectory> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Constraint data attached to a sample: `(phi, lambda, R)`.
pub(crate) type ConstraintDiag = (Vec<f64>, Vec<f64>, Vec<f64>);

pub(crate) fn assemble(
    sys: &System,
    cfg: &IntegratorConfig,
    class: ConstraintClass,
    names: Vec<String>,
    sol: OdeSolution,
    diag: &dyn Fn(&PhaseState) -> Result<ConstraintDiag>,
) -> Trajectory {
    let mut traj = Trajectory {
        system: sys.name().to_string(),
        coords: sys.coords().to_vec(),
        constraint_class: class,
        constraint_names: names,
        samples: Vec::with_capacity(sol.times.len()),
        method: cfg.method.name().to_string(),
        step: sol.step,
        potential_included: sys.potential().is_some(),
        error: sol.error,
    };
    for (t, y) in sol.times.into_iter().zip(sol.states) {
        let state = PhaseState::unpack(t, &y);
        let sample = (|| -> Result<Sample> {
            let kinetic = kinetic_energy(sys, &state)?;
            let energy = kinetic + potential_energy(sys, &state)?.unwrap_or(0.0);
            let (phi, lambda, constraint_force) = diag(&state)?;
            Ok(Sample { state, kinetic, energy, phi, lambda, constraint_force })
        })();
        match sample {
            Ok(s) => traj.samples.push(s),
            Err(e) => {
                traj.error = Some(e);
                break;
            }
        }
    }
    traj
}

fn grad_phase(expr: &Expression, values: &[f64], ids: &[usize], what: &str) -> Result<Vec<f64>> {
    let d = eval_dual1(expr, values, ids).map_err(|e| Error::eval(what, e))?;
    Ok((0..ids.len()).map(|i| d.d(i)).collect())
}

pub(crate) fn q_ids(sys: &System) -> Vec<usize> {
    (0..sys.dim()).map(|i| sys.q_id(i)).collect()
}

pub(crate) fn v_ids(sys: &System) -> Vec<usize> {
    (0..sys.dim()).map(|i| sys.v_id(i)).collect()
}

fn eval_components(exprs: &[Expression], values: &[f64], what: &str) -> Result<Vec<f64>> {
    exprs
        .iter()
        .enumerate()
        .map(|(i, e)| e.eval::<f64>(values).map_err(|err| Error::eval(format!("{what}[{}]", i + 1), err)))
        .collect()
}

/// Contravariant total force `-grad V + F` (or `-grad V + sharp(omega)`).
pub fn force_at(sys: &System, metric: &MetricEval, s: &PhaseState) -> Result<Vec<f64>> {
    let n = sys.dim();
    let values = sys.values(s.t, &s.q, &s.v);
    let mut covector = vec![0.0; n];
    let mut any_covector = false;
    if let Some(v) = sys.potential() {
        let dv = grad_phase(v, &values, &q_ids(sys), "potential")?;
        for (c, d) in covector.iter_mut().zip(dv) {
            *c -= d;
        }
        any_covector = true;
    }
    if let Some(w) = sys.work_form() {
        for (c, x) in covector.iter_mut().zip(eval_components(w, &values, "workform")?) {
            *c += x;
        }
        any_covector = true;
    }
    let mut f = if any_covector { metric.raise(&covector) } else { vec![0.0; n] };
    if let Some(force) = sys.force() {
        for (a, b) in f.iter_mut().zip(eval_components(force, &values, "force")?) {
            *a += b;
        }
    }
    Ok(f)
}

/// Covariant total force `omega = flat(F_total)`.
pub fn work_covector(sys: &System, metric: &MetricEval, s: &PhaseState) -> Result<Vec<f64>> {
    let n = sys.dim();
    let values = sys.values(s.t, &s.q, &s.v);
    let mut w = vec![0.0; n];
    if let Some(v) = sys.potential() {
        for (c, d) in w.iter_mut().zip(grad_phase(v, &values, &q_ids(sys), "potential")?) {
            *c -= d;
        }
    }
    if let Some(wf) = sys.work_form() {
        for (c, x) in w.iter_mut().zip(eval_components(wf, &values, "workform")?) {
            *c += x;
        }
    }
    if let Some(force) = sys.force() {
        let lowered = metric.lower(&eval_components(force, &values, "force")?);
        for (c, x) in w.iter_mut().zip(lowered) {
            *c += x;
        }
    }
    Ok(w)
}

/// Unconstrained acceleration `F - Gamma(v, v)` at a state, from evaluated geometry.
pub(crate) fn free_acceleration(sys: &System, geom: &PointGeometry, s: &PhaseState) -> Result<Vec<f64>> {
    let f = force_at(sys, &geom.metric, s)?;
    let gvv = geom.christoffel.contract(&s.v, &s.v);
    Ok(f.iter().zip(gvv).map(|(a, b)| a - b).collect())
}

/// `(dq, dv) = (v, F - Gamma^k_ij v^i v^j)`.
pub fn newton_rhs(sys: &System, s: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
    s.check_dim(sys)?;
    let geom = PointGeometry::new(sys, &s.q)?;
    Ok((s.v.clone(), free_acceleration(sys, &geom, s)?))
}

pub(crate) fn pack_rhs(v: &[f64], a: Vec<f64>) -> Vec<f64> {
    let mut out = v.to_vec();
    out.extend(a);
    out
}

fn no_constraints(_: &PhaseState) -> Result<ConstraintDiag> {
    Ok((Vec::new(), Vec::new(), Vec::new()))
}

/// Integrate the unconstrained Newton equation. Constraints declared on the
/// system are ignored here; see the holonomic and nonholonomic integrators.
pub fn integrate(sys: &System, s0: &PhaseState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    integrate_segments(sys, s0, cfg, &[cfg.t0, cfg.t1], &|_, _| Ok(None))
}

pub(crate) type ExtraForce<'a> = dyn Fn(usize, &PhaseState) -> Result<Option<Vec<f64>>> + 'a;

/// Unconstrained integration with an optional additional contravariant force
/// per segment.
pub(crate) fn integrate_segments(
    sys: &System,
    s0: &PhaseState,
    cfg: &IntegratorConfig,
    breaks: &[f64],
    extra: &ExtraForce<'_>,
) -> Result<Trajectory> {
    s0.check_dim(sys)?;
    cfg.validate()?;
    if s0.t != cfg.t0 {
        return Err(Error::Config(format!("initial state time {} differs from t0 = {}", s0.t, cfg.t0)));
    }
    let rhs = |seg: usize, t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let s = PhaseState::unpack(t, y);
        let geom = PointGeometry::new(sys, &s.q)?;
        let mut a = free_acceleration(sys, &geom, &s)?;
        if let Some(u) = extra(seg, &s)? {
            for (ai, ui) in a.iter_mut().zip(u) {
                *ai += ui;
            }
        }
        Ok(pack_rhs(&s.v, a))
    };
    let sol = integrator::solve(cfg, &s0.pack(), breaks, &rhs)?;
    Ok(assemble(sys, cfg, ConstraintClass::None, Vec::new(), sol, &no_constraints))
}

/// Integrate many initial states; results keep input order.
pub fn integrate_many(
    sys: &System,
    states: &[PhaseState],
    cfg: &IntegratorConfig,
    mode: ExecMode,
) -> Vec<Result<Trajectory>> {
    parallel::map(states, mode, |s| integrate(sys, s, cfg))
}

pub fn kinetic_energy(sys: &System, s: &PhaseState) -> Result<f64> {
    let m = MetricEval::new(sys, &s.q)?;
    Ok(0.5 * m.inner(&s.v, &s.v))
}

/// `V(t, q)`, if a potential is declared.
pub fn potential_energy(sys: &System, s: &PhaseState) -> Result<Option<f64>> {
    match sys.potential() {
        None => Ok(None),
        Some(v) => Ok(Some(v.eval::<f64>(&sys.values(s.t, &s.q, &s.v)).map_err(|e| Error::eval("potential", e))?)),
    }
}

/// Energy summary; `potential` is `None` when no potential is declared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: Option<f64>,
}

impl Energy {
    /// `K + V`, or `K` without a potential.
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential.unwrap_or(0.0)
    }

    /// `K - V`, or `K` without a potential.
    pub fn lagrangian(&self) -> f64 {
        self.kinetic - self.potential.unwrap_or(0.0)
    }
}

pub fn energy(sys: &System, s: &PhaseState) -> Result<Energy> {
    Ok(Energy { kinetic: kinetic_energy(sys, s)?, potential: potential_energy(sys, s)? })
}

pub fn total_energy(sys: &System, s: &PhaseState) -> Result<f64> {
    Ok(energy(sys, s)?.total())
}

pub fn lagrangian(sys: &System, s: &PhaseState) -> Result<f64> {
    Ok(energy(sys, s)?.lagrangian())
}

/// `i(v) g`, the flat of the velocity.
pub fn linear_momentum(sys: &System, s: &PhaseState) -> Result<Covector> {
    let m = MetricEval::new(sys, &s.q)?;
    Ok(Covector { at: s.q.clone(), components: m.lower(&s.v) })
}

/// Residual of the dual form `nabla_v (i(v) g) = omega` at a state, with the
/// acceleration taken from the primal equation.
pub fn dual_form_residual(sys: &System, s: &PhaseState) -> Result<Vec<f64>> {
    s.check_dim(sys)?;
    let n = sys.dim();
    let geom = PointGeometry::new(sys, &s.q)?;
    let a = free_acceleration(sys, &geom, s)?;
    let p = geom.metric.lower(&s.v);
    let omega = work_covector(sys, &geom.metric, s)?;
    let ga = geom.metric.lower(&a);
    Ok((0..n)
        .map(|j| {
            // d/dt p_j = (d_l g_jk) v^l v^k + g_jk a^k
            let mut dp = ga[j];
            for l in 0..n {
                for k in 0..n {
                    dp += geom.dg[l][(j, k)] * s.v[l] * s.v[k];
                }
            }
            let mut conn = 0.0;
            for i in 0..n {
                for k in 0..n {
                    conn += geom.christoffel.get(k, i, j) * s.v[i] * p[k];
                }
            }
            dp - conn - omega[j]
        })
        .collect())
}

/// Covectors `d phi_alpha` (holonomic) or `d^V phi^alpha` (nonholonomic) at a state.
pub(crate) fn constraint_covectors(sys: &System, class: ConstraintClass, s: &PhaseState) -> Result<Vec<Vec<f64>>> {
    let values = sys.values(s.t, &s.q, &s.v);
    match class {
        ConstraintClass::None => Ok(Vec::new()),
        ConstraintClass::Holonomic => {
            let ids = q_ids(sys);
            sys.holonomic()
                .iter()
                .map(|c| grad_phase(&c.expr, &values, &ids, &format!("holonomic {}", c.name)))
                .collect()
        }
        ConstraintClass::Nonholonomic => {
            let ids = v_ids(sys);
            sys.nonholonomic()
                .iter()
                .map(|c| grad_phase(&c.expr, &values, &ids, &format!("nonholonomic {}", c.name)))
                .collect()
        }
    }
}

/// Residual of a trajectory sample at an interior time.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResidual {
    pub t: f64,
    pub residual: Vec<f64>,
}

impl SampleResidual {
    pub fn max_abs(items: &[SampleResidual]) -> f64 {
        items.iter().flat_map(|r| r.residual.iter()).fold(0.0, |a, &b| a.max(b.abs()))
    }
}

fn central(prev: &Sample, next: &Sample, f: impl Fn(&Sample) -> f64) -> f64 {
    (f(next) - f(prev)) / (next.state.t - prev.state.t)
}

fn require_samples(traj: &Trajectory) -> Result<()> {
    if traj.samples.len() < 3 {
        return Err(Error::InvalidState(format!(
            "residual checks need at least 3 samples, trajectory has {}",
            traj.samples.len()
        )));
    }
    Ok(())
}

/// `d/dt(dK/dv^j) - dK/dq^j - omega_j - lambda_a * C^a_j` at interior samples,
/// where `C` are the constraint covectors matching the trajectory's
/// constraint class. The time derivative is a central difference.
pub fn euler_lagrange_residual(sys: &System, traj: &Trajectory) -> Result<Vec<SampleResidual>> {
    require_samples(traj)?;
    let n = sys.dim();
    let momenta: Vec<Vec<f64>> = traj
        .samples
        .iter()
        .map(|s| linear_momentum(sys, &s.state).map(|p| p.components))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(traj.samples.len() - 2);
    for i in 1..traj.samples.len() - 1 {
        let s = &traj.samples[i];
        let dt = traj.samples[i + 1].state.t - traj.samples[i - 1].state.t;
        let geom = PointGeometry::new(sys, &s.state.q)?;
        let omega = work_covector(sys, &geom.metric, &s.state)?;
        let covs = constraint_covectors(sys, traj.constraint_class, &s.state)?;
        let v = &s.state.v;
        let residual = (0..n)
            .map(|j| {
                let dp = (momenta[i + 1][j] - momenta[i - 1][j]) / dt;
                let mut dkdq = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        dkdq += 0.5 * geom.dg[j][(a, b)] * v[a] * v[b];
                    }
                }
                let mult: f64 = covs.iter().zip(&s.lambda).map(|(c, l)| l * c[j]).sum();
                dp - dkdq - omega[j] - mult
            })
            .collect();
        out.push(SampleResidual { t: s.state.t, residual });
    }
    Ok(out)
}

/// `dE/dt + dL/dt|explicit` at interior samples; `dE/dt` by central
/// differences of the stored energies, the explicit time derivative by AD.
pub fn energy_drift_check(sys: &System, traj: &Trajectory) -> Result<Vec<SampleResidual>> {
    require_samples(traj)?;
    let mut out = Vec::with_capacity(traj.samples.len() - 2);
    for i in 1..traj.samples.len() - 1 {
        let s = &traj.samples[i];
        let de = central(&traj.samples[i - 1], &traj.samples[i + 1], |x| x.energy);
        // L = K - V and K does not depend on t explicitly.
        let dl_dt = match sys.potential() {
            None => 0.0,
            Some(v) => {
                let values = sys.values(s.state.t, &s.state.q, &s.state.v);
                -grad_phase(v, &values, &[sys.t_id()], "potential")?[0]
            }
        };
        out.push(SampleResidual { t: s.state.t, residual: vec![de + dl_dt] });
    }
    Ok(out)
}
