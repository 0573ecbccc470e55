//! Control-affine mechanical systems: `nabla_c' c' = F + sum_i u_i(t) F^i`.

use std::io::Read;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_segments, PhaseState, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{Expression, Jet, JetSpace, Scalar};
use crate::geometry::{covariant_derivative_field, eval_field, MetricEval, TangentVector};
use crate::integrator::IntegratorConfig;
use crate::system::System;

/// Hard cap on the number of generators in a symmetric closure.
pub const MAX_GENERATORS: usize = 256;
/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Piecewise-constant signal: `values[i]` holds on `[breakpoints[i], breakpoints[i + 1])`
/// and the last value holds forever.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Signal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Signal> {
        if breakpoints.is_empty() {
            return Err(Error::Config("signal has no breakpoints".into()));
        }
        if breakpoints.len() != values.len() {
            return Err(Error::Config("signal needs one value row per breakpoint".into()));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("signal breakpoints must be finite and strictly increasing".into()));
        }
        let k = values[0].len();
        if k == 0 {
            return Err(Error::Config("signal has no channels".into()));
        }
        for (row, t) in values.iter().zip(&breakpoints) {
            if row.len() != k {
                return Err(Error::Config(format!("signal row at t = {t} has {} channels, expected {k}", row.len())));
            }
            if row.iter().any(|u| !u.is_finite()) {
                return Err(Error::Config(format!("non-finite signal value at t = {t}")));
            }
        }
        Ok(Signal { breakpoints, values })
    }

    /// The same value on every channel from `t0` on.
    pub fn constant(t0: f64, u: Vec<f64>) -> Result<Signal> {
        Signal::new(vec![t0], vec![u])
    }

    /// Read `t,u1,...,uk` rows. A header row is skipped when its first field
    /// is not a number.
    pub fn from_csv<R: Read>(reader: R) -> Result<Signal> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("signal: {e}")))?;
            let fields: Vec<&str> = rec.iter().collect();
            if line == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            let nums = fields
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Config(format!("signal line {}: bad number {f:?}", line + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if nums.len() < 2 {
                return Err(Error::Config(format!("signal line {}: expected t,u1,...", line + 1)));
            }
            breakpoints.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        Signal::new(breakpoints, values)
    }

    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Value in force at `t`, or `None` before the first breakpoint.
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        (i > 0).then(|| self.values[i - 1].as_slice())
    }

    /// Every value lies in the box `bounds[i] = (lo, hi)`.
    pub fn check_bounds(&self, bounds: &[(f64, f64)]) -> Result<()> {
        if bounds.len() != self.channels() {
            return Err(Error::Config(format!("{} bounds for {} channels", bounds.len(), self.channels())));
        }
        for (row, t) in self.values.iter().zip(&self.breakpoints) {
            for (i, (u, (lo, hi))) in row.iter().zip(bounds).enumerate() {
                if u < lo || u > hi {
                    return Err(Error::Config(format!("u{} = {u} at t = {t} outside [{lo}, {hi}]", i + 1)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ControlSystem {
    system: System,
    inputs: Vec<String>,
    signal: Signal,
}

impl ControlSystem {
    /// Inputs are the system's control fields in declaration order.
    pub fn new(system: System, signal: Signal) -> Result<ControlSystem> {
        let inputs: Vec<String> = system.controls().iter().map(|c| c.name.clone()).collect();
        ControlSystem::with_inputs(system, inputs, signal)
    }

    pub fn with_inputs(system: System, inputs: Vec<String>, signal: Signal) -> Result<ControlSystem> {
        if inputs.is_empty() {
            return Err(Error::InvalidSystem("a control system needs at least one input field".into()));
        }
        for name in &inputs {
            system.field(name)?;
        }
        if signal.channels() != inputs.len() {
            return Err(Error::Config(format!("signal has {} channels for {} inputs", signal.channels(), inputs.len())));
        }
        Ok(ControlSystem { system, inputs, signal })
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn signal(&self) -> &Signal {
        &self.signal
    }
}

/// Newton's equation plus `sum_i u_i(t) F^i(q)`, restarting the integrator at
/// every breakpoint inside `(t0, t1)`. Constraints are ignored.
pub fn integrate_control(csys: &ControlSystem, s0: &PhaseState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let sig = &csys.signal;
    if sig.breakpoints[0] > cfg.t0 {
        return Err(Error::Config(format!(
            "signal gap: first breakpoint {} is after t0 = {}",
            sig.breakpoints[0], cfg.t0
        )));
    }
    let mut breaks = vec![cfg.t0];
    breaks.extend(sig.breakpoints.iter().copied().filter(|&b| b > cfg.t0 && b < cfg.t1));
    breaks.push(cfg.t1);
    let seg_values: Vec<&[f64]> = breaks[..breaks.len() - 1].iter().map(|&t| sig.at(t).expect("covered")).collect();
    let fields: Vec<&[Expression]> = csys.inputs.iter().map(|n| csys.system.field(n)).collect::<Result<_>>()?;
    let sys = csys.system.clone().unconstrained();
    let extra = |seg: usize, s: &PhaseState| -> Result<Option<Vec<f64>>> {
        let u = seg_values[seg];
        if u.iter().all(|&x| x == 0.0) {
            return Ok(None);
        }
        let mut acc = vec![0.0; s.q.len()];
        for (ui, f) in u.iter().zip(&fields) {
            if *ui == 0.0 {
                continue;
            }
            let fe = eval_field(&sys, f, &s.q)?;
            for (a, c) in acc.iter_mut().zip(&fe.value) {
                *a += ui * c;
            }
        }
        Ok(Some(acc))
    };
    integrate_segments(&sys, s0, cfg, &breaks, &extra)
}

/// `<<Y, Z>> = nabla_Y Z + nabla_Z Y`.
pub fn symmetric_product(sys: &System, y: &str, z: &str, q: &[f64]) -> Result<TangentVector> {
    let a = covariant_derivative_field(sys, y, z, q)?;
    let b = covariant_derivative_field(sys, z, y, q)?;
    let components = a.components.iter().zip(&b.components).map(|(x, y)| x + y).collect();
    Ok(TangentVector { at: q.to_vec(), components })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorValue {
    pub label: String,
    pub depth: usize,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub at: Vec<f64>,
    pub rank: usize,
    /// Generators that first raised the rank, in discovery order.
    pub basis: Vec<GeneratorValue>,
    pub depth_reached: usize,
    pub generators: usize,
    /// Rank after each depth, starting at depth 1.
    pub rank_by_depth: Vec<usize>,
    pub include_drift: bool,
}

struct Node {
    depth: usize,
    label: String,
    jets: Vec<Jet>,
}

struct JetGeometry {
    n: usize,
    /// `gamma[k][i][j]`.
    gamma: Vec<Vec<Vec<Jet>>>,
    ginv: Vec<Vec<Jet>>,
}

fn jet_values(sys: &System, space: &Arc<JetSpace>, q: &[f64]) -> Vec<Jet> {
    let n = sys.dim();
    let mut vals = vec![Jet::constant(0.0); sys.symbols().len()];
    for (i, &qi) in q.iter().enumerate() {
        vals[sys.q_id(i)] = Jet::variable(space, i, qi);
    }
    let _ = n;
    vals
}

fn eval_jet(e: &Expression, vals: &[Jet], what: &str) -> Result<Jet> {
    e.eval::<Jet>(vals).map_err(|err| Error::eval(what.to_string(), err))
}

impl JetGeometry {
    fn new(sys: &System, space: &Arc<JetSpace>, q: &[f64]) -> Result<JetGeometry> {
        // Validates positivity and guards before working with jets.
        MetricEval::new(sys, q)?;
        let n = sys.dim();
        let vals = jet_values(sys, space, q);
        let mut g = vec![vec![Jet::constant(0.0); n]; n];
        for i in 0..n {
            for j in i..n {
                let e = eval_jet(sys.metric_entry(i, j), &vals, "metric")?;
                g[i][j] = e.clone();
                g[j][i] = e;
            }
        }
        let ginv = invert(g.clone(), q)?;
        let dg: Vec<Vec<Vec<Jet>>> =
            (0..n).map(|l| (0..n).map(|i| (0..n).map(|j| g[i][j].derivative(l)).collect()).collect()).collect();
        let mut gamma = vec![vec![vec![Jet::constant(0.0); n]; n]; n];
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut acc = Jet::constant(0.0);
                    for l in 0..n {
                        let first = dg[i][j][l].add(&dg[j][i][l]).sub(&dg[l][i][j]);
                        acc = acc.add(&ginv[k][l].mul(&first));
                    }
                    let c = acc.scale(0.5);
                    gamma[k][i][j] = c.clone();
                    gamma[k][j][i] = c;
                }
            }
        }
        Ok(JetGeometry { n, gamma, ginv })
    }

    fn product(&self, y: &[Jet], z: &[Jet]) -> Vec<Jet> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut acc = Jet::constant(0.0);
                for j in 0..n {
                    acc = acc.add(&y[j].mul(&z[k].derivative(j))).add(&z[j].mul(&y[k].derivative(j)));
                }
                for i in 0..n {
                    for j in 0..n {
                        acc = acc.add(&self.gamma[k][i][j].mul(&y[i].mul(&z[j])).scale(2.0));
                    }
                }
                acc
            })
            .collect()
    }
}

/// Gauss-Jordan on jets; the metric is positive definite at the base point,
/// so diagonal pivots are nonzero.
fn invert(mut a: Vec<Vec<Jet>>, q: &[f64]) -> Result<Vec<Vec<Jet>>> {
    let n = a.len();
    let mut inv: Vec<Vec<Jet>> =
        (0..n).map(|i| (0..n).map(|j| Jet::constant(if i == j { 1.0 } else { 0.0 })).collect()).collect();
    for c in 0..n {
        if a[c][c].value() == 0.0 {
            return Err(Error::Singular { what: "metric jet".into(), at: q.to_vec() });
        }
        let p = a[c][c].apply(crate::expr::Elementary::Pow(-1.0));
        for j in 0..n {
            a[c][j] = a[c][j].mul(&p);
            inv[c][j] = inv[c][j].mul(&p);
        }
        for r in 0..n {
            if r == c {
                continue;
            }
            let f = a[r][c].clone();
            for j in 0..n {
                a[r][j] = a[r][j].sub(&f.mul(&a[c][j]));
                inv[r][j] = inv[r][j].sub(&f.mul(&inv[c][j]));
            }
        }
    }
    Ok(inv)
}

/// Contravariant drift `F = sharp(-dV + omega) + F_force`, which must depend on `q` only.
fn drift_jets(sys: &System, geo: &JetGeometry, vals: &[Jet]) -> Result<Vec<Jet>> {
    let n = sys.dim();
    let position_only = |e: &Expression| e.free_vars().iter().all(|&id| id < n);
    let mut cov = vec![Jet::constant(0.0); n];
    if let Some(v) = sys.potential() {
        if !position_only(v) {
            return Err(Error::InvalidSystem("drift needs a time-independent potential".into()));
        }
        let vj = eval_jet(v, vals, "potential")?;
        for (l, c) in cov.iter_mut().enumerate() {
            *c = c.sub(&vj.derivative(l));
        }
    }
    if let Some(w) = sys.work_form() {
        for (c, e) in cov.iter_mut().zip(w) {
            if !position_only(e) {
                return Err(Error::InvalidSystem("drift needs a work form depending on q only".into()));
            }
            *c = c.add(&eval_jet(e, vals, "work form")?);
        }
    }
    let mut out: Vec<Jet> =
        (0..n).map(|k| (0..n).fold(Jet::constant(0.0), |acc, l| acc.add(&geo.ginv[k][l].mul(&cov[l])))).collect();
    if let Some(f) = sys.force() {
        for (o, e) in out.iter_mut().zip(f) {
            if !position_only(e) {
                return Err(Error::InvalidSystem("drift needs a force depending on q only".into()));
            }
            *o = o.add(&eval_jet(e, vals, "force")?);
        }
    }
    Ok(out)
}

fn rank_of(cols: &[Vec<f64>], n: usize) -> usize {
    if cols.is_empty() || n == 0 {
        return 0;
    }
    let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Rank at `q` of the span of the inputs and their iterated symmetric
/// products up to `max_depth` (inputs are depth 1). With `include_drift`,
/// `<<F, F^i>>` for the drift `F` joins the depth-2 generators.
///
/// This is a necessary-structure probe only. It does not decide
/// controllability and does not form Lie brackets with the drift.
pub fn symmetric_closure_rank(
    csys: &ControlSystem,
    q: &[f64],
    max_depth: usize,
    include_drift: bool,
) -> Result<ClosureReport> {
    closure_rank(&csys.system, &csys.inputs, q, max_depth, include_drift)
}

pub fn closure_rank(sys: &System, inputs: &[String], q: &[f64], max_depth: usize, include_drift: bool) -> Result<ClosureReport> {
    if max_depth == 0 {
        return Err(Error::Config("max depth must be at least 1".into()));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidSystem("no input fields".into()));
    }
    let n = sys.dim();
    if q.len() != n {
        return Err(Error::InvalidState(format!("point has {} coordinates, system has {n}", q.len())));
    }
    // A depth-d generator needs derivatives of order d - 1 of the inputs.
    let space = JetSpace::new(n, max_depth - 1);
    let vals = jet_values(sys, &space, q);
    let geo = JetGeometry::new(sys, &space, q)?;
    let mut nodes: Vec<Node> = Vec::new();
    for name in inputs {
        let comps = sys.field(name)?;
        let jets = comps.iter().map(|e| eval_jet(e, &vals, name)).collect::<Result<Vec<_>>>()?;
        nodes.push(Node { depth: 1, label: name.clone(), jets });
    }
    if nodes.len() > MAX_GENERATORS {
        return Err(Error::Config(format!("generator budget of {MAX_GENERATORS} exceeded")));
    }
    let drift = if include_drift && max_depth >= 2 { Some(drift_jets(sys, &geo, &vals)?) } else { None };

    let mut basis: Vec<GeneratorValue> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut rank = 0;
    let absorb = |nodes: &[Node], from: usize, basis: &mut Vec<GeneratorValue>, cols: &mut Vec<Vec<f64>>, rank: &mut usize| {
        for node in &nodes[from..] {
            if *rank == n {
                break;
            }
            let value: Vec<f64> = node.jets.iter().map(|j| j.value()).collect();
            cols.push(value.clone());
            let r = rank_of(cols, n);
            if r > *rank {
                *rank = r;
                basis.push(GeneratorValue { label: node.label.clone(), depth: node.depth, value });
            } else {
                cols.pop();
            }
        }
    };
    absorb(&nodes, 0, &mut basis, &mut cols, &mut rank);
    let mut rank_by_depth = vec![rank];
    let mut depth = 1;
    while depth < max_depth && rank < n {
        depth += 1;
        let prev = nodes.len();
        let mut fresh: Vec<Node> = Vec::new();
        for a in 0..prev {
            for b in a..prev {
                // Pairs of older generators were already formed.
                if nodes[a].depth < depth - 1 && nodes[b].depth < depth - 1 {
                    continue;
                }
                if prev + fresh.len() + 1 > MAX_GENERATORS {
                    return Err(Error::Config(format!("generator budget of {MAX_GENERATORS} exceeded at depth {depth}")));
                }
                fresh.push(Node {
                    depth,
                    label: format!("<<{}, {}>>", nodes[a].label, nodes[b].label),
                    jets: geo.product(&nodes[a].jets, &nodes[b].jets),
                });
            }
        }
        if depth == 2 {
            if let Some(f) = &drift {
                for i in 0..prev {
                    fresh.push(Node {
                        depth,
                        label: format!("<<drift, {}>>", nodes[i].label),
                        jets: geo.product(f, &nodes[i].jets),
                    });
                }
                if prev + fresh.len() > MAX_GENERATORS {
                    return Err(Error::Config(format!("generator budget of {MAX_GENERATORS} exceeded at depth {depth}")));
                }
            }
        }
        nodes.extend(fresh);
        absorb(&nodes, prev, &mut basis, &mut cols, &mut rank);
        rank_by_depth.push(rank);
    }
    Ok(ClosureReport {
        at: q.to_vec(),
        rank,
        basis,
        depth_reached: depth,
        generators: nodes.len(),
        rank_by_depth,
        include_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate;

    fn line_with_input() -> System {
        let mut b = System::builder("line", &["q"]).unwrap();
        b.metric(0, 0, "1").unwrap().control("F1", 0, "1").unwrap();
        b.build().unwrap()
    }

    fn plane(inputs: &[(&str, &str, &str)]) -> System {
        let mut b = System::builder("plane", &["x", "y"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "1").unwrap();
        for (n, a, c) in inputs {
            b.control(n, 0, a).unwrap().control(n, 1, c).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn signal_lookup_and_csv() {
        let s = Signal::from_csv("t,u1\n0,1\n1,-1\n".as_bytes()).unwrap();
        assert_eq!(s.at(-0.1), None);
        assert_eq!(s.at(0.0), Some(&[1.0][..]));
        assert_eq!(s.at(0.999), Some(&[1.0][..]));
        assert_eq!(s.at(1.0), Some(&[-1.0][..]));
        assert_eq!(s.at(50.0), Some(&[-1.0][..]));
        assert!(Signal::from_csv("0,1\n0,2\n".as_bytes()).is_err());
        assert!(Signal::from_csv("0,1\n1,2,3\n".as_bytes()).is_err());
        assert!(s.check_bounds(&[(-1.0, 1.0)]).is_ok());
        assert!(s.check_bounds(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn constant_input() {
        let cs = ControlSystem::new(line_with_input(), Signal::constant(0.0, vec![2.0]).unwrap()).unwrap();
        let tr = integrate_control(&cs, &PhaseState::new(0.0, vec![0.0], vec![0.0]), &IntegratorConfig::rk4(0.0, 1.0, 1e-2)).unwrap();
        let last = tr.last();
        assert!((last.state.q[0] - 1.0).abs() <= 1e-12);
        assert!((last.state.v[0] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_input_matches_free_motion() {
        let sys = line_with_input();
        let cs = ControlSystem::new(sys.clone(), Signal::constant(0.0, vec![0.0]).unwrap()).unwrap();
        let s0 = PhaseState::new(0.0, vec![0.3], vec![-0.2]);
        let cfg = IntegratorConfig::rk4(0.0, 1.0, 1e-2);
        let a = integrate_control(&cs, &s0, &cfg).unwrap();
        let b = integrate(&sys, &s0, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn bang_bang() {
        let sig = Signal::new(vec![0.0, 1.0], vec![vec![1.0], vec![-1.0]]).unwrap();
        let cs = ControlSystem::new(line_with_input(), sig).unwrap();
        let tr = integrate_control(&cs, &PhaseState::new(0.0, vec![0.0], vec![0.0]), &IntegratorConfig::rk4(0.0, 2.0, 0.03)).unwrap();
        let last = tr.last();
        assert!(last.state.v[0].abs() <= 1e-12, "{}", last.state.v[0]);
        assert!((last.state.q[0] - 1.0).abs() <= 1e-12);
        assert!(tr.times().contains(&1.0));
    }

    #[test]
    fn signal_gap_is_an_error() {
        let cs = ControlSystem::new(line_with_input(), Signal::constant(0.5, vec![1.0]).unwrap()).unwrap();
        let err = integrate_control(&cs, &PhaseState::new(0.0, vec![0.0], vec![0.0]), &IntegratorConfig::rk4(0.0, 1.0, 1e-2));
        assert!(matches!(err, Err(Error::Config(m)) if m.contains("gap")));
    }

    #[test]
    fn symmetric_product_examples() {
        let sys = plane(&[("A", "1", "2"), ("B", "-3", "0.5"), ("Y", "x^2", "0"), ("Z", "y", "0")]);
        assert_eq!(symmetric_product(&sys, "A", "B", &[0.2, 0.4]).unwrap().components, vec![0.0, 0.0]);
        assert_eq!(symmetric_product(&sys, "Y", "Z", &[1.0, 1.0]).unwrap().components, vec![2.0, 0.0]);
        let yy = symmetric_product(&sys, "Y", "Y", &[0.7, 0.3]).unwrap().components;
        let hj = crate::geometry::covariant_derivative_field(&sys, "Y", "Y", &[0.7, 0.3]).unwrap().components;
        assert_eq!(yy, hj.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
        assert!(symmetric_product(&sys, "Y", "nope", &[0.0, 0.0]).is_err());
    }

    #[test]
    fn closure_rank_examples() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let sys = plane(&[("e1", "1", "0"), ("e2", "0", "1")]);
        let r = closure_rank(&sys, &names(&["e1", "e2"]), &[0.3, 0.1], 3, false).unwrap();
        assert_eq!((r.rank, r.depth_reached), (2, 1));

        let sys = plane(&[("e1", "1", "0")]);
        for depth in 1..=4 {
            let r = closure_rank(&sys, &names(&["e1"]), &[0.3, 0.1], depth, false).unwrap();
            assert_eq!((r.rank, r.depth_reached), (1, depth));
        }

        let sys = plane(&[("Y", "1", "x")]);
        let r = closure_rank(&sys, &names(&["Y"]), &[0.3, 0.1], 1, false).unwrap();
        assert_eq!(r.rank, 1);
        let r = closure_rank(&sys, &names(&["Y"]), &[0.3, 0.1], 2, false).unwrap();
        assert_eq!((r.rank, r.depth_reached), (2, 2));
        assert_eq!(r.basis[1].value, vec![0.0, 2.0]);
        assert_eq!(r.basis[1].label, "<<Y, Y>>");
    }

    #[test]
    fn jet_products_match_dual_products() {
        // Curved metric, nested once, against the Dual-based path.
        let mut b = System::builder("polar", &["r", "th"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "r^2").unwrap();
        b.control("Y", 0, "sin(th)").unwrap().control("Y", 1, "r").unwrap();
        b.control("Z", 0, "r*th").unwrap().control("Z", 1, "cos(r)").unwrap();
        let sys = b.build().unwrap();
        let q = [1.3, 0.4];
        let space = JetSpace::new(2, 1);
        let vals = jet_values(&sys, &space, &q);
        let geo = JetGeometry::new(&sys, &space, &q).unwrap();
        let jy: Vec<Jet> = sys.field("Y").unwrap().iter().map(|e| eval_jet(e, &vals, "Y").unwrap()).collect();
        let jz: Vec<Jet> = sys.field("Z").unwrap().iter().map(|e| eval_jet(e, &vals, "Z").unwrap()).collect();
        let p: Vec<f64> = geo.product(&jy, &jz).iter().map(|j| j.value()).collect();
        let d = symmetric_product(&sys, "Y", "Z", &q).unwrap().components;
        for (a, b) in p.iter().zip(&d) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn drift_adds_generators() {
        let mut b = System::builder("plane", &["x", "y"]).unwrap();
        b.metric(0, 0, "1").unwrap().metric(1, 1, "1").unwrap();
        b.force(1, "x").unwrap().control("e1", 0, "1").unwrap().control("e1", 1, "0").unwrap();
        let sys = b.build().unwrap();
        let without = closure_rank(&sys, &["e1".into()], &[0.0, 0.0], 2, false).unwrap();
        let with = closure_rank(&sys, &["e1".into()], &[0.0, 0.0], 2, true).unwrap();
        assert_eq!((without.rank, with.rank), (1, 2));
    }

    #[test]
    fn budget_is_enforced() {
        let sys = plane(&[("a", "x", "y^2"), ("b", "sin(y)", "x*y")]);
        let err = closure_rank(&sys, &["a".into(), "b".into()], &[0.0, 0.0], 6, false);
        // Rank may saturate before the budget; a degenerate point keeps it low.
        if let Err(e) = err {
            assert!(matches!(e, Error::Config(m) if m.contains("budget")));
        }
        let sys = plane(&[("a", "1", "0"), ("b", "2", "0")]);
        let err = closure_rank(&sys, &["a".into(), "b".into()], &[0.0, 0.0], 6, false).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("budget")));
    }
}
