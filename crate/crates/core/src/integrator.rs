//! Explicit Runge-Kutta integrators on a flat state vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    /// Classical fixed-step fourth-order Runge-Kutta.
    Rk4 { dt: f64 },
    /// Dormand-Prince 5(4) with embedded error control.
    Rk45 { rtol: f64, atol: f64, dt_min: f64, dt_max: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rk4 { .. } => "rk4",
            Method::Rk45 { .. } => "rk45",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
}

impl IntegratorConfig {
    pub fn rk4(t0: f64, t1: f64, dt: f64) -> Self {
        IntegratorConfig { method: Method::Rk4 { dt }, t0, t1 }
    }

    pub fn rk45(t0: f64, t1: f64, rtol: f64, atol: f64, dt_min: f64, dt_max: f64) -> Self {
        IntegratorConfig { method: Method::Rk45 { rtol, atol, dt_min, dt_max }, t0, t1 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.t0.is_finite() && self.t1.is_finite()) {
            return bad("t0 and t1 must be finite");
        }
        if !(self.t1 > self.t0) {
            return bad("t1 must be greater than t0");
        }
        match self.method {
            Method::Rk4 { dt } => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return bad("dt must be positive");
                }
            }
            Method::Rk45 { rtol, atol, dt_min, dt_max } => {
                if !(rtol > 0.0 && atol > 0.0) {
                    return bad("rtol and atol must be positive");
                }
                if !(dt_min > 0.0 && dt_max >= dt_min) {
                    return bad("need 0 < dt_min <= dt_max");
                }
            }
        }
        Ok(())
    }

    /// Step count and step size of a fixed-step run over `[a, b]`.
    pub fn fixed_steps(a: f64, b: f64, dt: f64) -> (usize, f64) {
        let n = (((b - a) / dt) - 1e-9).ceil().max(1.0) as usize;
        (n, (b - a) / n as f64)
    }
}

/// Samples produced by [`solve`]. On failure the samples reach up to the last
/// successfully completed step and `error` is set.
#[derive(Clone, Debug)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Uniform step size, for fixed-step runs over a single segment.
    pub step: Option<f64>,
    pub error: Option<Error>,
}

/// Right-hand side `f(segment, t, y)`. The segment index lets callers hold
/// piecewise data constant over a segment including its right end.
pub trait Rhs {
    fn eval(&self, segment: usize, t: f64, y: &[f64]) -> Result<Vec<f64>>;
}

impl<F> Rhs for F
where
    F: Fn(usize, f64, &[f64]) -> Result<Vec<f64>>,
{
    fn eval(&self, segment: usize, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self(segment, t, y)
    }
}

fn axpy(y: &[f64], h: f64, terms: &[(&[f64], f64)]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (k, c) in terms {
        let hc = h * c;
        for (o, ki) in out.iter_mut().zip(k.iter()) {
            *o += hc * ki;
        }
    }
    out
}

fn rk4_step(f: &dyn Rhs, seg: usize, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = f.eval(seg, t, y)?;
    let k2 = f.eval(seg, t + 0.5 * h, &axpy(y, h, &[(&k1, 0.5)]))?;
    let k3 = f.eval(seg, t + 0.5 * h, &axpy(y, h, &[(&k2, 0.5)]))?;
    let k4 = f.eval(seg, t + h, &axpy(y, h, &[(&k3, 1.0)]))?;
    Ok(axpy(y, h, &[(&k1, 1.0 / 6.0), (&k2, 1.0 / 3.0), (&k3, 1.0 / 3.0), (&k4, 1.0 / 6.0)]))
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand-Prince step: (5th-order solution, scaled error norm).
fn dp_step(f: &dyn Rhs, seg: usize, t: f64, y: &[f64], h: f64, rtol: f64, atol: f64) -> Result<(Vec<f64>, f64)> {
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let terms: Vec<(&[f64], f64)> = (0..s).map(|j| (k[j].as_slice(), DP_A[s][j])).collect();
        let ys = axpy(y, h, &terms);
        k.push(f.eval(seg, t + DP_C[s] * h, &ys)?);
    }
    let terms: Vec<(&[f64], f64)> = (0..7).map(|j| (k[j].as_slice(), DP_B[j])).collect();
    let y5 = axpy(y, h, &terms);
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e: f64 = h * (0..7).map(|j| DP_E[j] * k[j][i]).sum::<f64>();
        let sc = atol + rtol * y[i].abs().max(y5[i].abs());
        acc += (e / sc).powi(2);
    }
    let err = if y.is_empty() { 0.0 } else { (acc / y.len() as f64).sqrt() };
    Ok((y5, err))
}

/// Integrate `y' = f(t, y)` over consecutive segments `[b_k, b_{k+1}]` where
/// `breaks` lists the boundaries (first = t0, last = t1). Stepping restarts at
/// every boundary.
pub fn solve(cfg: &IntegratorConfig, y0: &[f64], breaks: &[f64], f: &dyn Rhs) -> Result<OdeSolution> {
    cfg.validate()?;
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("segment boundaries must be strictly increasing".into()));
    }
    let mut sol = OdeSolution { times: vec![breaks[0]], states: vec![y0.to_vec()], step: None, error: None };
    let mut y = y0.to_vec();
    let mut steps_used = Vec::new();
    for seg in 0..breaks.len() - 1 {
        let (a, b) = (breaks[seg], breaks[seg + 1]);
        let res = match cfg.method {
            Method::Rk4 { dt } => {
                let (n, h) = IntegratorConfig::fixed_steps(a, b, dt);
                steps_used.push(h);
                let mut r = Ok(());
                for i in 0..n {
                    let t = a + i as f64 * h;
                    match rk4_step(f, seg, t, &y, h) {
                        Ok(next) if next.iter().all(|x| x.is_finite()) => {
                            y = next;
                            let tn = if i + 1 == n { b } else { a + (i + 1) as f64 * h };
                            sol.times.push(tn);
                            sol.states.push(y.clone());
                        }
                        Ok(_) => {
                            r = Err(Error::Step { t, message: "non-finite state".into() });
                            break;
                        }
                        Err(e) => {
                            r = Err(e);
                            break;
                        }
                    }
                }
                r
            }
            Method::Rk45 { rtol, atol, dt_min, dt_max } => {
                adaptive(f, seg, a, b, &mut y, rtol, atol, dt_min, dt_max, &mut sol)
            }
        };
        if let Err(e) = res {
            sol.error = Some(e);
            return Ok(sol);
        }
    }
    if steps_used.len() == 1 {
        sol.step = Some(steps_used[0]);
    }
    Ok(sol)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Rhs,
    seg: usize,
    a: f64,
    b: f64,
    y: &mut Vec<f64>,
    rtol: f64,
    atol: f64,
    dt_min: f64,
    dt_max: f64,
    sol: &mut OdeSolution,
) -> Result<()> {
    let mut t = a;
    let mut h = (0.01 * (b - a)).clamp(dt_min, dt_max);
    while t < b {
        let last = t + h >= b - 1e-12 * (b - a);
        let step = if last { b - t } else { h };
        let (next, err) = dp_step(f, seg, t, y, step, rtol, atol)?;
        let finite = next.iter().all(|x| x.is_finite()) && err.is_finite();
        if finite && err <= 1.0 {
            t = if last { b } else { t + step };
            *y = next;
            sol.times.push(t);
            sol.states.push(y.clone());
        }
        let factor = if !finite {
            0.2
        } else if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if !(finite && err <= 1.0) && step <= dt_min {
            return Err(Error::Step { t, message: format!("step size underflow (dt_min = {dt_min:e})") });
        }
        h = (step * factor).clamp(dt_min, dt_max);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_: usize, _: f64, y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![y[1], -y[0]])
    }

    #[test]
    fn rk4_oscillator_and_uniform_times() {
        let cfg = IntegratorConfig::rk4(0.0, std::f64::consts::PI, 1e-3);
        let sol = solve(&cfg, &[1.0, 0.0], &[0.0, cfg.t1], &oscillator).unwrap();
        assert!((sol.states.last().unwrap()[0] + 1.0).abs() < 1e-10);
        assert_eq!(*sol.times.last().unwrap(), cfg.t1);
        let h = sol.step.unwrap();
        assert!(sol.times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() < 1e-12));
    }

    #[test]
    fn rk45_meets_tolerance() {
        let cfg = IntegratorConfig::rk45(0.0, 10.0, 1e-10, 1e-12, 1e-8, 0.5);
        let sol = solve(&cfg, &[1.0, 0.0], &[0.0, 10.0], &oscillator).unwrap();
        assert!(sol.error.is_none());
        assert!((sol.states.last().unwrap()[0] - 10f64.cos()).abs() < 1e-7);
        assert!(sol.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rk45_underflow_is_reported() {
        let blowup = |_: usize, _: f64, y: &[f64]| Ok(vec![y[0] * y[0]]);
        let cfg = IntegratorConfig::rk45(0.0, 2.0, 1e-10, 1e-12, 1e-6, 0.1);
        let sol = solve(&cfg, &[1.0], &[0.0, 2.0], &blowup).unwrap();
        assert!(matches!(sol.error, Some(Error::Step { .. })));
        assert!(*sol.times.last().unwrap() < 1.0);
    }

    #[test]
    fn segments_restart_at_boundaries() {
        let u = [1.0, -1.0];
        let f = |seg: usize, _: f64, y: &[f64]| Ok(vec![y[1], u[seg]]);
        let cfg = IntegratorConfig::rk4(0.0, 2.0, 0.3);
        let sol = solve(&cfg, &[0.0, 0.0], &[0.0, 1.0, 2.0], &f).unwrap();
        assert!(sol.times.contains(&1.0));
        let end = sol.states.last().unwrap();
        assert!((end[0] - 1.0).abs() < 1e-12 && end[1].abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        assert!(IntegratorConfig::rk4(1.0, 0.0, 0.1).validate().is_err());
        assert!(IntegratorConfig::rk4(0.0, 1.0, 0.0).validate().is_err());
        assert!(IntegratorConfig::rk45(0.0, 1.0, 0.0, 1e-9, 1e-6, 0.1).validate().is_err());
    }
}
