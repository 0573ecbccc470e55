//! `rmech` command-line frontend.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical or validation failure.

pub mod output;
pub mod sysfile;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use rmech::analysis::{self, GradientSign, Grid, GridAxis, HjTolerances};
use rmech::control::{self, ControlSystem, Signal};
use rmech::dynamics::{self, ConstraintClass, PhaseState, SampleResidual, Trajectory};
use rmech::holonomic::{self, Baumgarte, HolonomicOptions};
use rmech::nonholonomic::{self, NonholonomicOptions};
use rmech::{ExecMode, IntegratorConfig, System};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "rmech", version, about = "Newtonian mechanics on Riemannian manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the equations of motion, honouring any declared constraints.
    Simulate(SimulateArgs),
    /// Integrate the geodesic equation of the metric alone.
    Geodesic(GeodesicArgs),
    /// Euler-Lagrange residual along a simulated trajectory.
    CheckEl(CheckElArgs),
    /// Hamilton-Jacobi residual, closedness and energy constancy of a vector field on a grid.
    CheckHj(CheckHjArgs),
    /// Compare a trajectory with the geodesic of the Jacobi metric.
    JacobiCompare(JacobiArgs),
    /// Drift of the Noether quantity of a vector field along a trajectory.
    Noether(NoetherArgs),
    /// Hamilton-Jacobi, harmonicity and Schrodinger conditions for exp(iS).
    SchrodingerCheck(SchrodingerArgs),
    /// Stationary incompressible Euler check with the potential as pressure.
    EulerFluid(EulerArgs),
    /// Integrate under a piecewise-constant control signal.
    ControlSim(ControlArgs),
    /// Rank of the symmetric closure of the input fields at a point.
    SymmetricRank(RankArgs),
}

#[derive(Args, Debug)]
struct SystemArg {
    /// System definition file.
    #[arg(long)]
    system: PathBuf,
}

#[derive(Args, Debug)]
struct StateArgs {
    /// Initial positions, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    q0: Option<String>,
    /// Initial velocities, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    v0: Option<String>,
    /// JSON state file `{"q": [...], "v": [...], "t": 0}`.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Args, Debug)]
struct IntegrationArgs {
    #[arg(long, allow_hyphen_values = true)]
    t0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t1: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, value_enum, default_value = "rk4")]
    method: MethodArg,
    #[arg(long, default_value_t = 1e-9)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    #[arg(long, default_value_t = 1e-12)]
    dt_min: f64,
    /// Largest adaptive step; defaults to the whole interval.
    #[arg(long)]
    dt_max: Option<f64>,
}

#[derive(Args, Debug)]
struct ConstraintArgs {
    /// Baumgarte gains "a,b" for holonomic constraints.
    #[arg(long, default_value = "5,5")]
    baumgarte: String,
    /// Feedback gain for nonholonomic constraints.
    #[arg(long, default_value_t = 5.0)]
    stabilization: f64,
    /// Largest initial constraint violation that is projected away instead of rejected.
    #[arg(long, default_value_t = holonomic::DEFAULT_PROJECT_TOL)]
    project_tol: f64,
}

#[derive(Args, Debug)]
struct ExecArgs {
    /// Run grid and sweep work on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    state: StateArgs,
    #[command(flatten)]
    integ: IntegrationArgs,
    #[command(flatten)]
    constraints: ConstraintArgs,
    /// Trajectory CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail when max |phi| exceeds this.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Print a JSON summary on stdout (requires --out).
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct GeodesicArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    state: StateArgs,
    #[command(flatten)]
    integ: IntegrationArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CheckElArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    state: StateArgs,
    #[command(flatten)]
    integ: IntegrationArgs,
    #[command(flatten)]
    constraints: ConstraintArgs,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    per_point: bool,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Axes "name:lo:hi[:count]", comma-separated; count defaults to 11.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Values of the coordinates not on the grid (default 0).
    #[arg(long, allow_hyphen_values = true)]
    base: Option<String>,
}

#[derive(Args, Debug)]
struct CheckHjArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long)]
    field: String,
    #[command(flatten)]
    grid: GridArgs,
    /// HJ residual threshold.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    closed_tol: f64,
    /// Relative energy deviation threshold.
    #[arg(long, default_value_t = 1e-6)]
    energy_tol: f64,
    /// Also check the integral curve of the field from this point.
    #[arg(long, allow_hyphen_values = true)]
    curve_q0: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    curve_t1: f64,
    #[arg(long, default_value_t = 1e-3)]
    curve_dt: f64,
    #[arg(long, default_value_t = 1e-6)]
    curve_tol: f64,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    per_point: bool,
}

#[derive(Args, Debug)]
struct JacobiArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    state: StateArgs,
    #[command(flatten)]
    integ: IntegrationArgs,
    /// Energy level; defaults to the energy of the initial state.
    #[arg(long, allow_hyphen_values = true)]
    e0: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Newton trajectory CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Geodesic trajectory CSV.
    #[arg(long)]
    geodesic_out: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct NoetherArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long)]
    field: String,
    #[command(flatten)]
    state: StateArgs,
    #[command(flatten)]
    integ: IntegrationArgs,
    #[command(flatten)]
    constraints: ConstraintArgs,
    /// Relative drift threshold.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    per_point: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SignArg {
    Minus,
    Plus,
}

#[derive(Args, Debug)]
struct SchrodingerArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long)]
    scalar: String,
    #[arg(long, allow_hyphen_values = true)]
    e0: f64,
    #[command(flatten)]
    grid: GridArgs,
    /// Explicit sample points "x,y;x,y;...", instead of --grid.
    #[arg(long, allow_hyphen_values = true)]
    points: Option<String>,
    /// X = -grad S (minus) or X = grad S (plus).
    #[arg(long, value_enum, default_value = "minus")]
    sign: SignArg,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    per_point: bool,
}

#[derive(Args, Debug)]
struct EulerArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long)]
    field: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    per_point: bool,
}

#[derive(Args, Debug)]
struct ControlArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    state: StateArgs,
    #[command(flatten)]
    integ: IntegrationArgs,
    /// Signal CSV `t,u1,...,uk`.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Constant input values, comma-separated, instead of --signal.
    #[arg(long, allow_hyphen_values = true)]
    u: Option<String>,
    /// Input box "lo:hi,lo:hi,...".
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Input fields, comma-separated; defaults to every declared control.
    #[arg(long)]
    inputs: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long, allow_hyphen_values = true)]
    at: String,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Add products of the drift with each input at depth 2.
    #[arg(long)]
    include_drift: bool,
    #[arg(long)]
    inputs: Option<String>,
    /// Fail unless the rank equals this.
    #[arg(long)]
    expect_rank: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Numerical(String),
}

impl From<rmech::Error> for Fail {
    fn from(e: rmech::Error) -> Self {
        Fail::Numerical(e.to_string())
    }
}

enum Status {
    Pass,
    Failed(String),
}

type Res<T> = Result<T, Fail>;

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn print(&mut self, s: &str) -> Res<()> {
        self.out.write_all(s.as_bytes()).map_err(|e| Fail::Usage(format!("cannot write output: {e}")))
    }

    fn note(&mut self, s: &str) {
        let _ = writeln!(self.err, "{s}");
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let mut io = Io { out, err };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, &mut io),
        Command::Geodesic(a) => geodesic(a, &mut io),
        Command::CheckEl(a) => check_el(a, &mut io),
        Command::CheckHj(a) => check_hj(a, &mut io),
        Command::JacobiCompare(a) => jacobi_compare(a, &mut io),
        Command::Noether(a) => noether(a, &mut io),
        Command::SchrodingerCheck(a) => schrodinger(a, &mut io),
        Command::EulerFluid(a) => euler_fluid(a, &mut io),
        Command::ControlSim(a) => control_sim(a, &mut io),
        Command::SymmetricRank(a) => symmetric_rank(a, &mut io),
    };
    match result {
        Ok(Status::Pass) => EXIT_OK,
        Ok(Status::Failed(msg)) => {
            io.note(&format!("check failed: {msg}"));
            EXIT_FAILURE
        }
        Err(Fail::Usage(msg)) => {
            io.note(&format!("error: {msg}"));
            EXIT_USAGE
        }
        Err(Fail::Numerical(msg)) => {
            io.note(&format!("error: {msg}"));
            EXIT_FAILURE
        }
    }
}

fn load_system(a: &SystemArg) -> Res<System> {
    let text = fs::read_to_string(&a.system)
        .map_err(|e| Fail::Usage(format!("cannot read {}: {e}", a.system.display())))?;
    sysfile::parse_system_file(&text).map_err(|e| Fail::Numerical(format!("{}: {e}", a.system.display())))
}

fn parse_vector(flag: &str, s: &str) -> Res<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Fail::Usage(format!("--{flag}: '{}' is not a number", x.trim()))))
        .collect()
}

fn parse_names(s: &Option<String>) -> Option<Vec<String>> {
    s.as_ref().map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    #[serde(default)]
    t: Option<f64>,
    q: Vec<f64>,
    v: Vec<f64>,
}

fn initial_state(sys: &System, a: &StateArgs, integ: &IntegrationArgs) -> Res<PhaseState> {
    let (t, q, v) = match (&a.state, &a.q0, &a.v0) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(Fail::Usage("give the initial state either inline (--q0/--v0) or with --state, not both".into()))
        }
        (Some(path), None, None) => {
            let text =
                fs::read_to_string(path).map_err(|e| Fail::Usage(format!("cannot read {}: {e}", path.display())))?;
            let st: StateFile =
                serde_json::from_str(&text).map_err(|e| Fail::Usage(format!("{}: {e}", path.display())))?;
            if let (Some(ts), Some(t0)) = (st.t, integ.t0) {
                if ts != t0 {
                    return Err(Fail::Usage(format!("state file time {ts} conflicts with --t0 {t0}")));
                }
            }
            (st.t.or(integ.t0).unwrap_or(0.0), st.q, st.v)
        }
        (None, q, v) => {
            let q = q.as_deref().ok_or_else(|| Fail::Usage("missing --q0 (or --state)".into()))?;
            let v = match v {
                Some(v) => parse_vector("v0", v)?,
                None => vec![0.0; sys.dim()],
            };
            (integ.t0.unwrap_or(0.0), parse_vector("q0", q)?, v)
        }
    };
    if q.len() != sys.dim() || v.len() != sys.dim() {
        return Err(Fail::Usage(format!(
            "initial state has {} positions and {} velocities, system dimension is {}",
            q.len(),
            v.len(),
            sys.dim()
        )));
    }
    Ok(PhaseState::new(t, q, v))
}

fn integrator_config(a: &IntegrationArgs, t0: f64) -> Res<IntegratorConfig> {
    let cfg = match a.method {
        MethodArg::Rk4 => IntegratorConfig::rk4(t0, a.t1, a.dt),
        MethodArg::Rk45 => {
            let dt_max = a.dt_max.unwrap_or(a.t1 - t0);
            IntegratorConfig::rk45(t0, a.t1, a.rtol, a.atol, a.dt_min, dt_max)
        }
    };
    cfg.validate().map_err(|e| Fail::Usage(e.to_string()))?;
    Ok(cfg)
}

fn baumgarte(a: &ConstraintArgs) -> Res<Baumgarte> {
    match parse_vector("baumgarte", &a.baumgarte)?.as_slice() {
        [x, y] => Ok(Baumgarte { a: *x, b: *y }),
        _ => Err(Fail::Usage("--baumgarte expects \"a,b\"".into())),
    }
}

/// Integrate with the constraint machinery matching what the system declares.
fn integrate_any(sys: &System, s0: &PhaseState, cfg: &IntegratorConfig, c: &ConstraintArgs) -> Res<Trajectory> {
    let traj = if !sys.holonomic().is_empty() {
        let opts = HolonomicOptions { stabilization: baumgarte(c)?, project_tol: c.project_tol };
        holonomic::integrate_holonomic(sys, s0, cfg, &opts)?
    } else if !sys.nonholonomic().is_empty() {
        nonholonomic::integrate_nonholonomic(sys, s0, cfg, &NonholonomicOptions { stabilization: c.stabilization })?
    } else {
        dynamics::integrate(sys, s0, cfg)?
    };
    Ok(traj)
}

fn write_file(path: &Path, contents: &str) -> Res<()> {
    fs::write(path, contents).map_err(|e| Fail::Usage(format!("cannot write {}: {e}", path.display())))
}

fn emit_trajectory(traj: &Trajectory, path: &Option<PathBuf>, io: &mut Io) -> Res<()> {
    let csv = output::trajectory_csv(traj);
    match path {
        Some(p) => write_file(p, &csv),
        None => io.print(&csv),
    }
}

fn max_phi(traj: &Trajectory) -> f64 {
    traj.samples.iter().flat_map(|s| s.phi.iter()).fold(0.0, |a, &b| a.max(b.abs()))
}

fn class_name(c: ConstraintClass) -> &'static str {
    match c {
        ConstraintClass::None => "none",
        ConstraintClass::Holonomic => "holonomic",
        ConstraintClass::Nonholonomic => "nonholonomic",
    }
}

fn trajectory_summary(traj: &Trajectory) -> Value {
    let e0 = traj.samples[0].energy;
    let drift = traj.samples.iter().map(|s| (s.energy - e0).abs()).fold(0.0, f64::max);
    let last = traj.last();
    json!({
        "system": traj.system,
        "method": traj.method,
        "constraints": class_name(traj.constraint_class),
        "samples": traj.len(),
        "t_end": last.state.t,
        "q_end": last.state.q,
        "v_end": last.state.v,
        "energy_drift": drift,
        "max_phi": max_phi(traj),
        "stopped_early": traj.error.as_ref().map(|e| e.to_string()),
    })
}

fn finish_run(traj: &Trajectory, tol: Option<f64>) -> Status {
    if let Some(e) = &traj.error {
        return Status::Failed(format!("integration stopped at t = {}: {e}", traj.last().state.t));
    }
    if let Some(tol) = tol {
        let m = max_phi(traj);
        if m > tol {
            return Status::Failed(format!("constraint residual {m:e} exceeds --tol {tol:e}"));
        }
    }
    Status::Pass
}

fn simulate(a: &SimulateArgs, io: &mut Io) -> Res<Status> {
    if a.json && a.out.is_none() {
        return Err(Fail::Usage("--json needs --out for the trajectory".into()));
    }
    let sys = load_system(&a.system)?;
    let s0 = initial_state(&sys, &a.state, &a.integ)?;
    let cfg = integrator_config(&a.integ, s0.t)?;
    let traj = integrate_any(&sys, &s0, &cfg, &a.constraints)?;
    emit_trajectory(&traj, &a.out, io)?;
    if a.json {
        let mut v = trajectory_summary(&traj);
        v["check"] = json!("simulate");
        v["max_residuals"] = json!({ "phi": max_phi(&traj) });
        v["thresholds"] = json!({ "phi": a.tol });
        io.print(&output::json(&v))?;
    }
    Ok(finish_run(&traj, Some(a.tol)))
}

fn geodesic(a: &GeodesicArgs, io: &mut Io) -> Res<Status> {
    if a.json && a.out.is_none() {
        return Err(Fail::Usage("--json needs --out for the trajectory".into()));
    }
    let sys = load_system(&a.system)?.geodesic_only();
    let s0 = initial_state(&sys, &a.state, &a.integ)?;
    let cfg = integrator_config(&a.integ, s0.t)?;
    let traj = dynamics::integrate(&sys, &s0, &cfg)?;
    emit_trajectory(&traj, &a.out, io)?;
    if a.json {
        let mut v = trajectory_summary(&traj);
        v["check"] = json!("geodesic");
        io.print(&output::json(&v))?;
    }
    Ok(finish_run(&traj, None))
}

fn residual_points(items: &[SampleResidual]) -> Value {
    Value::Array(items.iter().map(|r| json!({ "t": r.t, "residual": r.residual })).collect())
}

fn verdict(failures: Vec<String>) -> Status {
    if failures.is_empty() {
        Status::Pass
    } else {
        Status::Failed(failures.join("; "))
    }
}

fn report_text(io: &mut Io, title: &str, rows: &[(&str, String)]) -> Res<()> {
    let mut s = format!("{title}\n");
    for (k, v) in rows {
        s.push_str(&format!("  {k}: {v}\n"));
    }
    io.print(&s)
}

fn check_el(a: &CheckElArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let s0 = initial_state(&sys, &a.state, &a.integ)?;
    let cfg = integrator_config(&a.integ, s0.t)?;
    let traj = integrate_any(&sys, &s0, &cfg, &a.constraints)?;
    if let Some(p) = &a.out {
        write_file(p, &output::trajectory_csv(&traj))?;
    }
    if let Some(e) = &traj.error {
        return Ok(Status::Failed(format!("integration stopped at t = {}: {e}", traj.last().state.t)));
    }
    let el = dynamics::euler_lagrange_residual(&sys, &traj)?;
    let drift = dynamics::energy_drift_check(&sys, &traj)?;
    let el_max = SampleResidual::max_abs(&el);
    let drift_max = SampleResidual::max_abs(&drift);
    let passed = el_max <= a.tol;
    if a.json {
        let mut v = json!({
            "check": "euler-lagrange",
            "system": sys.name(),
            "constraints": class_name(traj.constraint_class),
            "samples": traj.len(),
            "max_residuals": { "euler_lagrange": el_max, "energy_drift": drift_max },
            "thresholds": { "euler_lagrange": a.tol },
            "passed": passed,
        });
        if a.per_point {
            v["per_point"] = residual_points(&el);
        }
        io.print(&output::json(&v))?;
    } else {
        report_text(
            io,
            &format!("euler-lagrange check on {}", sys.name()),
            &[("max residual", output::float(el_max)), ("max energy drift residual", output::float(drift_max))],
        )?;
    }
    Ok(verdict(if passed { vec![] } else { vec![format!("Euler-Lagrange residual {el_max:e} exceeds {:e}", a.tol)] }))
}

/// Parse "name:lo:hi[:count]" axes.
fn parse_grid(sys: &System, g: &GridArgs) -> Res<Grid> {
    let n = sys.dim();
    let base = match &g.base {
        Some(b) => parse_vector("base", b)?,
        None => vec![0.0; n],
    };
    if base.len() != n {
        return Err(Fail::Usage(format!("--base has {} values, system dimension is {n}", base.len())));
    }
    let spec = g.grid.as_deref().ok_or_else(|| Fail::Usage("missing --grid".into()))?;
    let mut axes = Vec::new();
    for part in spec.split(',') {
        let f: Vec<&str> = part.split(':').map(str::trim).collect();
        if !(f.len() == 3 || f.len() == 4) {
            return Err(Fail::Usage(format!("--grid axis '{part}' should be name:lo:hi[:count]")));
        }
        let coord = sys
            .coords()
            .iter()
            .position(|c| c == f[0])
            .ok_or_else(|| Fail::Usage(format!("--grid: unknown coordinate '{}'", f[0])))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| Fail::Usage(format!("--grid: '{s}' is not a number")));
        let count = match f.get(3) {
            Some(c) => c.parse::<usize>().map_err(|_| Fail::Usage(format!("--grid: bad count '{c}'")))?,
            None => analysis::DEFAULT_POINTS_PER_AXIS,
        };
        axes.push(GridAxis { coord, lo: num(f[1])?, hi: num(f[2])?, count });
    }
    Grid::new(axes, base).map_err(|e| Fail::Usage(e.to_string()))
}

fn grid_json(sys: &System, grid: &Grid) -> Value {
    json!({
        "axes": grid.axes.iter().map(|a| json!({
            "coord": sys.coords()[a.coord], "lo": a.lo, "hi": a.hi, "count": a.count
        })).collect::<Vec<_>>(),
        "base": grid.base,
    })
}

fn check_hj(a: &CheckHjArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let grid = parse_grid(&sys, &a.grid)?;
    let tols = HjTolerances { closedness: a.closed_tol, residual: a.tol, energy_rel: a.energy_tol };
    let rep = analysis::hj_energy_check_with(&sys, &a.field, &grid, tols, a.exec.mode())?;
    let curve = match &a.curve_q0 {
        Some(q) => Some(analysis::integral_curve_residual(&sys, &a.field, &parse_vector("curve-q0", q)?, a.curve_t1, a.curve_dt)?),
        None => None,
    };
    let mut failures = Vec::new();
    if !rep.hj_satisfied {
        failures.push(format!("HJ residual {:e} exceeds {:e}", rep.max_residual, a.tol));
    }
    if rep.equivalence_holds == Some(false) {
        failures.push("closed field: HJ residual and energy constancy disagree".to_string());
    }
    if let Some(c) = curve {
        if c > a.curve_tol {
            failures.push(format!("integral curve residual {c:e} exceeds {:e}", a.curve_tol));
        }
    }
    if a.json {
        let mut max = json!({
            "hj": rep.max_residual,
            "closedness": rep.max_closedness,
            "energy_deviation": rep.energy_deviation,
        });
        if let Some(c) = curve {
            max["integral_curve"] = json!(c);
        }
        let mut v = json!({
            "check": "hamilton-jacobi",
            "system": sys.name(),
            "field": a.field,
            "grid": grid_json(&sys, &grid),
            "max_residuals": max,
            "energy_mean": rep.energy_mean,
            "thresholds": { "hj": a.tol, "closedness": a.closed_tol, "energy_relative": a.energy_tol },
            "closed": rep.closed,
            "hj_satisfied": rep.hj_satisfied,
            "energy_constant": rep.energy_constant,
            "equivalence_holds": rep.equivalence_holds,
            "passed": failures.is_empty(),
        });
        if a.per_point {
            v["per_point"] = serde_json::to_value(&rep.points).expect("serializable");
        }
        io.print(&output::json(&v))?;
    } else {
        let mut rows = vec![
            ("grid points", rep.points.len().to_string()),
            ("max HJ residual", output::float(rep.max_residual)),
            ("max closedness", output::float(rep.max_closedness)),
            ("energy deviation", output::float(rep.energy_deviation)),
            (
                "equivalence",
                match rep.equivalence_holds {
                    Some(true) => "holds",
                    Some(false) => "violated",
                    None => "not applicable (field not closed)",
                }
                .to_string(),
            ),
        ];
        if let Some(c) = curve {
            rows.push(("integral curve residual", output::float(c)));
        }
        report_text(io, &format!("hamilton-jacobi check of {} on {}", a.field, sys.name()), &rows)?;
    }
    Ok(verdict(failures))
}

fn jacobi_compare(a: &JacobiArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let s0 = initial_state(&sys, &a.state, &a.integ)?;
    let cfg = integrator_config(&a.integ, s0.t)?;
    let e0 = match a.e0 {
        Some(e) => e,
        None => dynamics::total_energy(&sys, &s0)?,
    };
    let cmp = analysis::jacobi_compare(&sys, e0, &s0, &cfg, a.exec.mode())?;
    if let Some(p) = &a.out {
        write_file(p, &output::trajectory_csv(&cmp.newton))?;
    }
    if let Some(p) = &a.geodesic_out {
        write_file(p, &output::trajectory_csv(&cmp.geodesic))?;
    }
    let passed = cmp.distance.max <= a.tol;
    if a.json {
        let v = json!({
            "check": "jacobi",
            "system": sys.name(),
            "e0": e0,
            "length": cmp.length,
            "max_residuals": {
                "trace_distance": cmp.distance.max,
                "newton_to_geodesic": cmp.distance.forward,
                "geodesic_to_newton": cmp.distance.backward,
            },
            "thresholds": { "trace_distance": a.tol },
            "passed": passed,
        });
        io.print(&output::json(&v))?;
    } else {
        report_text(
            io,
            &format!("jacobi metric comparison on {}", sys.name()),
            &[
                ("energy", output::float(e0)),
                ("jacobi length", output::float(cmp.length)),
                ("trace distance", output::float(cmp.distance.max)),
            ],
        )?;
    }
    Ok(verdict(if passed { vec![] } else { vec![format!("trace distance {:e} exceeds {:e}", cmp.distance.max, a.tol)] }))
}

fn noether(a: &NoetherArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let s0 = initial_state(&sys, &a.state, &a.integ)?;
    let cfg = integrator_config(&a.integ, s0.t)?;
    let traj = integrate_any(&sys, &s0, &cfg, &a.constraints)?;
    if let Some(e) = &traj.error {
        return Ok(Status::Failed(format!("integration stopped at t = {}: {e}", traj.last().state.t)));
    }
    let rep = analysis::noether_quantity(&sys, &a.field, &traj)?;
    let passed = rep.relative_drift <= a.tol;
    if a.json {
        let mut v = json!({
            "check": "noether",
            "system": sys.name(),
            "field": a.field,
            "initial_value": rep.values[0],
            "max_residuals": {
                "drift": rep.max_drift,
                "relative_drift": rep.relative_drift,
                "killing": rep.max_killing_residual,
                "force_pairing": rep.max_force_pairing,
            },
            "thresholds": { "relative_drift": a.tol },
            "passed": passed,
        });
        if a.per_point {
            v["per_point"] = Value::Array(
                rep.times.iter().zip(&rep.values).map(|(t, i)| json!({ "t": t, "value": i })).collect(),
            );
        }
        io.print(&output::json(&v))?;
    } else {
        report_text(
            io,
            &format!("noether quantity of {} on {}", a.field, sys.name()),
            &[
                ("initial value", output::float(rep.values[0])),
                ("max drift", output::float(rep.max_drift)),
                ("relative drift", output::float(rep.relative_drift)),
                ("max Killing residual", output::float(rep.max_killing_residual)),
                ("max |g(X, F)|", output::float(rep.max_force_pairing)),
            ],
        )?;
    }
    Ok(verdict(if passed { vec![] } else { vec![format!("relative drift {:e} exceeds {:e}", rep.relative_drift, a.tol)] }))
}

fn schrodinger(a: &SchrodingerArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let points: Vec<Vec<f64>> = match (&a.points, &a.grid.grid) {
        (Some(_), Some(_)) => return Err(Fail::Usage("give either --points or --grid".into())),
        (Some(p), None) => p.split(';').map(|x| parse_vector("points", x)).collect::<Res<_>>()?,
        (None, Some(_)) => parse_grid(&sys, &a.grid)?.points(),
        (None, None) => return Err(Fail::Usage("missing --points or --grid".into())),
    };
    let sign = match a.sign {
        SignArg::Minus => GradientSign::Minus,
        SignArg::Plus => GradientSign::Plus,
    };
    let rep = analysis::schrodinger_triple_check(&sys, &a.scalar, a.e0, &points, sign, a.exec.mode())?;
    let [hj, harmonic, wave] = rep.violated(a.tol);
    if a.json {
        let mut v = json!({
            "check": "schrodinger",
            "system": sys.name(),
            "scalar": a.scalar,
            "e0": a.e0,
            "sign": sign,
            "points": points.len(),
            "max_residuals": { "hj": rep.hj, "harmonic": rep.harmonic, "schrodinger": rep.schrodinger },
            "thresholds": { "all": a.tol },
            "violated": { "hj": hj, "harmonic": harmonic, "schrodinger": wave },
            "passed": !(hj || harmonic || wave),
        });
        if a.per_point {
            v["per_point"] = serde_json::to_value(&rep.points).expect("serializable");
        }
        io.print(&output::json(&v))?;
    } else {
        let flag = |b: bool| if b { "violated" } else { "holds" };
        report_text(
            io,
            &format!("schrodinger triple check of {} on {}", a.scalar, sys.name()),
            &[
                ("(i) energy level", format!("{} ({})", output::float(rep.hj), flag(hj))),
                ("(ii) harmonic", format!("{} ({})", output::float(rep.harmonic), flag(harmonic))),
                ("(iii) schrodinger", format!("{} ({})", output::float(rep.schrodinger), flag(wave))),
            ],
        )?;
    }
    let names = [(hj, "energy level"), (harmonic, "harmonic"), (wave, "schrodinger")];
    Ok(verdict(names.iter().filter(|(v, _)| *v).map(|(_, n)| format!("{n} condition violated")).collect()))
}

fn euler_fluid(a: &EulerArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let grid = parse_grid(&sys, &a.grid)?;
    let rep = analysis::stationary_euler_example(&sys, &a.field, &grid, a.exec.mode())?;
    let mut failures = Vec::new();
    if rep.hj.max_residual > a.tol {
        failures.push(format!("momentum residual {:e} exceeds {:e}", rep.hj.max_residual, a.tol));
    }
    if rep.max_divergence > a.tol {
        failures.push(format!("divergence {:e} exceeds {:e}", rep.max_divergence, a.tol));
    }
    if a.json {
        let mut v = json!({
            "check": "euler-fluid",
            "system": sys.name(),
            "field": a.field,
            "grid": grid_json(&sys, &grid),
            "max_residuals": { "momentum": rep.hj.max_residual, "divergence": rep.max_divergence },
            "thresholds": { "all": a.tol },
            "passed": failures.is_empty(),
        });
        if a.per_point {
            v["per_point"] = Value::Array(
                rep.hj
                    .points
                    .iter()
                    .zip(&rep.divergence)
                    .map(|(p, d)| json!({ "q": p.q, "residual": p.residual, "divergence": d }))
                    .collect(),
            );
        }
        io.print(&output::json(&v))?;
    } else {
        report_text(
            io,
            &format!("stationary Euler check of {} on {}", a.field, sys.name()),
            &[
                ("max momentum residual", output::float(rep.hj.max_residual)),
                ("max divergence", output::float(rep.max_divergence)),
            ],
        )?;
    }
    Ok(verdict(failures))
}

fn control_sim(a: &ControlArgs, io: &mut Io) -> Res<Status> {
    if a.json && a.out.is_none() {
        return Err(Fail::Usage("--json needs --out for the trajectory".into()));
    }
    let sys = load_system(&a.system)?;
    let s0 = initial_state(&sys, &a.state, &a.integ)?;
    let cfg = integrator_config(&a.integ, s0.t)?;
    let signal = match (&a.signal, &a.u) {
        (Some(_), Some(_)) => return Err(Fail::Usage("give either --signal or --u".into())),
        (Some(p), None) => {
            let f = fs::File::open(p).map_err(|e| Fail::Usage(format!("cannot read {}: {e}", p.display())))?;
            Signal::from_csv(f).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?
        }
        (None, Some(u)) => Signal::constant(s0.t, parse_vector("u", u)?).map_err(|e| Fail::Usage(e.to_string()))?,
        (None, None) => return Err(Fail::Usage("missing --signal or --u".into())),
    };
    if let Some(b) = &a.bounds {
        let bounds = b
            .split(',')
            .map(|p| match parse_vector("bounds", &p.replace(':', ","))?.as_slice() {
                [lo, hi] => Ok((*lo, *hi)),
                _ => Err(Fail::Usage(format!("--bounds: '{p}' should be lo:hi"))),
            })
            .collect::<Res<Vec<_>>>()?;
        signal.check_bounds(&bounds)?;
    }
    let csys = match parse_names(&a.inputs) {
        Some(inputs) => ControlSystem::with_inputs(sys, inputs, signal)?,
        None => ControlSystem::new(sys, signal)?,
    };
    let traj = control::integrate_control(&csys, &s0, &cfg)?;
    emit_trajectory(&traj, &a.out, io)?;
    if a.json {
        let mut v = trajectory_summary(&traj);
        v["check"] = json!("control");
        v["inputs"] = json!(csys.inputs());
        v["breakpoints"] = json!(csys.signal().breakpoints());
        io.print(&output::json(&v))?;
    }
    Ok(finish_run(&traj, None))
}

fn symmetric_rank(a: &RankArgs, io: &mut Io) -> Res<Status> {
    let sys = load_system(&a.system)?;
    let q = parse_vector("at", &a.at)?;
    let inputs = parse_names(&a.inputs).unwrap_or_else(|| sys.controls().iter().map(|c| c.name.clone()).collect());
    let rep = control::closure_rank(&sys, &inputs, &q, a.depth, a.include_drift)?;
    if a.json {
        let v = json!({
            "check": "symmetric-rank",
            "system": sys.name(),
            "at": rep.at,
            "inputs": inputs,
            "rank": rep.rank,
            "dimension": sys.dim(),
            "depth_reached": rep.depth_reached,
            "rank_by_depth": rep.rank_by_depth,
            "generators": rep.generators,
            "include_drift": rep.include_drift,
            "basis": rep.basis,
        });
        io.print(&output::json(&v))?;
    } else {
        let basis: Vec<String> = rep.basis.iter().map(|b| b.label.clone()).collect();
        report_text(
            io,
            &format!("symmetric closure on {}", sys.name()),
            &[
                ("rank", format!("{} of {}", rep.rank, sys.dim())),
                ("depth reached", rep.depth_reached.to_string()),
                ("generators", rep.generators.to_string()),
                ("basis", basis.join(" ")),
            ],
        )?;
    }
    Ok(match a.expect_rank {
        Some(r) if r != rep.rank => Status::Failed(format!("rank {} differs from expected {r}", rep.rank)),
        _ => Status::Pass,
    })
}
