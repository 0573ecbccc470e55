//! Shared CLI cases and golden-file helpers.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Case {
    pub name: &'static str,
    pub args: &'static [&'static str],
    pub exit: i32,
    /// Output files written through `--out`/`--geodesic-out`, as (flag, golden suffix).
    pub files: &'static [(&'static str, &'static str)],
}

pub const CASES: &[Case] = &[
    Case {
        name: "simulate_pendulum",
        args: &[
            "simulate", "--system", "systems/pendulum.rms", "--q0", "0.09983341664682815,-0.9950041652780258",
            "--v0", "0,0", "--t1", "1", "--dt", "1e-2", "--json",
        ],
        exit: 0,
        files: &[("--out", "csv")],
    },
    Case {
        name: "simulate_knife",
        args: &["simulate", "--system", "systems/knife.rms", "--q0", "0,0,0", "--v0", "1,0,1", "--t1", "1", "--dt", "1e-2"],
        exit: 0,
        files: &[("--out", "csv")],
    },
    Case {
        name: "simulate_line",
        args: &["simulate", "--system", "systems/line.rms", "--q0", "0.5", "--v0", "-1", "--t1", "0.1", "--dt", "0.025"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "geodesic_sphere",
        args: &[
            "geodesic", "--system", "systems/sphere.rms", "--q0", "1.2,0", "--v0", "0.3,1", "--t1", "1", "--dt", "1e-2",
            "--json",
        ],
        exit: 0,
        files: &[("--out", "csv")],
    },
    Case {
        name: "check_el_oscillator",
        args: &["check-el", "--system", "systems/oscillator.rms", "--state", "tests/inputs/state.json", "--t1", "2", "--json"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "check_el_pendulum",
        args: &["check-el", "--system", "systems/pendulum.rms", "--q0", "0,-1", "--v0", "1,0", "--t1", "2", "--json"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "check_hj_freefall",
        args: &[
            "check-hj", "--system", "systems/freefall.rms", "--field", "X", "--grid", "y:-1:0.9:20", "--curve-q0", "0,0.9",
            "--curve-t1", "0.5", "--json", "--per-point",
        ],
        exit: 0,
        files: &[],
    },
    Case {
        name: "check_hj_rotation",
        args: &["check-hj", "--system", "systems/oscillator.rms", "--field", "rot", "--grid", "x:-1:1:3,y:-1:1:3"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "jacobi_oscillator",
        args: &[
            "jacobi-compare", "--system", "systems/oscillator.rms", "--q0", "1,0", "--v0", "0,0.5", "--t1", "6.283185307179586",
            "--dt", "1e-2", "--json",
        ],
        exit: 0,
        files: &[("--geodesic-out", "geodesic.csv")],
    },
    Case {
        name: "noether_oscillator",
        args: &[
            "noether", "--system", "systems/oscillator.rms", "--field", "rot", "--q0", "1,0", "--v0", "0,0.5", "--t1", "10",
            "--json",
        ],
        exit: 0,
        files: &[],
    },
    Case {
        name: "noether_tilted",
        args: &["noether", "--system", "systems/tilted.rms", "--field", "rot", "--q0", "1,0", "--v0", "0,0.5", "--t1", "10"],
        exit: 2,
        files: &[],
    },
    Case {
        name: "schrodinger_plane_wave",
        args: &[
            "schrodinger-check", "--system", "systems/plane_wave.rms", "--scalar", "S", "--e0", "2", "--grid", "x:-1:1:9",
            "--json",
        ],
        exit: 0,
        files: &[],
    },
    Case {
        name: "schrodinger_quadratic",
        args: &[
            "schrodinger-check", "--system", "systems/plane_wave.rms", "--scalar", "Q", "--e0", "2", "--points", "1;-1",
            "--json",
        ],
        exit: 2,
        files: &[],
    },
    Case {
        name: "euler_rigid_flow",
        args: &["euler-fluid", "--system", "systems/rigid_flow.rms", "--field", "X", "--grid", "x:-1:1:5,y:-1:1:5", "--json"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "control_bangbang",
        args: &[
            "control-sim", "--system", "systems/pushed_line.rms", "--q0", "0", "--v0", "0", "--signal", "systems/bangbang.csv",
            "--t1", "2", "--dt", "0.05", "--bounds", "-1:1", "--json",
        ],
        exit: 0,
        files: &[("--out", "csv")],
    },
    Case {
        name: "rank_shear",
        args: &["symmetric-rank", "--system", "systems/shear_input.rms", "--inputs", "Y", "--at", "0.3,0.1", "--depth", "2", "--json"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "rank_axes",
        args: &["symmetric-rank", "--system", "systems/shear_input.rms", "--inputs", "e1,e2", "--at", "0,0", "--expect-rank", "2"],
        exit: 0,
        files: &[],
    },
    Case {
        name: "error_duplicate_metric",
        args: &["simulate", "--system", "tests/inputs/duplicate_metric.rms", "--q0", "0,0", "--t1", "1"],
        exit: 2,
        files: &[],
    },
    Case {
        name: "error_bad_expression",
        args: &["simulate", "--system", "tests/inputs/bad_expression.rms", "--q0", "0", "--t1", "1"],
        exit: 2,
        files: &[],
    },
    Case {
        name: "error_off_constraint",
        args: &["simulate", "--system", "systems/pendulum.rms", "--q0", "0.0998,-0.995", "--v0", "0,0", "--t1", "1"],
        exit: 2,
        files: &[],
    },
    Case {
        name: "error_state_conflict",
        args: &["simulate", "--system", "systems/oscillator.rms", "--q0", "1,0", "--state", "tests/inputs/state.json", "--t1", "1"],
        exit: 1,
        files: &[],
    },
];

pub struct RunOutput {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub files: Vec<(String, Vec<u8>)>,
}

pub fn run(case: &Case, dir: &Path, extra: &[&str]) -> RunOutput {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rmech"));
    cmd.current_dir(env!("CARGO_MANIFEST_DIR")).args(case.args).args(extra);
    let mut paths = Vec::new();
    for (flag, suffix) in case.files {
        let p = dir.join(format!("{}.{suffix}", case.name));
        cmd.arg(flag).arg(&p);
        paths.push((suffix.to_string(), p));
    }
    let out = cmd.output().expect("binary runs");
    let files = paths.into_iter().map(|(s, p)| (s, fs::read(&p).unwrap_or_default())).collect();
    RunOutput { code: out.status.code().unwrap_or(-1), stdout: out.stdout, stderr: out.stderr, files }
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn check_golden(name: &str, actual: &[u8]) {
    let path = golden_dir().join(name);
    if std::env::var_os("RMECH_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    assert!(golden_matches(name, actual), "{name} differs from its golden file");
}

pub fn golden_matches(name: &str, actual: &[u8]) -> bool {
    fs::read(golden_dir().join(name)).is_ok_and(|expected| expected == actual)
}

