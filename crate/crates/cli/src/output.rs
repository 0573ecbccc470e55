//! CSV and JSON emission. Floats use the shortest representation that
//! round-trips, so identical runs give byte-identical files.

use std::io::Write;

use rmech::dynamics::{ConstraintClass, Trajectory};

pub fn float(x: f64) -> String {
    format!("{x:?}")
}

pub fn trajectory_header(traj: &Trajectory) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(traj.coords.iter().map(|c| format!("q:{c}")));
    h.extend(traj.coords.iter().map(|c| format!("v:{c}")));
    h.push("K".into());
    h.push("E".into());
    h.extend(traj.constraint_names.iter().map(|c| format!("phi:{c}")));
    h.extend(traj.constraint_names.iter().map(|c| format!("lambda:{c}")));
    if traj.constraint_class != ConstraintClass::None {
        h.extend(traj.coords.iter().map(|c| format!("R:{c}")));
    }
    h
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj))?;
    let constrained = traj.constraint_class != ConstraintClass::None;
    for s in &traj.samples {
        let mut row = vec![float(s.state.t)];
        row.extend(s.state.q.iter().chain(&s.state.v).map(|x| float(*x)));
        row.push(float(s.kinetic));
        row.push(float(s.energy));
        row.extend(s.phi.iter().chain(&s.lambda).map(|x| float(*x)));
        if constrained {
            row.extend(s.constraint_force.iter().map(|x| float(*x)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut buf = Vec::new();
    write_trajectory(traj, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Pretty JSON with a trailing newline.
pub fn json(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}
