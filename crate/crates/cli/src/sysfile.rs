//! Line-oriented system definition files (`.rms`).
//!
//! ```text
//! # planar pendulum
//! name pendulum
//! dim 2
//! coords x y
//! g[1][1] = 1
//! g[2][2] = 1
//! potential = 9.8*y
//! holonomic rod = x^2 + y^2 - 1
//! ```

use std::collections::HashMap;
use std::fmt;

use rmech::error::Error;
use rmech::system::{ConstraintKind, System, SystemBuilder};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SysFileError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SysFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for SysFileError {}

type Res<T> = std::result::Result<T, SysFileError>;

struct Line<'a> {
    no: usize,
    /// Text without the comment, untrimmed so byte offsets stay valid.
    text: &'a str,
}

impl Line<'_> {
    fn err(&self, byte: usize, message: impl Into<String>) -> SysFileError {
        let column = self.text[..byte.min(self.text.len())].chars().count() + 1;
        SysFileError { line: self.no, column, message: message.into() }
    }

    fn indent(&self) -> usize {
        self.text.len() - self.text.trim_start().len()
    }
}

fn byte_of(line: &str, sub: &str) -> usize {
    sub.as_ptr() as usize - line.as_ptr() as usize
}

/// `name[i]` with a one-based index.
fn indexed<'a>(l: &Line<'a>, s: &'a str) -> Res<(&'a str, usize)> {
    let s = s.trim();
    let open = s.find('[').ok_or_else(|| l.err(byte_of(l.text, s), "expected an index like [1]"))?;
    if !s.ends_with(']') {
        return Err(l.err(byte_of(l.text, s) + s.len(), "expected ']'"));
    }
    let idx = &s[open + 1..s.len() - 1];
    let i = one_based(l, idx)?;
    Ok((s[..open].trim(), i))
}

fn one_based(l: &Line<'_>, s: &str) -> Res<usize> {
    match s.trim().parse::<usize>() {
        Ok(i) if i >= 1 => Ok(i - 1),
        _ => Err(l.err(byte_of(l.text, s), format!("'{}' is not a 1-based index", s.trim()))),
    }
}

struct Header {
    name: Option<String>,
    dim: Option<(usize, usize)>,
    coords: Option<(Vec<String>, usize)>,
}

/// Parse and validate a system file.
pub fn parse_system_file(text: &str) -> Res<System> {
    let lines: Vec<Line> = text
        .lines()
        .enumerate()
        .map(|(i, raw)| Line { no: i + 1, text: raw.split('#').next().unwrap_or("") })
        .filter(|l| !l.text.trim().is_empty())
        .collect();

    let mut header = Header { name: None, dim: None, coords: None };
    let mut builder: Option<SystemBuilder> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();

    for l in &lines {
        let body = l.text.trim();
        let (key, rest) = match body.split_once(|c: char| c.is_whitespace() || c == '=' || c == '[') {
            Some((k, _)) => (k, &body[k.len()..]),
            None => (body, ""),
        };
        let key_at = l.indent();
        match key {
            "name" | "dim" | "coords" => {
                if builder.is_some() {
                    return Err(l.err(key_at, format!("'{key}' must come before any expression")));
                }
                if let Some(prev) = seen.insert(key.to_string(), l.no) {
                    return Err(l.err(key_at, format!("duplicate '{key}' (first declared on line {prev})")));
                }
                let value = rest.trim().trim_start_matches('=').trim();
                if value.is_empty() {
                    return Err(l.err(key_at + key.len(), format!("'{key}' needs a value")));
                }
                match key {
                    "name" => header.name = Some(value.to_string()),
                    "dim" => {
                        let n = value
                            .parse::<usize>()
                            .ok()
                            .filter(|&n| n >= 1)
                            .ok_or_else(|| l.err(byte_of(l.text, value), format!("bad dimension '{value}'")))?;
                        header.dim = Some((n, l.no));
                    }
                    _ => header.coords = Some((value.split_whitespace().map(str::to_string).collect(), l.no)),
                }
                continue;
            }
            _ => {}
        }

        let b = match &mut builder {
            Some(b) => b,
            None => {
                builder = Some(start(&header, l)?);
                builder.as_mut().unwrap()
            }
        };

        let eq = body.find('=').ok_or_else(|| l.err(key_at, format!("expected '=' after '{key}'")))?;
        let lhs = &body[..eq];
        let expr = body[eq + 1..].trim();
        let expr_at = byte_of(l.text, expr);
        if expr.is_empty() {
            return Err(l.err(byte_of(l.text, &body[eq + 1..]), "missing expression"));
        }
        let wrap = |e: Error| -> SysFileError {
            match &e {
                Error::Parse { source, .. } => l.err(expr_at + source.offset(), e.to_string()),
                _ => l.err(expr_at, e.to_string()),
            }
        };
        let lhs_rest = lhs[key.len()..].trim();
        match key {
            "g" => {
                let s = lhs.trim();
                let inner = s.strip_prefix("g[").and_then(|s| s.strip_suffix(']'));
                let Some((i, j)) = inner.and_then(|s| s.split_once("][")) else {
                    return Err(l.err(key_at, "expected g[i][j]"));
                };
                let (i, j) = (one_based(l, i)?, one_based(l, j)?);
                b.metric(i, j, expr).map_err(wrap)?;
            }
            "potential" | "force" | "workform" => {
                if key == "potential" {
                    if !lhs_rest.is_empty() {
                        return Err(l.err(key_at, "expected 'potential = <expr>'"));
                    }
                    b.potential(expr).map_err(wrap)?;
                } else {
                    let (k, i) = indexed(l, lhs)?;
                    if k != key {
                        return Err(l.err(key_at, format!("expected '{key}[i] = <expr>'")));
                    }
                    if key == "force" { b.force(i, expr) } else { b.work_form(i, expr) }.map_err(wrap)?;
                }
            }
            "holonomic" | "scalar" => {
                let name = single_name(l, lhs_rest, key)?;
                if key == "holonomic" { b.holonomic(name, expr) } else { b.scalar(name, expr) }.map_err(wrap)?;
            }
            "nonholonomic" => {
                let words: Vec<&str> = lhs_rest.split_whitespace().collect();
                let (kind, name) = match words.as_slice() {
                    [name] => (ConstraintKind::General, *name),
                    ["linear", name] => (ConstraintKind::Linear, *name),
                    ["affine", name] => (ConstraintKind::Affine, *name),
                    _ => return Err(l.err(key_at, "expected 'nonholonomic [linear|affine] <name> = <expr>'")),
                };
                b.nonholonomic(name, kind, expr).map_err(wrap)?;
            }
            "field" | "control" => {
                let (name, i) = indexed(l, lhs_rest)?;
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(l.err(key_at, format!("expected '{key} <name>[i] = <expr>'")));
                }
                if key == "field" { b.field(name, i, expr) } else { b.control(name, i, expr) }.map_err(wrap)?;
            }
            _ => return Err(l.err(key_at, format!("unknown key '{key}'"))),
        }
    }

    let last = lines.last().map_or(1, |l| l.no);
    let b = match builder {
        Some(b) => b,
        None => start(&header, &Line { no: last, text: "" })?,
    };
    b.build().map_err(|e| SysFileError { line: last, column: 1, message: e.to_string() })
}

fn single_name<'a>(l: &Line<'_>, s: &'a str, key: &str) -> Res<&'a str> {
    let s = s.trim();
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(l.err(l.indent(), format!("expected '{key} <name> = <expr>'")));
    }
    Ok(s)
}

fn start(h: &Header, l: &Line<'_>) -> Res<SystemBuilder> {
    let (coords, coords_line) = h.coords.clone().ok_or_else(|| l.err(l.indent(), "'coords' must be declared first"))?;
    if let Some((n, dim_line)) = h.dim {
        if n != coords.len() {
            return Err(SysFileError {
                line: coords_line.max(dim_line),
                column: 1,
                message: format!("dim {n} on line {dim_line} but {} coordinates declared", coords.len()),
            });
        }
    }
    let refs: Vec<&str> = coords.iter().map(String::as_str).collect();
    let name = h.name.clone().unwrap_or_else(|| "system".to_string());
    System::builder(name, &refs).map_err(|e| SysFileError { line: coords_line, column: 1, message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_flat_line() {
        let sys = parse_system_file("dim 1\ncoords q\ng[1][1] = 1\n").unwrap();
        assert_eq!(sys.dim(), 1);
        let s = rmech::PhaseState::new(0.0, vec![0.4], vec![3.0]);
        assert_eq!(rmech::dynamics::kinetic_energy(&sys, &s).unwrap(), 4.5);
    }

    #[test]
    fn pendulum_file() {
        let text = "# pendulum\nname pendulum\ndim 2\ncoords x y\ng[1][1] = 1\ng[2][2] = 1\npotential = 9.8*y\nholonomic rod = x^2 + y^2 - 1\n";
        let sys = parse_system_file(text).unwrap();
        assert_eq!(sys.name(), "pendulum");
        assert_eq!(sys.holonomic().len(), 1);
        assert_eq!(sys.holonomic()[0].name, "rod");
    }

    #[test]
    fn duplicate_metric_entry() {
        let e = parse_system_file("dim 2\ncoords x y\ng[1][2] = x\ng[2][1] = y\n").unwrap_err();
        assert_eq!(e.line, 4);
        assert!(e.message.contains("duplicate metric entry"), "{e}");
    }

    #[test]
    fn located_diagnostics() {
        let e = parse_system_file("dim 1\ncoords q\ng[1][1] = 1 + * q\n").unwrap_err();
        assert_eq!((e.line, e.column), (3, 15));
        let e = parse_system_file("dim 1\ncoords q\ng[1][1] = 1 + z\n").unwrap_err();
        assert_eq!((e.line, e.column), (3, 15));
        assert!(e.message.contains("'z'"));
        let e = parse_system_file("dim 1\ncoords q\ng[1][1] = v_q\n").unwrap_err();
        assert!(e.message.contains("may not reference 'v_q'"), "{e}");
        let e = parse_system_file("dim 1\ncoords q\ng[1][1] = 1\nmass = 2\n").unwrap_err();
        assert_eq!((e.line, e.column), (4, 1));
        assert!(e.message.contains("unknown key"));
        let e = parse_system_file("dim 3\ncoords x y\ng[1][1] = 1\n").unwrap_err();
        assert!(e.message.contains("dim 3"));
        let e = parse_system_file("dim 1\ndim 1\ncoords q\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_system_file("dim 1\ncoords q\ng[1][1] = 1\nforce[2] = 1\n").unwrap_err();
        assert!(e.message.contains("out of range"), "{e}");
    }

    #[test]
    fn every_key() {
        let text = "\
name knife
coords x y th
g[1][1] = 1
g[2][2] = 1
g[3][3] = 1
force[1] = -v_x
nonholonomic linear roll = sin(th)*v_x - cos(th)*v_y
field X[1] = 1
scalar S = x*y
control push[3] = 1
";
        let sys = parse_system_file(text).unwrap();
        assert_eq!(sys.nonholonomic()[0].kind, ConstraintKind::Linear);
        assert_eq!(sys.fields()[0].name, "X");
        assert_eq!(sys.controls()[0].components.len(), 3);
        assert!(sys.scalar("S").is_ok());
        let e = parse_system_file("coords x\ng[1][1] = 1\nworkform[1] = 1\nforce[1] = 1\n").unwrap_err();
        assert!(e.message.contains("mutually exclusive"));
    }
}
