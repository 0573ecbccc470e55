//! Declarative description of a Newtonian mechanical system in one global chart.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, Dual1, Dual2, EvalError, Expression, Scalar, SymbolTable};

/// Which symbols an expression slot may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dependence {
    /// Configuration coordinates only.
    Position,
    /// Coordinates and time.
    PositionTime,
    /// Coordinates, velocities and time.
    Phase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    General,
    /// `a_j(q) v^j`.
    Linear,
    /// `a_j(q) v^j + b(q)`.
    Affine,
}

#[derive(Clone, Debug)]
pub struct NamedExpr {
    pub name: String,
    pub expr: Expression,
}

#[derive(Clone, Debug)]
pub struct NonholonomicConstraint {
    pub name: String,
    pub expr: Expression,
    pub kind: ConstraintKind,
}

#[derive(Clone, Debug)]
pub struct NamedField {
    pub name: String,
    pub components: Vec<Expression>,
}

/// A Newtonian system `(Q, g, F)` together with its constraints and the
/// auxiliary fields the analysis tools refer to by name.
///
/// Symbols are laid out as `q_1..q_n, v_1..v_n, t`.
#[derive(Clone, Debug)]
pub struct System {
    name: String,
    coords: Vec<String>,
    symbols: SymbolTable,
    metric: Vec<Vec<Expression>>,
    potential: Option<Expression>,
    force: Option<Vec<Expression>>,
    work_form: Option<Vec<Expression>>,
    holonomic: Vec<NamedExpr>,
    nonholonomic: Vec<NonholonomicConstraint>,
    fields: Vec<NamedField>,
    scalars: Vec<NamedExpr>,
    controls: Vec<NamedField>,
    /// Expressions that must stay strictly positive wherever the metric is used.
    metric_guards: Vec<Expression>,
}

pub fn velocity_name(coord: &str) -> String {
    format!("v_{coord}")
}

fn symbol_table(coords: &[String]) -> SymbolTable {
    let mut names: Vec<String> = coords.to_vec();
    names.extend(coords.iter().map(|c| velocity_name(c)));
    names.push("t".to_string());
    SymbolTable::new(names)
}

impl System {
    pub fn builder(name: impl Into<String>, coords: &[&str]) -> Result<SystemBuilder> {
        SystemBuilder::new(name.into(), coords.iter().map(|s| s.to_string()).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn q_id(&self, i: usize) -> usize {
        i
    }

    pub fn v_id(&self, i: usize) -> usize {
        self.dim() + i
    }

    pub fn t_id(&self) -> usize {
        2 * self.dim()
    }

    pub fn metric_entry(&self, i: usize, j: usize) -> &Expression {
        &self.metric[i][j]
    }

    pub fn potential(&self) -> Option<&Expression> {
        self.potential.as_ref()
    }

    pub fn force(&self) -> Option<&[Expression]> {
        self.force.as_deref()
    }

    pub fn work_form(&self) -> Option<&[Expression]> {
        self.work_form.as_deref()
    }

    pub fn holonomic(&self) -> &[NamedExpr] {
        &self.holonomic
    }

    pub fn nonholonomic(&self) -> &[NonholonomicConstraint] {
        &self.nonholonomic
    }

    pub fn fields(&self) -> &[NamedField] {
        &self.fields
    }

    pub fn scalars(&self) -> &[NamedExpr] {
        &self.scalars
    }

    pub fn controls(&self) -> &[NamedField] {
        &self.controls
    }

    pub fn metric_guards(&self) -> &[Expression] {
        &self.metric_guards
    }

    pub fn has_forcing(&self) -> bool {
        self.potential.is_some() || self.force.is_some() || self.work_form.is_some()
    }

    /// True when the potential depends on `t`.
    pub fn potential_is_time_dependent(&self) -> bool {
        self.potential.as_ref().is_some_and(|v| v.free_vars().contains(&self.t_id()))
    }

    pub fn field(&self, name: &str) -> Result<&[Expression]> {
        self.fields
            .iter()
            .chain(&self.controls)
            .find(|f| f.name == name)
            .map(|f| f.components.as_slice())
            .ok_or_else(|| Error::Unknown { kind: "vector field", name: name.to_string() })
    }

    pub fn scalar(&self, name: &str) -> Result<&Expression> {
        self.scalars
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.expr)
            .ok_or_else(|| Error::Unknown { kind: "scalar field", name: name.to_string() })
    }

    pub fn control(&self, name: &str) -> Result<&[Expression]> {
        self.controls
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.components.as_slice())
            .ok_or_else(|| Error::Unknown { kind: "control field", name: name.to_string() })
    }

    /// Symbol values for a phase point.
    pub fn values(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.dim() + 1);
        out.extend_from_slice(q);
        out.extend_from_slice(v);
        out.push(t);
        out
    }

    /// Symbol values for a configuration; velocities and time are zero.
    pub fn position_values(&self, q: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; 2 * n + 1];
        out[..n].copy_from_slice(q);
        out
    }

    /// Replace the potential.
    pub fn with_potential(mut self, potential: Option<Expression>) -> Result<System> {
        if let Some(p) = &potential {
            check_dependence(&self, p, Dependence::PositionTime, "potential")?;
        }
        self.potential = potential;
        Ok(self)
    }

    /// Replace the force field. Fails if a work form is declared.
    pub fn with_force(mut self, force: Option<Vec<Expression>>) -> Result<System> {
        if let Some(f) = &force {
            if self.work_form.is_some() {
                return Err(Error::InvalidSystem("force and workform are mutually exclusive".into()));
            }
            check_components(&self, f, Dependence::Phase, "force")?;
        }
        self.force = force;
        Ok(self)
    }

    pub fn with_field(mut self, name: &str, components: Vec<Expression>) -> Result<System> {
        check_components(&self, &components, Dependence::Position, "field")?;
        self.fields.retain(|f| f.name != name);
        self.fields.push(NamedField { name: name.to_string(), components });
        Ok(self)
    }

    pub fn with_scalar(mut self, name: &str, expr: Expression) -> Result<System> {
        check_dependence(&self, &expr, Dependence::Position, "scalar")?;
        self.scalars.retain(|f| f.name != name);
        self.scalars.push(NamedExpr { name: name.to_string(), expr });
        Ok(self)
    }

    /// Drop every constraint, keeping metric and forcing.
    pub fn unconstrained(mut self) -> System {
        self.holonomic.clear();
        self.nonholonomic.clear();
        self
    }

    /// Geodesic version: same metric, no forcing, no constraints.
    pub fn geodesic_only(mut self) -> System {
        self.potential = None;
        self.force = None;
        self.work_form = None;
        self.unconstrained()
    }

    /// Conformally rescaled copy `factor * g` with forcing removed; `factor`
    /// must remain positive wherever the metric is evaluated.
    pub(crate) fn conformal(&self, factor: &Expression, name: String) -> Result<System> {
        check_dependence(self, factor, Dependence::Position, "conformal factor")?;
        let n = self.dim();
        let metric = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| Expression::binary(BinaryOp::Mul, factor, &self.metric[i][j]))
                    .collect()
            })
            .collect();
        let mut guards = self.metric_guards.clone();
        guards.push(factor.clone());
        Ok(System {
            name,
            coords: self.coords.clone(),
            symbols: self.symbols.clone(),
            metric,
            potential: None,
            force: None,
            work_form: None,
            holonomic: Vec::new(),
            nonholonomic: Vec::new(),
            fields: self.fields.clone(),
            scalars: self.scalars.clone(),
            controls: self.controls.clone(),
            metric_guards: guards,
        })
    }
}

fn dependence_symbols(sys: &System, dep: Dependence) -> BTreeSet<usize> {
    let n = sys.dim();
    match dep {
        Dependence::Position => (0..n).collect(),
        Dependence::PositionTime => (0..n).chain([2 * n]).collect(),
        Dependence::Phase => (0..=2 * n).collect(),
    }
}

fn check_dependence(sys: &System, e: &Expression, dep: Dependence, what: &str) -> Result<()> {
    let allowed = dependence_symbols(sys, dep);
    if let Some(bad) = e.free_vars().into_iter().find(|id| !allowed.contains(id)) {
        return Err(Error::InvalidSystem(format!(
            "{what} may not reference '{}'",
            sys.symbols.name(bad)
        )));
    }
    Ok(())
}

fn check_components(sys: &System, c: &[Expression], dep: Dependence, what: &str) -> Result<()> {
    if c.len() != sys.dim() {
        return Err(Error::InvalidSystem(format!(
            "{what} has {} components, system dimension is {}",
            c.len(),
            sys.dim()
        )));
    }
    for e in c {
        check_dependence(sys, e, dep, what)?;
    }
    Ok(())
}

/// Incremental, validating constructor for [`System`].
///
/// Indices are zero-based here; the text format is one-based.
#[derive(Debug)]
pub struct SystemBuilder {
    sys: System,
    metric_set: Vec<Vec<bool>>,
    force: Vec<Option<Expression>>,
    work_form: Vec<Option<Expression>>,
    fields: Vec<(String, Vec<Option<Expression>>, bool)>,
}

fn valid_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SystemBuilder {
    fn new(name: String, coords: Vec<String>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidSystem("dimension must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &coords {
            if !valid_ident(c) || c == "t" || c.starts_with("v_") {
                return Err(Error::InvalidSystem(format!("'{c}' is not a usable coordinate name")));
            }
            if crate::expr::Function::from_name(c).is_some() {
                return Err(Error::InvalidSystem(format!("'{c}' is a reserved function name")));
            }
            if !seen.insert(c.clone()) {
                return Err(Error::InvalidSystem(format!("coordinate '{c}' declared twice")));
            }
        }
        let n = coords.len();
        let symbols = symbol_table(&coords);
        let zero = Expression::constant(0.0);
        let sys = System {
            name,
            coords,
            symbols,
            metric: vec![vec![zero; n]; n],
            potential: None,
            force: None,
            work_form: None,
            holonomic: Vec::new(),
            nonholonomic: Vec::new(),
            fields: Vec::new(),
            scalars: Vec::new(),
            controls: Vec::new(),
            metric_guards: Vec::new(),
        };
        Ok(SystemBuilder {
            sys,
            metric_set: vec![vec![false; n]; n],
            force: vec![None; n],
            work_form: vec![None; n],
            fields: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.sys.symbols
    }

    fn parse(&self, text: &str, dep: Dependence, context: &str) -> Result<Expression> {
        let e = Expression::parse(text, &self.sys.symbols)
            .map_err(|source| Error::Parse { context: context.to_string(), source })?;
        check_dependence(&self.sys, &e, dep, context)?;
        Ok(e)
    }

    fn index(&self, i: usize, context: &str) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::InvalidSystem(format!(
                "{context}: index {} out of range 1..={}",
                i + 1,
                self.dim()
            )));
        }
        Ok(())
    }

    /// Sets `g_ij` (and its mirror `g_ji`).
    pub fn metric(&mut self, i: usize, j: usize, text: &str) -> Result<&mut Self> {
        let ctx = format!("g[{}][{}]", i + 1, j + 1);
        self.index(i, &ctx)?;
        self.index(j, &ctx)?;
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        if self.metric_set[a][b] {
            return Err(Error::InvalidSystem(format!(
                "duplicate metric entry {ctx} (g[{}][{}] already declared)",
                a + 1,
                b + 1
            )));
        }
        let e = self.parse(text, Dependence::Position, &ctx)?;
        self.metric_set[a][b] = true;
        self.sys.metric[a][b] = e.clone();
        self.sys.metric[b][a] = e;
        Ok(self)
    }

    pub fn potential(&mut self, text: &str) -> Result<&mut Self> {
        if self.sys.potential.is_some() {
            return Err(Error::InvalidSystem("duplicate potential".into()));
        }
        self.sys.potential = Some(self.parse(text, Dependence::PositionTime, "potential")?);
        Ok(self)
    }

    pub fn force(&mut self, i: usize, text: &str) -> Result<&mut Self> {
        let ctx = format!("force[{}]", i + 1);
        self.index(i, &ctx)?;
        if self.force[i].is_some() {
            return Err(Error::InvalidSystem(format!("duplicate {ctx}")));
        }
        self.force[i] = Some(self.parse(text, Dependence::Phase, &ctx)?);
        Ok(self)
    }

    pub fn work_form(&mut self, i: usize, text: &str) -> Result<&mut Self> {
        let ctx = format!("workform[{}]", i + 1);
        self.index(i, &ctx)?;
        if self.work_form[i].is_some() {
            return Err(Error::InvalidSystem(format!("duplicate {ctx}")));
        }
        self.work_form[i] = Some(self.parse(text, Dependence::Phase, &ctx)?);
        Ok(self)
    }

    fn check_name_free(&self, name: &str, taken: impl Iterator<Item = String>) -> Result<()> {
        if !valid_ident(name) {
            return Err(Error::InvalidSystem(format!("'{name}' is not a valid name")));
        }
        if taken.into_iter().any(|n| n == name) {
            return Err(Error::InvalidSystem(format!("duplicate name '{name}'")));
        }
        Ok(())
    }

    pub fn holonomic(&mut self, name: &str, text: &str) -> Result<&mut Self> {
        self.check_name_free(
            name,
            self.sys
                .holonomic
                .iter()
                .map(|h| h.name.clone())
                .chain(self.sys.nonholonomic.iter().map(|h| h.name.clone())),
        )?;
        let expr = self.parse(text, Dependence::Position, &format!("holonomic {name}"))?;
        self.sys.holonomic.push(NamedExpr { name: name.to_string(), expr });
        Ok(self)
    }

    pub fn nonholonomic(&mut self, name: &str, kind: ConstraintKind, text: &str) -> Result<&mut Self> {
        self.check_name_free(
            name,
            self.sys
                .holonomic
                .iter()
                .map(|h| h.name.clone())
                .chain(self.sys.nonholonomic.iter().map(|h| h.name.clone())),
        )?;
        let expr = self.parse(text, Dependence::Phase, &format!("nonholonomic {name}"))?;
        self.sys.nonholonomic.push(NonholonomicConstraint { name: name.to_string(), expr, kind });
        Ok(self)
    }

    fn component(&mut self, control: bool, name: &str, i: usize, text: &str) -> Result<&mut Self> {
        let kw = if control { "control" } else { "field" };
        let ctx = format!("{kw} {name}[{}]", i + 1);
        self.index(i, &ctx)?;
        if !valid_ident(name) {
            return Err(Error::InvalidSystem(format!("'{name}' is not a valid name")));
        }
        let e = self.parse(text, Dependence::Position, &ctx)?;
        let n = self.dim();
        let slot = match self.fields.iter_mut().position(|(nm, _, _)| nm == name) {
            Some(k) => {
                if self.fields[k].2 != control {
                    return Err(Error::InvalidSystem(format!(
                        "'{name}' is declared both as field and control"
                    )));
                }
                k
            }
            None => {
                self.fields.push((name.to_string(), vec![None; n], control));
                self.fields.len() - 1
            }
        };
        if self.fields[slot].1[i].is_some() {
            return Err(Error::InvalidSystem(format!("duplicate {ctx}")));
        }
        self.fields[slot].1[i] = Some(e);
        Ok(self)
    }

    /// Component `i` of the named vector field. Missing components are zero.
    pub fn field(&mut self, name: &str, i: usize, text: &str) -> Result<&mut Self> {
        self.component(false, name, i, text)
    }

    /// Component `i` of the named control input field.
    pub fn control(&mut self, name: &str, i: usize, text: &str) -> Result<&mut Self> {
        self.component(true, name, i, text)
    }

    pub fn scalar(&mut self, name: &str, text: &str) -> Result<&mut Self> {
        self.check_name_free(name, self.sys.scalars.iter().map(|s| s.name.clone()))?;
        let expr = self.parse(text, Dependence::Position, &format!("scalar {name}"))?;
        self.sys.scalars.push(NamedExpr { name: name.to_string(), expr });
        Ok(self)
    }

    fn collect(slots: &[Option<Expression>]) -> Option<Vec<Expression>> {
        if slots.iter().all(Option::is_none) {
            return None;
        }
        Some(slots.iter().map(|s| s.clone().unwrap_or_else(|| Expression::constant(0.0))).collect())
    }

    pub fn build(&self) -> Result<System> {
        let mut sys = self.sys.clone();
        sys.force = Self::collect(&self.force);
        sys.work_form = Self::collect(&self.work_form);
        if sys.force.is_some() && sys.work_form.is_some() {
            return Err(Error::InvalidSystem("force and workform are mutually exclusive".into()));
        }
        for (name, slots, control) in &self.fields {
            let field = NamedField { name: name.clone(), components: Self::collect(slots).unwrap() };
            if *control {
                sys.controls.push(field);
            } else {
                sys.fields.push(field);
            }
        }
        let n = sys.dim();
        if sys.holonomic.len() >= n && !sys.holonomic.is_empty() {
            return Err(Error::InvalidSystem(format!(
                "{} holonomic constraints on a {n}-dimensional system (need fewer than {n})",
                sys.holonomic.len()
            )));
        }
        if sys.nonholonomic.len() >= n && !sys.nonholonomic.is_empty() {
            return Err(Error::InvalidSystem(format!(
                "{} nonholonomic constraints on a {n}-dimensional system (need fewer than {n})",
                sys.nonholonomic.len()
            )));
        }
        Ok(sys)
    }
}

/// Evaluate with first-order seeds on the listed symbol ids.
pub(crate) fn eval_dual1(expr: &Expression, values: &[f64], seeds: &[usize]) -> Result<Dual1, EvalError> {
    let mut vars: Vec<Dual1> = values.iter().map(|&v| Dual1::constant(v)).collect();
    for (k, &id) in seeds.iter().enumerate() {
        vars[id] = Dual1::variable(values[id], k, seeds.len());
    }
    expr.eval(&vars)
}

pub(crate) fn eval_dual2(expr: &Expression, values: &[f64], seeds: &[usize]) -> Result<Dual2, EvalError> {
    let mut vars: Vec<Dual2> = values.iter().map(|&v| Dual2::constant(v)).collect();
    for (k, &id) in seeds.iter().enumerate() {
        vars[id] = Dual2::variable(values[id], k, seeds.len());
    }
    expr.eval(&vars)
}
