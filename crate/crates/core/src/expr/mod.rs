//! Scalar expression language with exact forward-mode derivatives.
//!
//! Expressions are parsed against a [`SymbolTable`] and are immutable
//! afterwards. They evaluate over any [`Scalar`]: plain `f64`, first-order
//! [`Dual1`], second-order [`Dual2`], or arbitrary-order [`Jet`].

mod dual;
mod jet;
mod parser;
mod scalar;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use dual::{Dual1, Dual2};
pub use jet::{Jet, JetSpace};
pub use scalar::{Elementary, Scalar};

use scalar::pow_real;

/// Ordered list of variable names; a symbol's id is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
}

impl SymbolTable {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        SymbolTable { names: names.into_iter().map(Into::into).collect() }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function '{name}' at byte {offset} takes exactly 1 argument, found {found}")]
    Arity { offset: usize, name: String, found: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("domain error at byte {offset}: {message}")]
    Domain { offset: usize, message: String },
    #[error("variable '{name}' is not bound")]
    Unbound { name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Function {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Function {
    pub const ALL: [Function; 7] = [
        Function::Sin,
        Function::Cos,
        Function::Tan,
        Function::Exp,
        Function::Log,
        Function::Sqrt,
        Function::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Tan => "tan",
            Function::Exp => "exp",
            Function::Log => "log",
            Function::Sqrt => "sqrt",
            Function::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug)]
pub(crate) enum Node {
    Number { value: f64, offset: usize },
    Var { id: usize, offset: usize },
    Neg { arg: Arc<Node>, offset: usize },
    Binary { op: BinaryOp, lhs: Arc<Node>, rhs: Arc<Node>, offset: usize },
    Call { func: Function, arg: Arc<Node>, offset: usize },
}

/// An immutable expression tree. Cloning shares the tree.
#[derive(Clone, Debug)]
pub struct Expression {
    root: Arc<Node>,
}

fn domain(offset: usize, message: impl Into<String>) -> EvalError {
    EvalError::Domain { offset, message: message.into() }
}

impl Expression {
    pub fn parse(text: &str, symbols: &SymbolTable) -> Result<Expression, ParseError> {
        parser::parse(text, symbols)
    }

    pub fn constant(value: f64) -> Expression {
        Expression { root: Arc::new(Node::Number { value, offset: 0 }) }
    }

    pub fn variable(id: usize) -> Expression {
        Expression { root: Arc::new(Node::Var { id, offset: 0 }) }
    }

    pub fn binary(op: BinaryOp, lhs: &Expression, rhs: &Expression) -> Expression {
        Expression {
            root: Arc::new(Node::Binary { op, lhs: lhs.root.clone(), rhs: rhs.root.clone(), offset: 0 }),
        }
    }

    pub fn neg(&self) -> Expression {
        Expression { root: Arc::new(Node::Neg { arg: self.root.clone(), offset: 0 }) }
    }

    pub fn call(func: Function, arg: &Expression) -> Expression {
        Expression { root: Arc::new(Node::Call { func, arg: arg.root.clone(), offset: 0 }) }
    }

    /// Literal value if the tree is a bare number.
    pub fn as_constant(&self) -> Option<f64> {
        match &*self.root {
            Node::Number { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// Symbol ids referenced anywhere in the tree.
    pub fn free_vars(&self) -> BTreeSet<usize> {
        fn walk(n: &Node, out: &mut BTreeSet<usize>) {
            match n {
                Node::Number { .. } => {}
                Node::Var { id, .. } => {
                    out.insert(*id);
                }
                Node::Neg { arg, .. } | Node::Call { arg, .. } => walk(arg, out),
                Node::Binary { lhs, rhs, .. } => {
                    walk(lhs, out);
                    walk(rhs, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    /// Copy of the tree with every symbol id passed through `map`.
    pub fn remap(&self, map: &dyn Fn(usize) -> usize) -> Expression {
        fn walk(n: &Node, map: &dyn Fn(usize) -> usize) -> Arc<Node> {
            Arc::new(match n {
                Node::Number { value, offset } => Node::Number { value: *value, offset: *offset },
                Node::Var { id, offset } => Node::Var { id: map(*id), offset: *offset },
                Node::Neg { arg, offset } => Node::Neg { arg: walk(arg, map), offset: *offset },
                Node::Call { func, arg, offset } => {
                    Node::Call { func: *func, arg: walk(arg, map), offset: *offset }
                }
                Node::Binary { op, lhs, rhs, offset } => Node::Binary {
                    op: *op,
                    lhs: walk(lhs, map),
                    rhs: walk(rhs, map),
                    offset: *offset,
                },
            })
        }
        Expression { root: walk(&self.root, map) }
    }

    /// Evaluate with one [`Scalar`] per symbol id.
    pub fn eval<T: Scalar>(&self, vars: &[T]) -> Result<T, EvalError> {
        eval_node(&self.root, vars)
    }

    /// Render against `symbols` in a fully parenthesized form that parses back
    /// to the same tree.
    pub fn display<'a>(&'a self, symbols: &'a SymbolTable) -> impl fmt::Display + 'a {
        Pretty { node: &self.root, symbols }
    }
}

fn eval_node<T: Scalar>(node: &Node, vars: &[T]) -> Result<T, EvalError> {
    match node {
        Node::Number { value, .. } => Ok(T::constant(*value)),
        Node::Var { id, .. } => Ok(vars[*id].clone()),
        Node::Neg { arg, .. } => Ok(eval_node(arg, vars)?.neg()),
        Node::Call { func, arg, offset } => {
            let x = eval_node(arg, vars)?;
            let v = x.value();
            let f = match func {
                Function::Sin => Elementary::Sin,
                Function::Cos => Elementary::Cos,
                Function::Tan => Elementary::Tan,
                Function::Exp => Elementary::Exp,
                Function::Abs => Elementary::Abs,
                Function::Log => {
                    if v <= 0.0 {
                        return Err(domain(*offset, format!("log of non-positive value {v}")));
                    }
                    Elementary::Log
                }
                Function::Sqrt => {
                    if v < 0.0 {
                        return Err(domain(*offset, format!("sqrt of negative value {v}")));
                    }
                    Elementary::Pow(0.5)
                }
            };
            Ok(x.apply(f))
        }
        Node::Binary { op, lhs, rhs, offset } => {
            let a = eval_node(lhs, vars)?;
            let b = eval_node(rhs, vars)?;
            match op {
                BinaryOp::Add => Ok(a.add(&b)),
                BinaryOp::Sub => Ok(a.sub(&b)),
                BinaryOp::Mul => Ok(a.mul(&b)),
                BinaryOp::Div => {
                    if b.value() == 0.0 {
                        return Err(domain(*offset, "division by zero"));
                    }
                    Ok(a.mul(&b.apply(Elementary::Pow(-1.0))))
                }
                BinaryOp::Pow => power(a, b, *offset),
            }
        }
    }
}

fn power<T: Scalar>(a: T, b: T, offset: usize) -> Result<T, EvalError> {
    let base = a.value();
    if b.is_constant() {
        let c = b.value();
        let integral = c == c.trunc();
        if base < 0.0 && !integral {
            return Err(domain(offset, format!("negative base {base} with non-integer exponent {c}")));
        }
        if base == 0.0 && c < 0.0 {
            return Err(domain(offset, "division by zero (0 raised to a negative power)"));
        }
        if a.is_constant() {
            return Ok(T::constant(pow_real(base, c)));
        }
        return Ok(a.apply(Elementary::Pow(c)));
    }
    if base <= 0.0 {
        return Err(domain(offset, format!("non-positive base {base} with a variable exponent")));
    }
    Ok(b.mul(&a.apply(Elementary::Log)).apply(Elementary::Exp))
}

struct Pretty<'a> {
    node: &'a Node,
    symbols: &'a SymbolTable,
}

impl fmt::Display for Pretty<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(self.node, self.symbols, f)
    }
}

fn write_node(node: &Node, symbols: &SymbolTable, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Number { value, .. } => {
            if *value < 0.0 {
                write!(f, "(-{:?})", -value)
            } else {
                write!(f, "{value:?}")
            }
        }
        Node::Var { id, .. } => f.write_str(symbols.name(*id)),
        Node::Neg { arg, .. } => {
            f.write_str("(-")?;
            write_node(arg, symbols, f)?;
            f.write_str(")")
        }
        Node::Call { func, arg, .. } => {
            write!(f, "{}(", func.name())?;
            write_node(arg, symbols, f)?;
            f.write_str(")")
        }
        Node::Binary { op, lhs, rhs, .. } => {
            f.write_str("(")?;
            write_node(lhs, symbols, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(rhs, symbols, f)?;
            f.write_str(")")
        }
    }
}

/// Values for a symbol table; every symbol an expression uses must be bound.
#[derive(Clone, Debug)]
pub struct Bindings {
    symbols: SymbolTable,
    values: Vec<Option<f64>>,
}

impl Bindings {
    pub fn new(symbols: &SymbolTable) -> Self {
        Bindings { symbols: symbols.clone(), values: vec![None; symbols.len()] }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    /// Panics if `name` is not in the table.
    pub fn set(&mut self, name: &str, value: f64) {
        let id = self
            .symbols
            .index_of(name)
            .unwrap_or_else(|| panic!("'{name}' is not a declared symbol"));
        self.values[id] = Some(value);
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.values[id]
    }

    fn resolve(&self, expr: &Expression) -> Result<Vec<f64>, EvalError> {
        for id in expr.free_vars() {
            if self.values[id].is_none() {
                return Err(EvalError::Unbound { name: self.symbols.name(id).to_string() });
            }
        }
        Ok(self.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    fn id(&self, name: &str) -> Result<usize, EvalError> {
        self.symbols.index_of(name).ok_or_else(|| EvalError::Unbound { name: name.to_string() })
    }
}

pub fn evaluate(expr: &Expression, b: &Bindings) -> Result<f64, EvalError> {
    expr.eval(&b.resolve(expr)?)
}

/// Value, gradient and Hessian with respect to the listed variables.
pub fn eval_dual2(expr: &Expression, b: &Bindings, seeds: &[usize]) -> Result<Dual2, EvalError> {
    let values = b.resolve(expr)?;
    let mut vars: Vec<Dual2> = values.iter().map(|&v| Dual2::constant(v)).collect();
    for (k, &id) in seeds.iter().enumerate() {
        vars[id] = Dual2::variable(values[id], k, seeds.len());
    }
    expr.eval(&vars)
}

/// Exact `d expr / d var`.
pub fn partial(expr: &Expression, var: &str, b: &Bindings) -> Result<f64, EvalError> {
    let id = b.id(var)?;
    Ok(eval_dual2(expr, b, &[id])?.d(0))
}

/// Exact `d^2 expr / d var1 d var2`.
pub fn second_partial(expr: &Expression, var1: &str, var2: &str, b: &Bindings) -> Result<f64, EvalError> {
    let i = b.id(var1)?;
    let j = b.id(var2)?;
    if i == j {
        return Ok(eval_dual2(expr, b, &[i])?.second(0, 0));
    }
    // Seeds are listed in id order so that swapping the arguments reads the
    // same packed Hessian slot from the same computation.
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    Ok(eval_dual2(expr, b, &[lo, hi])?.second(0, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms() -> SymbolTable {
        SymbolTable::new(["q1", "q2"])
    }

    fn eval_at(text: &str, q1: f64, q2: f64) -> Result<f64, EvalError> {
        let e = Expression::parse(text, &syms()).unwrap();
        evaluate(&e, &Bindings::new(&syms()).with("q1", q1).with("q2", q2))
    }

    #[test]
    fn precedence_examples() {
        assert_eq!(eval_at("q1 + 2*q2", 1.0, 2.0).unwrap(), 5.0);
        assert_eq!(eval_at("sin(q1)^2", 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(eval_at("2^3^2", 0.0, 0.0).unwrap(), 512.0);
        assert_eq!(eval_at("-2^2", 0.0, 0.0).unwrap(), -4.0);
        assert_eq!(eval_at("2^-1", 0.0, 0.0).unwrap(), 0.5);
        assert_eq!(eval_at("q1 - -q2", 1.0, 2.0).unwrap(), 3.0);
        assert_eq!(eval_at("8/2/2", 0.0, 0.0).unwrap(), 2.0);
        assert_eq!(eval_at("1.5e2 + .5", 0.0, 0.0).unwrap(), 150.5);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(eval_at("q1*q1", 3.0, 0.0).unwrap(), 9.0);
        assert_eq!(eval_at("exp(0)", 0.0, 0.0).unwrap(), 1.0);
        assert!(matches!(eval_at("sqrt(q1)", -1.0, 0.0), Err(EvalError::Domain { offset: 0, .. })));
        assert!(matches!(eval_at("log(q1)", 0.0, 0.0), Err(EvalError::Domain { .. })));
        assert!(matches!(eval_at("1/(q1-q1)", 2.0, 0.0), Err(EvalError::Domain { offset: 1, .. })));
        assert!(matches!(eval_at("q1^0.5", -2.0, 0.0), Err(EvalError::Domain { offset: 2, .. })));
        assert_eq!(eval_at("q1^3", -2.0, 0.0).unwrap(), -8.0);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let s = syms();
        assert_eq!(Expression::parse("q1 + * 2", &s).unwrap_err().offset(), 5);
        assert!(matches!(
            Expression::parse("q1 + zz", &s),
            Err(ParseError::UnknownIdentifier { offset: 5, .. })
        ));
        assert!(matches!(Expression::parse("sin(q1, q2)", &s), Err(ParseError::Arity { found: 2, .. })));
        assert!(matches!(Expression::parse("cos()", &s), Err(ParseError::Arity { found: 0, .. })));
        assert!(matches!(Expression::parse("(q1", &s), Err(ParseError::Syntax { offset: 3, .. })));
        assert!(matches!(Expression::parse("q1 q2", &s), Err(ParseError::Syntax { offset: 3, .. })));
        assert!(matches!(Expression::parse("foo(q1)", &s), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expression::parse("q1 $", &s), Err(ParseError::Syntax { offset: 3, .. })));
        assert!(matches!(Expression::parse("--q1", &s), Err(ParseError::Syntax { offset: 1, .. })));
    }

    #[test]
    fn derivative_examples() {
        let s = syms();
        let b = Bindings::new(&s).with("q1", 3.0).with("q2", -1.0);
        let sq = Expression::parse("q1^2", &s).unwrap();
        assert_eq!(partial(&sq, "q1", &b).unwrap(), 6.0);
        let prod = Expression::parse("q1*q2", &s).unwrap();
        assert_eq!(second_partial(&prod, "q1", "q2", &b).unwrap(), 1.0);
        let e = Expression::parse("sin(q1)*q2", &s).unwrap();
        let b = Bindings::new(&s).with("q1", std::f64::consts::FRAC_PI_2).with("q2", 5.0);
        assert!(partial(&e, "q1", &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn unbound_variable_is_reported() {
        let s = syms();
        let e = Expression::parse("q1 + q2", &s).unwrap();
        let err = evaluate(&e, &Bindings::new(&s).with("q1", 1.0)).unwrap_err();
        assert_eq!(err, EvalError::Unbound { name: "q2".into() });
    }

    #[test]
    fn pretty_print_round_trips() {
        let s = syms();
        for text in ["-q1^2", "2^3^2", "q1 - -q2*3", "sqrt(abs(q1))/(1+q2)", "1e-7*q1"] {
            let e = Expression::parse(text, &s).unwrap();
            let printed = e.display(&s).to_string();
            let back = Expression::parse(&printed, &s).unwrap();
            let b = Bindings::new(&s).with("q1", 0.7).with("q2", 1.3);
            assert_eq!(evaluate(&e, &b).unwrap(), evaluate(&back, &b).unwrap(), "{printed}");
        }
    }
}
