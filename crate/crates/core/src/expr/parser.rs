//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr   := term { ("+"|"-") term }
//! term   := factor { ("*"|"/") factor }
//! factor := ["-"] power
//! power  := atom [ "^" factor ]
//! atom   := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"
//! ```

use std::sync::Arc;

use super::{BinaryOp, Expression, Function, Node, ParseError, SymbolTable};

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn describe(tok: &Token) -> String {
    match tok {
        Token::Number(n) => format!("number {n}"),
        Token::Ident(s) => format!("identifier '{s}'"),
        Token::Plus => "'+'".into(),
        Token::Minus => "'-'".into(),
        Token::Star => "'*'".into(),
        Token::Slash => "'/'".into(),
        Token::Caret => "'^'".into(),
        Token::LParen => "'('".into(),
        Token::RParen => "')'".into(),
        Token::Comma => "','".into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Token::Plus, start)),
            b'-' => out.push((Token::Minus, start)),
            b'*' => out.push((Token::Star, start)),
            b'/' => out.push((Token::Slash, start)),
            b'^' => out.push((Token::Caret, start)),
            b'(' => out.push((Token::LParen, start)),
            b')' => out.push((Token::RParen, start)),
            b',' => out.push((Token::Comma, start)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number '{lit}'"),
                })?;
                out.push((Token::Number(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Token::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character '{ch}'"),
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
    symbols: &'a SymbolTable,
}

type Parsed = Result<Arc<Node>, ParseError>;

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn bump(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let message = match self.peek() {
            Some(t) => format!("expected {wanted}, found {}", describe(t)),
            None => format!("expected {wanted}, found end of input"),
        };
        ParseError::Syntax { offset: self.offset(), message }
    }

    fn expect(&mut self, tok: Token, wanted: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn expr(&mut self) -> Parsed {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinaryOp::Add,
                Some(Token::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            let (_, at) = self.bump().unwrap();
            let rhs = self.term()?;
            lhs = Arc::new(Node::Binary { op, lhs, rhs, offset: at });
        }
    }

    fn term(&mut self) -> Parsed {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinaryOp::Mul,
                Some(Token::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            let (_, at) = self.bump().unwrap();
            let rhs = self.factor()?;
            lhs = Arc::new(Node::Binary { op, lhs, rhs, offset: at });
        }
    }

    fn factor(&mut self) -> Parsed {
        if self.peek() == Some(&Token::Minus) {
            let (_, at) = self.bump().unwrap();
            let inner = self.power()?;
            return Ok(Arc::new(Node::Neg { arg: inner, offset: at }));
        }
        self.power()
    }

    fn power(&mut self) -> Parsed {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            let (_, at) = self.bump().unwrap();
            let exponent = self.factor()?;
            return Ok(Arc::new(Node::Binary { op: BinaryOp::Pow, lhs: base, rhs: exponent, offset: at }));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Parsed {
        let at = self.offset();
        match self.bump() {
            Some((Token::Number(value), _)) => Ok(Arc::new(Node::Number { value, offset: at })),
            Some((Token::LParen, _)) => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "')'")?;
                Ok(inner)
            }
            Some((Token::Ident(name), _)) => {
                if self.peek() == Some(&Token::LParen) {
                    let Some(func) = Function::from_name(&name) else {
                        return Err(ParseError::UnknownIdentifier { offset: at, name });
                    };
                    self.pos += 1;
                    if self.peek() == Some(&Token::RParen) {
                        return Err(ParseError::Arity { offset: at, name, found: 0 });
                    }
                    let arg = self.expr()?;
                    if self.peek() == Some(&Token::Comma) {
                        let mut found = 1;
                        while self.peek() == Some(&Token::Comma) {
                            self.pos += 1;
                            self.expr()?;
                            found += 1;
                        }
                        return Err(ParseError::Arity { offset: at, name, found });
                    }
                    self.expect(Token::RParen, "')'")?;
                    return Ok(Arc::new(Node::Call { func, arg, offset: at }));
                }
                if Function::from_name(&name).is_some() {
                    return Err(ParseError::Syntax {
                        offset: self.offset(),
                        message: format!("function '{name}' must be followed by '('"),
                    });
                }
                match self.symbols.index_of(&name) {
                    Some(id) => Ok(Arc::new(Node::Var { id, offset: at })),
                    None => Err(ParseError::UnknownIdentifier { offset: at, name }),
                }
            }
            Some(_) => {
                self.pos -= 1;
                Err(self.unexpected("a number, identifier or '('"))
            }
            None => Err(self.unexpected("a number, identifier or '('")),
        }
    }
}

pub(super) fn parse(text: &str, symbols: &SymbolTable) -> Result<Expression, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, end: text.len(), symbols };
    let root = p.expr()?;
    if p.pos < p.tokens.len() {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(Expression { root })
}
