//! A closed mini-language for output validation statements, e.g.
//! `len(output.items) > 0 and contains(output.title, "report")`.
//!
//! Evaluation is total: a missing path makes the enclosing comparison
//! false rather than erroring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidationStatement {
    pub expression: String,
}

impl ValidationStatement {
    pub fn new(expression: impl Into<String>) -> Self {
        Self {
            expression: expression.into(),
        }
    }

    /// Parses the expression, reporting syntax errors. Used at pipeline
    /// validation time.
    pub fn check_syntax(&self) -> Result<(), String> {
        parse(&self.expression).map(|_| ())
    }

    /// Evaluates against named bindings (`output`, or `left`/`right` for
    /// blocking rules). Unparseable expressions evaluate to false.
    pub fn evaluate(&self, bindings: &BTreeMap<String, Value>) -> bool {
        match parse(&self.expression) {
            Ok(expr) => truthy(&eval(&expr, bindings)),
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Literal(Value),
    Path(String),
    Len(Box<Expr>),
    Contains(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cmp(Box<Expr>, CmpOp, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Evaluation result: either a concrete value or "missing".
#[derive(Debug, Clone, PartialEq)]
enum Evaluated {
    Value(Value),
    Missing,
}

fn truthy(e: &Evaluated) -> bool {
    matches!(e, Evaluated::Value(Value::Bool(true)))
}

fn eval(expr: &Expr, bindings: &BTreeMap<String, Value>) -> Evaluated {
    match expr {
        Expr::Literal(v) => Evaluated::Value(v.clone()),
        Expr::Path(path) => {
            let mut parts = path.split('.');
            let root = match parts.next().and_then(|r| bindings.get(r)) {
                Some(v) => v,
                None => return Evaluated::Missing,
            };
            let mut cur = root;
            for part in parts {
                match cur.as_object().and_then(|o| o.get(part)) {
                    Some(v) => cur = v,
                    None => return Evaluated::Missing,
                }
            }
            Evaluated::Value(cur.clone())
        }
        Expr::Len(inner) => match eval(inner, bindings) {
            Evaluated::Value(Value::String(s)) => {
                Evaluated::Value(Value::from(s.chars().count() as u64))
            }
            Evaluated::Value(Value::Array(a)) => Evaluated::Value(Value::from(a.len() as u64)),
            Evaluated::Value(Value::Object(o)) => Evaluated::Value(Value::from(o.len() as u64)),
            _ => Evaluated::Missing,
        },
        Expr::Contains(haystack, needle) => {
            let (h, n) = (eval(haystack, bindings), eval(needle, bindings));
            let result = match (&h, &n) {
                (Evaluated::Value(Value::String(h)), Evaluated::Value(Value::String(n))) => {
                    h.contains(n.as_str())
                }
                (Evaluated::Value(Value::Array(items)), Evaluated::Value(v)) => {
                    items.contains(v)
                }
                _ => false,
            };
            Evaluated::Value(Value::Bool(result))
        }
        Expr::Not(inner) => Evaluated::Value(Value::Bool(!truthy(&eval(inner, bindings)))),
        Expr::And(a, b) => {
            Evaluated::Value(Value::Bool(truthy(&eval(a, bindings)) && truthy(&eval(b, bindings))))
        }
        Expr::Or(a, b) => {
            Evaluated::Value(Value::Bool(truthy(&eval(a, bindings)) || truthy(&eval(b, bindings))))
        }
        Expr::Cmp(a, op, b) => {
            let (a, b) = (eval(a, bindings), eval(b, bindings));
            let (a, b) = match (a, b) {
                (Evaluated::Value(a), Evaluated::Value(b)) => (a, b),
                _ => return Evaluated::Value(Value::Bool(false)),
            };
            // Numbers compare numerically so `3` equals `3.0`.
            let eq = match (&a, &b) {
                (Value::Number(x), Value::Number(y)) => {
                    x.as_f64().unwrap_or(f64::NAN) == y.as_f64().unwrap_or(f64::NAN)
                }
                _ => a == b,
            };
            let result = match op {
                CmpOp::Eq => eq,
                CmpOp::Ne => !eq,
                _ => match (&a, &b) {
                    (Value::Number(x), Value::Number(y)) => {
                        let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
                        match op {
                            CmpOp::Lt => x < y,
                            CmpOp::Le => x <= y,
                            CmpOp::Gt => x > y,
                            CmpOp::Ge => x >= y,
                            _ => unreachable!(),
                        }
                    }
                    (Value::String(x), Value::String(y)) => match op {
                        CmpOp::Lt => x < y,
                        CmpOp::Le => x <= y,
                        CmpOp::Gt => x > y,
                        CmpOp::Ge => x >= y,
                        _ => unreachable!(),
                    },
                    _ => false,
                },
            };
            Evaluated::Value(Value::Bool(result))
        }
    }
}

// --- parser ---

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn lex(input: &str) -> Result<Vec<Tok>, String> {
    let mut tokens = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push(Tok::LParen);
            }
            ')' => {
                chars.next();
                tokens.push(Tok::RParen);
            }
            ',' => {
                chars.next();
                tokens.push(Tok::Comma);
            }
            '"' | '\'' => {
                let quote = c;
                chars.next();
                let mut s = String::new();
                let mut closed = false;
                while let Some((_, c)) = chars.next() {
                    if c == '\\' {
                        if let Some((_, esc)) = chars.next() {
                            s.push(esc);
                        }
                    } else if c == quote {
                        closed = true;
                        break;
                    } else {
                        s.push(c);
                    }
                }
                if !closed {
                    return Err("unterminated string literal".into());
                }
                tokens.push(Tok::Str(s));
            }
            '=' | '!' | '<' | '>' => {
                chars.next();
                let double = matches!(chars.peek(), Some((_, '=')));
                if double {
                    chars.next();
                }
                let op = match (c, double) {
                    ('=', true) => "==",
                    ('!', true) => "!=",
                    ('<', true) => "<=",
                    ('<', false) => "<",
                    ('>', true) => ">=",
                    ('>', false) => ">",
                    _ => return Err(format!("unexpected '{c}' at offset {i}")),
                };
                tokens.push(Tok::Op(op));
            }
            c if c.is_ascii_digit() || c == '-' => {
                let mut s = String::new();
                s.push(c);
                chars.next();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_ascii_digit() || d == '.' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Tok::Number(s.parse().map_err(|_| format!("bad number '{s}'"))?));
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' || d == '.' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Tok::Ident(s));
            }
            other => return Err(format!("unexpected character '{other}' at offset {i}")),
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

fn parse(input: &str) -> Result<Expr, String> {
    let mut p = Parser {
        tokens: lex(input)?,
        pos: 0,
    };
    let expr = p.parse_or()?;
    if p.pos != p.tokens.len() {
        return Err(format!("trailing tokens after expression in '{input}'"));
    }
    Ok(expr)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn parse_or(&mut self) -> Result<Expr, String> {
        let mut left = self.parse_and()?;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "or") {
            self.next();
            let right = self.parse_and()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Expr, String> {
        let mut left = self.parse_not()?;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "and") {
            self.next();
            let right = self.parse_not()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> Result<Expr, String> {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "not") {
            self.next();
            return Ok(Expr::Not(Box::new(self.parse_not()?)));
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<Expr, String> {
        let left = self.parse_term()?;
        if let Some(Tok::Op(op)) = self.peek() {
            let op = match *op {
                "==" => CmpOp::Eq,
                "!=" => CmpOp::Ne,
                "<" => CmpOp::Lt,
                "<=" => CmpOp::Le,
                ">" => CmpOp::Gt,
                ">=" => CmpOp::Ge,
                _ => return Ok(left),
            };
            self.next();
            let right = self.parse_term()?;
            return Ok(Expr::Cmp(Box::new(left), op, Box::new(right)));
        }
        Ok(left)
    }

    fn parse_term(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Tok::Number(n)) => Ok(Expr::Literal(
                serde_json::Number::from_f64(n)
                    .map(Value::Number)
                    .unwrap_or(Value::Null),
            )),
            Some(Tok::Str(s)) => Ok(Expr::Literal(Value::String(s))),
            Some(Tok::LParen) => {
                let inner = self.parse_or()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err("expected ')'".into()),
                }
            }
            Some(Tok::Ident(word)) => match word.as_str() {
                "true" => Ok(Expr::Literal(Value::Bool(true))),
                "false" => Ok(Expr::Literal(Value::Bool(false))),
                "len" => {
                    self.expect_lparen()?;
                    let inner = self.parse_term()?;
                    self.expect_rparen()?;
                    Ok(Expr::Len(Box::new(inner)))
                }
                "contains" => {
                    self.expect_lparen()?;
                    let haystack = self.parse_term()?;
                    match self.next() {
                        Some(Tok::Comma) => {}
                        _ => return Err("expected ',' in contains()".into()),
                    }
                    let needle = self.parse_term()?;
                    self.expect_rparen()?;
                    Ok(Expr::Contains(Box::new(haystack), Box::new(needle)))
                }
                _ => Ok(Expr::Path(word)),
            },
            other => Err(format!("unexpected token {other:?}")),
        }
    }

    fn expect_lparen(&mut self) -> Result<(), String> {
        match self.next() {
            Some(Tok::LParen) => Ok(()),
            _ => Err("expected '('".into()),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), String> {
        match self.next() {
            Some(Tok::RParen) => Ok(()),
            _ => Err("expected ')'".into()),
        }
    }
}
