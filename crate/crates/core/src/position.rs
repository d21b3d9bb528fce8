//! Position processes: terminal-measurable payoff families psi(t).
//!
//! A position process assigns to each outer grid time t_i a payoff that is
//! known only with terminal information. `evaluate` renders psi(t_i) as a
//! terminal node field; `evaluate_field` does so for every outer index at
//! once, which is the shape the solvers consume.

use crate::driver::{DriverState, NodeFunction};
use crate::error::{Error, Result};

/// Supported payoff classes.
#[derive(Clone, Debug)]
pub enum Position {
    /// psi(t) = c
    Constant(f64),
    /// psi(t) = slope * t * W(T)
    LinearTerminal { slope: f64 },
    /// psi(t) = max(W(T) - strike, 0)
    CallTerminal { strike: f64 },
    /// psi(t) = max_k W(t_k); path information required
    RunningMax,
    /// arithmetic expression over {t, W_T, max_W}
    Expression(Expr),
    /// explicit per-outer-index terminal fields
    Tabulated(Vec<NodeFunction>),
}

impl Position {
    pub fn expression(text: &str) -> Result<Position> {
        Ok(Position::Expression(Expr::parse(text)?))
    }

    /// psi(t_outer) as a terminal-measurable node field.
    pub fn evaluate(&self, driver: &DriverState, outer: usize) -> Result<NodeFunction> {
        let n = driver.grid().steps();
        let t = driver.grid().point(outer);
        match self {
            Position::Constant(c) => {
                Ok(NodeFunction::from_parts(n, vec![*c; driver.node_count(n)], false))
            }
            Position::LinearTerminal { slope } => {
                let a = *slope;
                Ok(driver.terminal_w().map(|w| a * t * w))
            }
            Position::CallTerminal { strike } => {
                let k = *strike;
                Ok(driver.terminal_w().map(|w| (w - k).max(0.0)))
            }
            Position::RunningMax => {
                let vals = driver
                    .running_max_values(n)
                    .map_err(|_| Error::PathTreeOnly("running_max".into()))?;
                Ok(NodeFunction::from_parts(n, vals, false))
            }
            Position::Expression(expr) => {
                let w = driver.terminal_w();
                let maxes = if expr.uses_max_w() {
                    Some(
                        driver
                            .running_max_values(n)
                            .map_err(|_| Error::PathTreeOnly("expressions over max_W".into()))?,
                    )
                } else {
                    None
                };
                let values = w
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(p, &wt)| {
                        let mw = maxes.as_ref().map(|m| m[p]).unwrap_or(0.0);
                        expr.eval(t, wt, mw)
                    })
                    .collect();
                Ok(NodeFunction::from_parts(n, values, false))
            }
            Position::Tabulated(fields) => {
                if fields.len() != n + 1 {
                    return Err(Error::Invalid(format!(
                        "tabulated position has {} entries, grid needs {}",
                        fields.len(),
                        n + 1
                    )));
                }
                Ok(fields[outer].clone())
            }
        }
    }

    /// All outer indices at once.
    pub fn evaluate_field(&self, driver: &DriverState) -> Result<Vec<NodeFunction>> {
        (0..=driver.grid().steps())
            .map(|i| self.evaluate(driver, i))
            .collect()
    }
}

/// Sup norm of a position field over all outer indices and nodes.
pub fn field_sup(field: &[NodeFunction]) -> f64 {
    field.iter().fold(0.0, |m, f| m.max(f.max_abs()))
}

// ---------------------------------------------------------------------------
// expression language
// ---------------------------------------------------------------------------

/// Parsed arithmetic expression over the variables t, W_T, max_W.
///
/// Grammar: `+ - * /`, unary minus, parentheses, numeric literals, and the
/// functions abs, exp, ln, sqrt, sin, cos, floor, ceil, min, max.
#[derive(Clone, Debug)]
pub enum Expr {
    Num(f64),
    T,
    WT,
    MaxW,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Fn1(Func1, Box<Expr>),
    Fn2(Func2, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Copy, Debug)]
pub enum Func1 {
    Abs,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Floor,
    Ceil,
}

#[derive(Clone, Copy, Debug)]
pub enum Func2 {
    Min,
    Max,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let tokens = tokenize(text)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input at token {}",
                parser.pos
            )));
        }
        Ok(expr)
    }

    pub fn eval(&self, t: f64, w_t: f64, max_w: f64) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::T => t,
            Expr::WT => w_t,
            Expr::MaxW => max_w,
            Expr::Neg(e) => -e.eval(t, w_t, max_w),
            Expr::Add(a, b) => a.eval(t, w_t, max_w) + b.eval(t, w_t, max_w),
            Expr::Sub(a, b) => a.eval(t, w_t, max_w) - b.eval(t, w_t, max_w),
            Expr::Mul(a, b) => a.eval(t, w_t, max_w) * b.eval(t, w_t, max_w),
            Expr::Div(a, b) => a.eval(t, w_t, max_w) / b.eval(t, w_t, max_w),
            Expr::Fn1(f, e) => {
                let x = e.eval(t, w_t, max_w);
                match f {
                    Func1::Abs => x.abs(),
                    Func1::Exp => x.exp(),
                    Func1::Ln => x.ln(),
                    Func1::Sqrt => x.sqrt(),
                    Func1::Sin => x.sin(),
                    Func1::Cos => x.cos(),
                    Func1::Floor => x.floor(),
                    Func1::Ceil => x.ceil(),
                }
            }
            Expr::Fn2(f, a, b) => {
                let x = a.eval(t, w_t, max_w);
                let y = b.eval(t, w_t, max_w);
                match f {
                    Func2::Min => x.min(y),
                    Func2::Max => x.max(y),
                }
            }
        }
    }

    pub fn uses_max_w(&self) -> bool {
        match self {
            Expr::MaxW => true,
            Expr::Num(_) | Expr::T | Expr::WT => false,
            Expr::Neg(e) | Expr::Fn1(_, e) => e.uses_max_w(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses_max_w() || b.uses_max_w()
            }
            Expr::Fn2(_, a, b) => a.uses_max_w() || b.uses_max_w(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            ',' => {
                tokens.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                let value = lit
                    .parse::<f64>()
                    .map_err(|_| Error::Expression(format!("bad number literal '{lit}'")))?;
                tokens.push(Token::Num(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => {
                return Err(Error::Expression(format!("unexpected character '{other}'")));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, token: Token) -> Result<()> {
        match self.bump() {
            Some(t) if t == token => Ok(()),
            other => Err(Error::Expression(format!(
                "expected {token:?}, found {other:?}"
            ))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Token::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if matches!(self.peek(), Some(Token::LParen)) {
                    self.bump();
                    let first = self.expr()?;
                    let call = if matches!(self.peek(), Some(Token::Comma)) {
                        self.bump();
                        let second = self.expr()?;
                        let f = match name.as_str() {
                            "min" => Func2::Min,
                            "max" => Func2::Max,
                            _ => {
                                return Err(Error::Expression(format!(
                                    "unknown two-argument function '{name}'"
                                )))
                            }
                        };
                        Expr::Fn2(f, Box::new(first), Box::new(second))
                    } else {
                        let f = match name.as_str() {
                            "abs" => Func1::Abs,
                            "exp" => Func1::Exp,
                            "ln" => Func1::Ln,
                            "sqrt" => Func1::Sqrt,
                            "sin" => Func1::Sin,
                            "cos" => Func1::Cos,
                            "floor" => Func1::Floor,
                            "ceil" => Func1::Ceil,
                            _ => {
                                return Err(Error::Expression(format!(
                                    "unknown function '{name}'"
                                )))
                            }
                        };
                        Expr::Fn1(f, Box::new(first))
                    };
                    self.expect(Token::RParen)?;
                    Ok(call)
                } else {
                    match name.as_str() {
                        "t" => Ok(Expr::T),
                        "W_T" => Ok(Expr::WT),
                        "max_W" => Ok(Expr::MaxW),
                        _ => Err(Error::Expression(format!("unknown variable '{name}'"))),
                    }
                }
            }
            other => Err(Error::Expression(format!("unexpected token {other:?}"))),
        }
    }
}
