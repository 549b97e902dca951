//! Tiny arithmetic expressions for load data.
//!
//! Grammar over the coordinates `x1`, `x2`:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := ('-' | '+') factor | power
//! power  := atom ('^' factor)?              // right associative
//! atom   := number | 'x1' | 'x2' | 'pi'
//!         | ('sin' | 'cos' | 'exp') '(' expr ')'
//!         | '(' expr ')'
//! ```
//!
//! Vector-valued loads are written as a parenthesized pair `(expr, expr)`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    /// Byte offset into the source string.
    pub pos: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: {}", self.pos, self.message)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    X1,
    X2,
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
}

impl Node {
    fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::X1 => x1,
            Node::X2 => x2,
            Node::Add(a, b) => a.eval(x1, x2) + b.eval(x1, x2),
            Node::Sub(a, b) => a.eval(x1, x2) - b.eval(x1, x2),
            Node::Mul(a, b) => a.eval(x1, x2) * b.eval(x1, x2),
            Node::Div(a, b) => a.eval(x1, x2) / b.eval(x1, x2),
            Node::Pow(a, b) => a.eval(x1, x2).powf(b.eval(x1, x2)),
            Node::Neg(a) => -a.eval(x1, x2),
            Node::Sin(a) => a.eval(x1, x2).sin(),
            Node::Cos(a) => a.eval(x1, x2).cos(),
            Node::Exp(a) => a.eval(x1, x2).exp(),
        }
    }
}

/// A parsed scalar expression in the coordinates (x1, x2).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarExpr {
    root: Node,
    source: String,
}

impl ScalarExpr {
    pub fn parse(src: &str) -> Result<ScalarExpr, ExprError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(ScalarExpr { root, source: src.to_string() })
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.root.eval(x[0], x[1])
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// A pair `(expr, expr)` evaluated as a 2-vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExpr {
    pub first: ScalarExpr,
    pub second: ScalarExpr,
}

impl PairExpr {
    /// Parses `(e1, e2)` where the comma at the top parenthesis level splits
    /// the two components.
    pub fn parse(src: &str) -> Result<PairExpr, ExprError> {
        let trimmed = src.trim();
        let inner = trimmed
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| ExprError {
                pos: 0,
                message: "vector expression must have the form (expr, expr)".into(),
            })?;
        let mut depth = 0usize;
        let mut split = None;
        for (i, c) in inner.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth = depth.checked_sub(1).ok_or_else(|| ExprError {
                        pos: i,
                        message: "unbalanced parentheses".into(),
                    })?
                }
                ',' if depth == 0 => {
                    if split.is_some() {
                        return Err(ExprError {
                            pos: i,
                            message: "expected exactly one top-level comma".into(),
                        });
                    }
                    split = Some(i);
                }
                _ => {}
            }
        }
        let split = split.ok_or_else(|| ExprError {
            pos: 0,
            message: "expected exactly one top-level comma".into(),
        })?;
        Ok(PairExpr {
            first: ScalarExpr::parse(&inner[..split])?,
            second: ScalarExpr::parse(&inner[split + 1..])?,
        })
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        [self.first.eval(x), self.second.eval(x)]
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ExprError {
        ExprError { pos: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        if self.eat(b'+') {
            return self.factor();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            let exponent = self.factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self
                    .peek()
                    .map(|c| c.is_ascii_alphanumeric() || c == b'_')
                    .unwrap_or(false)
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match name {
                    "x1" => Ok(Node::X1),
                    "x2" => Ok(Node::X2),
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "sin" | "cos" | "exp" => {
                        self.skip_ws();
                        if !self.eat(b'(') {
                            return Err(self.err("expected '(' after function name"));
                        }
                        let arg = Box::new(self.expr()?);
                        self.skip_ws();
                        if !self.eat(b')') {
                            return Err(self.err("expected ')'"));
                        }
                        Ok(match name {
                            "sin" => Node::Sin(arg),
                            "cos" => Node::Cos(arg),
                            _ => Node::Exp(arg),
                        })
                    }
                    _ => {
                        self.pos = start;
                        Err(self.err(&format!("unknown identifier '{name}'")))
                    }
                }
            }
            _ => Err(self.err("expected a number, coordinate, function or '('")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_digit() || c == b'.')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        // exponent suffix like 1e-3
        if self.peek() == Some(b'e') || self.peek() == Some(b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.peek() == Some(b'+') || self.peek() == Some(b'-') {
                self.pos += 1;
            }
            if self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Node::Const).map_err(|_| ExprError {
            pos: start,
            message: format!("invalid number '{text}'"),
        })
    }
}
