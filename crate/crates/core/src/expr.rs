//! A small arithmetic expression language for boundary and initial data.
//!
//! Variables are `x1`, `x2`, `x3` (aliases `x`, `y`, `z`). Supported:
//! `+ - * /`, `^` (right associative), unary minus, `|e|` and `abs(e)`,
//! `min`, `max` (two or more arguments), `sqrt`, `exp`, `ln`, `sin`, `cos`,
//! `tanh`, and the constant `pi`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message} at offset {offset} in `{source_text}`")]
pub struct ParseError {
    pub message: String,
    pub offset: usize,
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Abs,
    Min,
    Max,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 2,
            _ => n == 1,
        }
    }
}

/// Parsed expression; cheap to clone.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Arc<Node>,
    text: String,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self.text)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut p = Parser { src: text, bytes: text.as_bytes(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self { root: Arc::new(root), text: text.trim().to_string() })
    }

    pub fn eval(&self, x: &Point) -> f64 {
        eval(&self.root, x)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Highest variable index referenced plus one (0 for constants).
    pub fn arity(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Num(_) => 0,
                Node::Var(i) => i + 1,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a).max(walk(b)),
                Node::Call(_, args) => args.iter().map(walk).max().unwrap_or(0),
            }
        }
        walk(&self.root)
    }
}

fn eval(n: &Node, x: &Point) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval(a, x),
        Node::Bin(op, a, b) => {
            let (l, r) = (eval(a, x), eval(b, x));
            match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => l / r,
                BinOp::Pow => {
                    if r == r.trunc() && r.abs() <= 64.0 {
                        l.powi(r as i32)
                    } else {
                        l.powf(r)
                    }
                }
            }
        }
        Node::Call(f, args) => {
            let v = |k: usize| eval(&args[k], x);
            match f {
                Func::Abs => v(0).abs(),
                Func::Min => args.iter().map(|a| eval(a, x)).fold(f64::INFINITY, f64::min),
                Func::Max => args.iter().map(|a| eval(a, x)).fold(f64::NEG_INFINITY, f64::max),
                Func::Sqrt => v(0).sqrt(),
                Func::Exp => v(0).exp(),
                Func::Ln => v(0).ln(),
                Func::Sin => v(0).sin(),
                Func::Cos => v(0).cos(),
                Func::Tanh => v(0).tanh(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ParseError {
        ParseError { message: message.to_string(), offset: self.pos, source_text: self.src.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(b'|') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b'|') {
                    return Err(self.error("expected closing `|`"));
                }
                Ok(Node::Call(Func::Abs, vec![e]))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        self.src[start..self.pos].parse::<f64>().map(Node::Num).map_err(|_| {
            let mut e = self.error("malformed number");
            e.offset = start;
            e
        })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if let Some(f) = Func::lookup(name) {
            if !self.eat(b'(') {
                return Err(self.error("expected `(` after function name"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected `)` closing argument list"));
            }
            if !f.arity_ok(args.len()) {
                return Err(self.error(&format!("wrong number of arguments to `{name}`")));
            }
            return Ok(Node::Call(f, args));
        }
        let var = match name {
            "x" | "x1" => Some(0),
            "y" | "x2" => Some(1),
            "z" | "x3" => Some(2),
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            _ => None,
        };
        var.map(Node::Var).ok_or_else(|| {
            let mut e = self.error(&format!("unknown identifier `{name}`"));
            e.offset = start;
            e
        })
    }
}
