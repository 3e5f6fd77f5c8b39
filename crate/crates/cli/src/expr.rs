//! A small arithmetic language for symbols over `t`, `x`, `xi` (or `ξ`) and `h`.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp tanh sin cos abs sqrt` (one argument) and `min max` (two).
//! Constants: `pi`, `e`. There is no way to call anything else.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.position + 1, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    T,
    X,
    Xi,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Tanh,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "tanh" => (Func::Tanh, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "abs" => (Func::Abs, 1),
            "sqrt" => (Func::Sqrt, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression; cheap to clone and evaluate from many threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut p = 0;
    while p < chars.len() {
        let (pos, ch) = chars[p];
        if ch.is_whitespace() {
            p += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = p;
            while p < chars.len() && (chars[p].1.is_ascii_digit() || chars[p].1 == '.') {
                p += 1;
            }
            // exponent part
            if p < chars.len() && matches!(chars[p].1, 'e' | 'E') {
                let mut q = p + 1;
                if q < chars.len() && matches!(chars[q].1, '+' | '-') {
                    q += 1;
                }
                if q < chars.len() && chars[q].1.is_ascii_digit() {
                    p = q;
                    while p < chars.len() && chars[p].1.is_ascii_digit() {
                        p += 1;
                    }
                }
            }
            let text: String = chars[start..p].iter().map(|c| c.1).collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ParseError { position: pos, message: format!("bad number '{text}'") })?;
            out.push((pos, Tok::Num(v)));
        } else if ch.is_alphabetic() || ch == '_' {
            let start = p;
            while p < chars.len() && (chars[p].1.is_alphanumeric() || chars[p].1 == '_') {
                p += 1;
            }
            out.push((pos, Tok::Name(chars[start..p].iter().map(|c| c.1).collect())));
        } else if "+-*/^(),".contains(ch) {
            out.push((pos, Tok::Op(ch)));
            p += 1;
        } else {
            return Err(ParseError { position: pos, message: format!("unexpected character '{ch}'") });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    p: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.p).map(|t| &t.1)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.p).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { position: self.pos(), message: message.into() })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.p += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.eat(op) {
            Ok(())
        } else {
            self.err(format!("expected '{op}'"))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.p += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.p += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.p += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.p += 1;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(Tok::Name(name)) => {
                let at = self.pos();
                self.p += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    let Some((func, arity)) = Func::lookup(&name) else {
                        return Err(ParseError { position: at, message: format!("unknown function '{name}'") });
                    };
                    self.p += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return Err(ParseError {
                            position: at,
                            message: format!("'{name}' takes {arity} argument(s), got {}", args.len()),
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                let node = match name.as_str() {
                    "t" => Node::Var(Var::T),
                    "x" => Node::Var(Var::X),
                    "xi" | "ξ" => Node::Var(Var::Xi),
                    "h" => Node::Var(Var::H),
                    "pi" => Node::Num(std::f64::consts::PI),
                    "e" => Node::Num(std::f64::consts::E),
                    _ => return Err(ParseError { position: at, message: format!("unknown name '{name}'") }),
                };
                Ok(node)
            }
            Some(Tok::Op(op)) => self.err(format!("unexpected '{op}'")),
            None => self.err("unexpected end of expression"),
        }
    }
}

fn eval(node: &Node, v: &[f64; 4]) -> f64 {
    match node {
        Node::Num(x) => *x,
        Node::Var(var) => match var {
            Var::T => v[0],
            Var::X => v[1],
            Var::Xi => v[2],
            Var::H => v[3],
        },
        Node::Neg(a) => -eval(a, v),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, v), eval(b, v));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], v);
            match f {
                Func::Exp => a.exp(),
                Func::Tanh => a.tanh(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Abs => a.abs(),
                Func::Sqrt => a.sqrt(),
                Func::Min => a.min(eval(&args[1], v)),
                Func::Max => a.max(eval(&args[1], v)),
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let toks = tokenize(src)?;
        let mut parser = Parser { toks, p: 0, end: src.len() };
        if parser.peek().is_none() {
            return parser.err("empty expression");
        }
        let root = parser.expr()?;
        if parser.p != parser.toks.len() {
            return parser.err("trailing input");
        }
        Ok(Self { source: src.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Value at `(t, x, ξ)` with semiclassical parameter `h`. Domain errors
    /// give NaN or ±∞, which field sampling rejects.
    pub fn eval(&self, t: f64, x: f64, xi: f64, h: f64) -> f64 {
        eval(&self.root, &[t, x, xi, h])
    }
}
