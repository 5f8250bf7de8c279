//! A small expression language for the data functions of a capillary problem
//! (warping, leaf metric, prescribed mean curvature, contact angle, exact
//! solutions for manufactured problems).
//!
//! Variables are the chart coordinates `x1`, `x2`, the flow parameter `s`
//! and `r = sqrt(x1^2 + x2^2)`. The constant `pi` is predefined.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := atom ('^' exponent)?
//! exponent := atom ('^' exponent)?
//! atom     := number | 'pi' | variable | function '(' args ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. An exponent cannot start with a unary minus: write
//! `cosh(r)^(-2)`, not `cosh(r)^-2`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

/// Free variables of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X1,
    X2,
    S,
    /// Chart radius `|x|`; derived from `x1`, `x2`.
    R,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::S => "s",
            Var::R => "r",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Cosh,
    Sinh,
    Tanh,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "cosh" => Func::Cosh,
            "sinh" => Func::Sinh,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    /// Piecewise functions have no symbolic derivative.
    fn is_piecewise(self) -> bool {
        matches!(self, Func::Abs | Func::Min | Func::Max)
    }
}

/// Byte range in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    fn join(self, other: Span) -> Span {
        Span {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` at byte {offset} takes {expected} argument(s), found {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("evaluation error in `{snippet}` (bytes {}..{}): {reason}", span.start, span.end)]
    Domain {
        span: Span,
        snippet: String,
        reason: String,
    },
    #[error("`{construct}` has no symbolic derivative with respect to {var}")]
    UnsupportedDerivative { construct: String, var: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
    /// `x_i / r`, the x-derivative of `r`; zero at the origin.
    RadialUnit(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    kind: Kind,
    span: Span,
}

/// Parsed expression over `x1`, `x2`, `s`, `r`.
///
/// Cheap to clone; the tree is shared.
#[derive(Clone)]
pub struct Expression {
    root: Arc<Node>,
    source: Arc<str>,
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({})", self)
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Default for Expression {
    fn default() -> Self {
        Expression::constant(0.0)
    }
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let mut parser = Parser::new(text)?;
        let root = parser.expr()?;
        parser.expect_end()?;
        Ok(Expression {
            root: Arc::new(root),
            source: Arc::from(text),
        })
    }

    pub fn constant(value: f64) -> Self {
        let source: Arc<str> = Arc::from(value.to_string());
        Expression {
            root: Arc::new(Node {
                kind: Kind::Num(value),
                span: Span {
                    start: 0,
                    end: source.len(),
                },
            }),
            source,
        }
    }

    /// The literal value if the expression folded to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root.kind {
            Kind::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn depends_on(&self, var: Var) -> bool {
        self.root.depends_on(var)
    }

    /// Evaluates at chart point `x` and flow parameter `s`.
    pub fn eval(&self, x: [f64; 2], s: f64) -> Result<f64, ExprError> {
        let env = Env {
            x,
            s,
            r: x[0].hypot(x[1]),
        };
        self.root.eval(&env, &self.source)
    }

    /// Symbolic partial derivative with respect to `x1`, `x2` or `s`.
    ///
    /// `r` is differentiated through the chain rule, `d r / d x_i = x_i / r`,
    /// evaluated as zero at the origin.
    pub fn derivative(&self, var: Var) -> Result<Expression, ExprError> {
        if var == Var::R {
            return Err(ExprError::UnsupportedDerivative {
                construct: "r".into(),
                var: var.name(),
            });
        }
        let d = self.root.derivative(var, &self.source)?;
        Ok(Expression {
            root: Arc::new(d),
            source: self.source.clone(),
        })
    }

    /// Shorthand for the symbolic s-derivative.
    pub fn s_derivative(&self) -> Result<Expression, ExprError> {
        self.derivative(Var::S)
    }
}

impl FromStr for Expression {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(f, 0)
    }
}

struct Env {
    x: [f64; 2],
    s: f64,
    r: f64,
}

fn num(v: f64, span: Span) -> Node {
    Node {
        kind: Kind::Num(v),
        span,
    }
}

fn is_num(n: &Node, v: f64) -> bool {
    matches!(n.kind, Kind::Num(x) if x == v)
}

fn neg(a: Node) -> Node {
    let span = a.span;
    match a.kind {
        Kind::Num(v) => num(-v, span),
        Kind::Neg(inner) => *inner,
        kind => Node {
            kind: Kind::Neg(Box::new(Node { kind, span })),
            span,
        },
    }
}

fn bin(op: BinOp, a: Node, b: Node) -> Node {
    let span = a.span.join(b.span);
    if let (Kind::Num(x), Kind::Num(y)) = (&a.kind, &b.kind) {
        let folded = match op {
            BinOp::Add => Some(x + y),
            BinOp::Sub => Some(x - y),
            BinOp::Mul => Some(x * y),
            BinOp::Div if *y != 0.0 => Some(x / y),
            BinOp::Pow if *x > 0.0 || y.fract() == 0.0 => Some(x.powf(*y)),
            _ => None,
        };
        if let Some(v) = folded {
            return num(v, span);
        }
    }
    match op {
        BinOp::Add if is_num(&a, 0.0) => return b,
        BinOp::Add | BinOp::Sub if is_num(&b, 0.0) => return a,
        BinOp::Sub if is_num(&a, 0.0) => return neg(b),
        BinOp::Mul if is_num(&a, 0.0) || is_num(&b, 0.0) => return num(0.0, span),
        BinOp::Mul if is_num(&a, 1.0) => return b,
        BinOp::Mul | BinOp::Div if is_num(&b, 1.0) => return a,
        BinOp::Mul if is_num(&a, -1.0) => return neg(b),
        BinOp::Mul if is_num(&b, -1.0) => return neg(a),
        BinOp::Div if is_num(&a, 0.0) => return num(0.0, span),
        BinOp::Pow if is_num(&b, 0.0) => return num(1.0, span),
        BinOp::Pow if is_num(&b, 1.0) => return a,
        _ => {}
    }
    Node {
        kind: Kind::Bin(op, Box::new(a), Box::new(b)),
        span,
    }
}

fn call(f: Func, args: Vec<Node>, span: Span) -> Node {
    Node {
        kind: Kind::Call(f, args),
        span,
    }
}

impl Node {
    fn depends_on(&self, var: Var) -> bool {
        match &self.kind {
            Kind::Num(_) => false,
            Kind::Var(w) => {
                *w == var || (*w == Var::R && matches!(var, Var::X1 | Var::X2 | Var::R))
            }
            Kind::RadialUnit(_) => matches!(var, Var::X1 | Var::X2 | Var::R),
            Kind::Neg(a) => a.depends_on(var),
            Kind::Bin(_, a, b) => a.depends_on(var) || b.depends_on(var),
            Kind::Call(_, args) => args.iter().any(|a| a.depends_on(var)),
        }
    }

    fn domain_error(&self, source: &str, reason: String) -> ExprError {
        let snippet = source
            .get(self.span.start..self.span.end)
            .unwrap_or(source)
            .to_string();
        ExprError::Domain {
            span: self.span,
            snippet,
            reason,
        }
    }

    fn eval(&self, env: &Env, source: &str) -> Result<f64, ExprError> {
        let value = match &self.kind {
            Kind::Num(v) => *v,
            Kind::Var(Var::X1) => env.x[0],
            Kind::Var(Var::X2) => env.x[1],
            Kind::Var(Var::S) => env.s,
            Kind::Var(Var::R) => env.r,
            Kind::RadialUnit(i) => {
                if env.r > 0.0 {
                    env.x[*i] / env.r
                } else {
                    0.0
                }
            }
            Kind::Neg(a) => -a.eval(env, source)?,
            Kind::Bin(op, a, b) => {
                let x = a.eval(env, source)?;
                let y = b.eval(env, source)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(self.domain_error(source, "division by zero".into()));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if x < 0.0 && y.fract() != 0.0 {
                            return Err(self.domain_error(
                                source,
                                format!("negative base {x} with non-integer exponent {y}"),
                            ));
                        }
                        if x == 0.0 && y < 0.0 {
                            return Err(
                                self.domain_error(source, "zero raised to a negative power".into())
                            );
                        }
                        x.powf(y)
                    }
                }
            }
            Kind::Call(f, args) => {
                let a = args[0].eval(env, source)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(self
                                .domain_error(source, format!("log of nonpositive argument {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self
                                .domain_error(source, format!("sqrt of negative argument {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Cosh => a.cosh(),
                    Func::Sinh => a.sinh(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval(env, source)?),
                    Func::Max => a.max(args[1].eval(env, source)?),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(self.domain_error(source, format!("non-finite result {value}")))
        }
    }

    fn derivative(&self, var: Var, source: &str) -> Result<Node, ExprError> {
        let span = self.span;
        if !self.depends_on(var) {
            return Ok(num(0.0, span));
        }
        Ok(match &self.kind {
            Kind::Num(_) => num(0.0, span),
            Kind::Var(w) if *w == var => num(1.0, span),
            Kind::Var(Var::R) => {
                let i = if var == Var::X1 { 0 } else { 1 };
                Node {
                    kind: Kind::RadialUnit(i),
                    span,
                }
            }
            Kind::Var(_) => num(0.0, span),
            Kind::RadialUnit(i) => {
                // d/dx_j (x_i / r) = (delta_ij - e_i e_j) / r
                let j = if var == Var::X1 { 0 } else { 1 };
                let unit = |k| Node {
                    kind: Kind::RadialUnit(k),
                    span,
                };
                let delta = num(if *i == j { 1.0 } else { 0.0 }, span);
                let numer = bin(BinOp::Sub, delta, bin(BinOp::Mul, unit(*i), unit(j)));
                bin(
                    BinOp::Div,
                    numer,
                    Node {
                        kind: Kind::Var(Var::R),
                        span,
                    },
                )
            }
            Kind::Neg(a) => neg(a.derivative(var, source)?),
            Kind::Bin(op, a, b) => {
                let (a, b) = (a.as_ref(), b.as_ref());
                match op {
                    BinOp::Add => bin(
                        BinOp::Add,
                        a.derivative(var, source)?,
                        b.derivative(var, source)?,
                    ),
                    BinOp::Sub => bin(
                        BinOp::Sub,
                        a.derivative(var, source)?,
                        b.derivative(var, source)?,
                    ),
                    BinOp::Mul => bin(
                        BinOp::Add,
                        bin(BinOp::Mul, a.derivative(var, source)?, b.clone()),
                        bin(BinOp::Mul, a.clone(), b.derivative(var, source)?),
                    ),
                    BinOp::Div => {
                        // a'/b - a b' / b^2
                        let first = bin(BinOp::Div, a.derivative(var, source)?, b.clone());
                        let second = bin(
                            BinOp::Div,
                            bin(BinOp::Mul, a.clone(), b.derivative(var, source)?),
                            bin(BinOp::Pow, b.clone(), num(2.0, b.span)),
                        );
                        bin(BinOp::Sub, first, second)
                    }
                    BinOp::Pow => {
                        if !b.depends_on(var) {
                            // b a^(b-1) a'
                            let reduced = bin(BinOp::Sub, b.clone(), num(1.0, b.span));
                            bin(
                                BinOp::Mul,
                                bin(BinOp::Mul, b.clone(), bin(BinOp::Pow, a.clone(), reduced)),
                                a.derivative(var, source)?,
                            )
                        } else {
                            // a^b (b' log a + b a' / a)
                            let log_a = call(Func::Log, vec![a.clone()], a.span);
                            let inner = bin(
                                BinOp::Add,
                                bin(BinOp::Mul, b.derivative(var, source)?, log_a),
                                bin(
                                    BinOp::Div,
                                    bin(BinOp::Mul, b.clone(), a.derivative(var, source)?),
                                    a.clone(),
                                ),
                            );
                            bin(BinOp::Mul, self.clone(), inner)
                        }
                    }
                }
            }
            Kind::Call(f, args) => {
                if f.is_piecewise() {
                    let snippet = source
                        .get(span.start..span.end)
                        .unwrap_or(f.name())
                        .to_string();
                    return Err(ExprError::UnsupportedDerivative {
                        construct: snippet,
                        var: var.name(),
                    });
                }
                let a = &args[0];
                let da = a.derivative(var, source)?;
                let outer = match f {
                    Func::Sin => call(Func::Cos, vec![a.clone()], span),
                    Func::Cos => neg(call(Func::Sin, vec![a.clone()], span)),
                    Func::Exp => self.clone(),
                    Func::Log => bin(BinOp::Div, num(1.0, span), a.clone()),
                    Func::Sqrt => bin(BinOp::Div, num(0.5, span), self.clone()),
                    Func::Cosh => call(Func::Sinh, vec![a.clone()], span),
                    Func::Sinh => call(Func::Cosh, vec![a.clone()], span),
                    Func::Tanh => bin(
                        BinOp::Sub,
                        num(1.0, span),
                        bin(BinOp::Pow, self.clone(), num(2.0, span)),
                    ),
                    Func::Abs | Func::Min | Func::Max => unreachable!(),
                };
                bin(BinOp::Mul, outer, da)
            }
        })
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            Kind::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Kind::Bin(BinOp::Mul | BinOp::Div, ..) | Kind::RadialUnit(_) => 2,
            Kind::Neg(_) => 3,
            Kind::Num(v) if *v < 0.0 => 3,
            Kind::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    /// Writes the node, parenthesized when its precedence is below `min`.
    fn write(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.precedence();
        if p < min {
            write!(f, "(")?;
        }
        match &self.kind {
            Kind::Num(v) => write!(f, "{v}")?,
            Kind::Var(v) => write!(f, "{}", v.name())?,
            Kind::RadialUnit(i) => write!(f, "x{}/r", i + 1)?,
            Kind::Neg(a) => {
                write!(f, "-")?;
                a.write(f, 3)?;
            }
            Kind::Bin(op, a, b) => match op {
                BinOp::Add | BinOp::Sub => {
                    a.write(f, 1)?;
                    write!(f, "{}", if *op == BinOp::Add { " + " } else { " - " })?;
                    b.write(f, 2)?;
                }
                BinOp::Mul | BinOp::Div => {
                    a.write(f, 2)?;
                    write!(f, "{}", if *op == BinOp::Mul { "*" } else { "/" })?;
                    b.write(f, 3)?;
                }
                BinOp::Pow => {
                    a.write(f, 5)?;
                    write!(f, "^")?;
                    // exponents may not start with a unary minus
                    b.write(f, 4)?;
                }
            },
            Kind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    a.write(f, 0)?;
                }
                write!(f, ")")?;
            }
        }
        if p < min {
            write!(f, ")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Parser {
    tokens: Vec<(Token, Span)>,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<(Token, Span)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                expected: format!("a number, found `{lit}`"),
            })?;
            out.push((Token::Num(v), Span { start, end: i }));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((
                Token::Ident(text[start..i].to_string()),
                Span { start, end: i },
            ));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => {
                    return Err(ExprError::Syntax {
                        offset: start,
                        expected: format!("an operator, operand or parenthesis, found `{c}`"),
                    })
                }
            };
            i += c.len_utf8();
            out.push((tok, Span { start, end: i }));
        }
    }
    out.push((
        Token::End,
        Span {
            start: text.len(),
            end: text.len(),
        },
    ));
    Ok(out)
}

impl Parser {
    fn new(text: &str) -> Result<Self, ExprError> {
        if text.trim().is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                expected: "a nonempty expression".into(),
            });
        }
        Ok(Parser {
            tokens: tokenize(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &(Token, Span) {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> (Token, Span) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.peek().1.start,
            expected: expected.into(),
        }
    }

    fn expect_end(&self) -> Result<(), ExprError> {
        match self.peek().0 {
            Token::End => Ok(()),
            _ => Err(self.error("an operator or end of input")),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Token::Op(c @ ('+' | '-')) = self.peek().0 {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = raw_bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Token::Op(c @ ('*' | '/')) = self.peek().0 {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = raw_bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let (Token::Op('-'), span) = self.peek().clone() {
            self.bump();
            let inner = self.unary()?;
            let span = span.join(inner.span);
            return Ok(Node {
                kind: Kind::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Token::Op('^') = self.peek().0 {
            self.bump();
            let exponent = self.exponent()?;
            return Ok(raw_bin(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Node, ExprError> {
        if let Token::Op('-') = self.peek().0 {
            return Err(self.error(
                "a number, identifier or '(' (a negative exponent must be parenthesized)",
            ));
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let (tok, span) = self.bump();
        match tok {
            Token::Num(v) => Ok(num(v, span)),
            Token::LParen => {
                let inner = self.expr()?;
                match self.bump() {
                    (Token::RParen, close) => Ok(Node {
                        kind: inner.kind,
                        span: span.join(close),
                    }),
                    _ => {
                        self.pos -= 1;
                        Err(self.error("')'"))
                    }
                }
            }
            Token::Ident(name) => {
                let var = match name.as_str() {
                    "x1" => Some(Var::X1),
                    "x2" => Some(Var::X2),
                    "s" => Some(Var::S),
                    "r" => Some(Var::R),
                    _ => None,
                };
                if let Some(v) = var {
                    return Ok(Node {
                        kind: Kind::Var(v),
                        span,
                    });
                }
                if name == "pi" {
                    return Ok(num(std::f64::consts::PI, span));
                }
                let Some(func) = Func::lookup(&name) else {
                    return Err(ExprError::UnknownIdentifier {
                        name,
                        offset: span.start,
                    });
                };
                if self.peek().0 != Token::LParen {
                    return Err(self.error(&format!("'(' after function `{name}`")));
                }
                self.bump();
                let mut args = Vec::new();
                if self.peek().0 != Token::RParen {
                    loop {
                        args.push(self.expr()?);
                        match self.peek().0 {
                            Token::Comma => {
                                self.bump();
                            }
                            Token::RParen => break,
                            _ => return Err(self.error("',' or ')'")),
                        }
                    }
                }
                let (_, close) = self.bump();
                if args.len() != func.arity() {
                    return Err(ExprError::Arity {
                        name,
                        offset: span.start,
                        expected: func.arity(),
                        found: args.len(),
                    });
                }
                Ok(call(func, args, span.join(close)))
            }
            Token::End => {
                self.pos = self.tokens.len() - 1;
                Err(self.error("an operand"))
            }
            _ => {
                self.pos -= 1;
                Err(self.error("a number, identifier or '('"))
            }
        }
    }
}

/// Unsimplified binary node, used by the parser to keep the source tree intact.
fn raw_bin(op: BinOp, a: Node, b: Node) -> Node {
    let span = a.span.join(b.span);
    Node {
        kind: Kind::Bin(op, Box::new(a), Box::new(b)),
        span,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(text: &str, x: [f64; 2], s: f64) -> f64 {
        Expression::parse(text).unwrap().eval(x, s).unwrap()
    }

    #[test]
    fn parses_and_evaluates_basic_forms() {
        assert_eq!(ev("1 + s", [0.0, 0.0], 2.0), 3.0);
        assert_eq!(ev("2/sqrt(1 - r^2)", [0.0, 0.0], 0.0), 2.0);
        assert_eq!(ev("-2^2", [0.0; 2], 0.0), -4.0);
        assert_eq!(ev("2^3^2", [0.0; 2], 0.0), 512.0);
        assert_eq!(ev("cosh(r)^(-2)", [0.0; 2], 0.0), 1.0);
        assert_eq!(ev("max(x1, x2) - min(x1, x2)", [3.0, 5.0], 0.0), 2.0);
        assert!((ev("r", [3.0, 4.0], 0.0) - 5.0).abs() < 1e-15);
        assert!((ev("2*pi", [0.0; 2], 0.0) - std::f64::consts::TAU).abs() < 1e-15);
        assert_eq!(ev(" 1.5e1 *  x1 ", [2.0, 0.0], 0.0), 30.0);
    }

    #[test]
    fn unary_minus_in_exponent_is_rejected() {
        let err = Expression::parse("cosh(r)^-2").unwrap_err();
        assert!(matches!(err, ExprError::Syntax { offset: 8, .. }), "{err}");
    }

    #[test]
    fn reports_unknown_identifiers_and_arity() {
        assert!(matches!(
            Expression::parse("1 + y").unwrap_err(),
            ExprError::UnknownIdentifier { offset: 4, .. }
        ));
        assert!(matches!(
            Expression::parse("max(1)").unwrap_err(),
            ExprError::Arity {
                expected: 2,
                found: 1,
                ..
            }
        ));
        assert!(matches!(
            Expression::parse("sin(1, 2)").unwrap_err(),
            ExprError::Arity { .. }
        ));
        assert!(matches!(
            Expression::parse("(1 + s").unwrap_err(),
            ExprError::Syntax { .. }
        ));
        assert!(matches!(
            Expression::parse("").unwrap_err(),
            ExprError::Syntax { offset: 0, .. }
        ));
        assert!(matches!(
            Expression::parse("1 +").unwrap_err(),
            ExprError::Syntax { offset: 3, .. }
        ));
        assert!(matches!(
            Expression::parse("1 $ 2").unwrap_err(),
            ExprError::Syntax { offset: 2, .. }
        ));
    }

    #[test]
    fn domain_errors_carry_source_location() {
        let e = Expression::parse("1 + sqrt(x1 - 2)").unwrap();
        match e.eval([1.0, 0.0], 0.0).unwrap_err() {
            ExprError::Domain { span, snippet, .. } => {
                assert_eq!(span, Span { start: 4, end: 16 });
                assert_eq!(snippet, "sqrt(x1 - 2)");
            }
            other => panic!("unexpected {other}"),
        }
        let e = Expression::parse("log(s)").unwrap();
        assert!(e.eval([0.0; 2], 0.0).is_err());
        let e = Expression::parse("1/x1").unwrap();
        assert!(e.eval([0.0; 2], 0.0).is_err());
    }

    #[test]
    fn s_derivatives_of_documented_examples() {
        let d = Expression::parse("1 + s").unwrap().s_derivative().unwrap();
        assert_eq!(d.to_string(), "1");
        let d = Expression::parse("exp(2*s)*r")
            .unwrap()
            .s_derivative()
            .unwrap();
        for &(x, s) in &[([0.3f64, 0.4], 0.2f64), ([1.0, -2.0], -0.7)] {
            let r = x[0].hypot(x[1]);
            let expected = 2.0 * (2.0 * s).exp() * r;
            assert!((d.eval(x, s).unwrap() - expected).abs() < 1e-12);
        }
        let d = Expression::parse("s^3").unwrap().s_derivative().unwrap();
        assert_eq!(d.eval([0.0; 2], 2.0).unwrap(), 12.0);
    }

    #[test]
    fn piecewise_functions_of_s_have_no_derivative() {
        for text in ["abs(s)", "min(s, 1)", "max(x1, 2*s)"] {
            let err = Expression::parse(text).unwrap().s_derivative().unwrap_err();
            assert!(matches!(err, ExprError::UnsupportedDerivative { .. }), "{text}");
        }
        // s-independent piecewise parts are fine
        let d = Expression::parse("abs(x1) + s").unwrap().s_derivative().unwrap();
        assert_eq!(d.as_constant(), Some(1.0));
    }

    #[test]
    fn radial_chain_rule() {
        let e = Expression::parse("1 + 3*r^2").unwrap();
        let d1 = e.derivative(Var::X1).unwrap();
        assert!((d1.eval([0.3, 0.4], 0.0).unwrap() - 6.0 * 0.3).abs() < 1e-14);
        assert_eq!(d1.eval([0.0, 0.0], 0.0).unwrap(), 0.0);
        let d12 = d1.derivative(Var::X2).unwrap();
        assert!(d12.eval([0.3, 0.4], 0.0).unwrap().abs() < 1e-13);
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "1 + s",
            "-x1^2 + 3*(x2 - s)/(1 + r)",
            "cosh(r)^(-2)",
            "exp(2*s)*r - min(x1, x2)",
            "2^3^2",
            "(2^3)^2",
            "-(1 - s) - -s",
        ] {
            let e = Expression::parse(text).unwrap();
            let again = Expression::parse(&e.to_string()).unwrap();
            for &(x, s) in &[([0.3, 0.4], 0.25), ([-1.5, 2.0], -0.5)] {
                assert_eq!(e.eval(x, s).unwrap(), again.eval(x, s).unwrap(), "{text}");
            }
        }
    }

    fn central(e: &Expression, var: Var, x: [f64; 2], s: f64) -> f64 {
        let h = 1e-5;
        let (mut xp, mut xm, mut sp, mut sm) = (x, x, s, s);
        match var {
            Var::X1 => {
                xp[0] += h;
                xm[0] -= h
            }
            Var::X2 => {
                xp[1] += h;
                xm[1] -= h
            }
            _ => {
                sp += h;
                sm -= h
            }
        }
        (e.eval(xp, sp).unwrap() - e.eval(xm, sm).unwrap()) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn symbolic_derivatives_match_central_differences(
            x1 in 0.1f64..1.0, x2 in 0.1f64..1.0, s in -1.0f64..1.0, pick in 0usize..6,
        ) {
            let texts = [
                "exp(2*s)*r",
                "sin(x1*s) + cos(x2)^2*s^3",
                "sqrt(2 + s^2)*log(1 + r^2)",
                "tanh(s - x1)/(1 + x2^2)",
                "cosh(s)*sinh(r) + (2 + s)^r",
                "(1 + s^2)^(x1 + 1)",
            ];
            let e = Expression::parse(texts[pick]).unwrap();
            for var in [Var::S, Var::X1, Var::X2] {
                let d = e.derivative(var).unwrap().eval([x1, x2], s).unwrap();
                let fd = central(&e, var, [x1, x2], s);
                prop_assert!((d - fd).abs() <= 1e-8 * d.abs().max(1.0), "{} d{:?}: {} vs {}", texts[pick], var, d, fd);
            }
        }

        #[test]
        fn concurrent_evaluation_is_pure(x1 in -1.0f64..1.0, s in -1.0f64..1.0) {
            let e = Expression::parse("sin(x1*s) + exp(-r^2)").unwrap();
            let serial = e.eval([x1, 0.5], s).unwrap();
            let values: Vec<f64> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..4).map(|_| scope.spawn(|| e.eval([x1, 0.5], s).unwrap())).collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            prop_assert!(values.iter().all(|v| v.to_bits() == serial.to_bits()));
        }
    }
}
