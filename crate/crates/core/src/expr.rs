//! Coefficient formulas: a small arithmetic language over base coordinates
//! `x1..xn`, fibre coordinates `v1..vn` and named parameters.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := ('-' | '+') unary | power
//! power  := primary ('^' exponent)?          right associative
//! primary:= number | symbol | func '(' expr ')' | '(' expr ')'
//! func   := sqrt | sin | cos
//! ```
//!
//! Exponents must be numeric constants equal to an integer or to `k/2`;
//! half-integer powers are evaluated as integer powers of a square root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jets::PhaseField;
use crate::scalar::Scalar;

/// Parameter values by name.
pub type Params = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    /// Base coordinate, zero-based.
    X(usize),
    /// Fibre coordinate, zero-based.
    V(usize),
    Param(String),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    /// `base^(num/den)` with `den` 1 or 2.
    Pow { base: Box<Node>, num: i32, den: u8 },
    Call(Func, Box<Node>),
}

/// A parsed, immutable formula.
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    root: Arc<Node>,
    dim: usize,
    source: Arc<str>,
}

impl Expression {
    pub fn parse(source: &str, dim: usize, params: &[&str]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if source.trim().is_empty() {
            return Err(Error::Syntax { pos: 0, message: "empty formula".into() });
        }
        let params: BTreeSet<&str> = params.iter().copied().collect();
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens: &tokens, at: 0, dim, params: &params, len: source.len() };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(Error::Syntax { pos: tok.pos, message: format!("unexpected {}", tok.kind) });
        }
        Ok(Expression { root: Arc::new(root), dim, source: source.into() })
    }

    /// Constant-zero formula.
    pub fn zero(dim: usize) -> Self {
        Expression { root: Arc::new(Node::Const(0.0)), dim, source: "0".into() }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self.root, Node::Const(c) if c == 0.0)
    }

    /// Names of the parameters that still occur in the tree.
    pub fn free_params(&self) -> BTreeSet<String> {
        fn walk(n: &Node, out: &mut BTreeSet<String>) {
            match n {
                Node::Param(p) => {
                    out.insert(p.clone());
                }
                Node::Neg(a) | Node::Call(_, a) | Node::Pow { base: a, .. } => walk(a, out),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Const(_) | Node::X(_) | Node::V(_) => {}
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    /// Replaces every parameter by its value. Fails if one is missing.
    pub fn bind(&self, params: &Params) -> Result<Self> {
        fn walk(n: &Node, p: &Params) -> Result<Node> {
            Ok(match n {
                Node::Param(name) => {
                    Node::Const(*p.get(name).ok_or_else(|| Error::UnboundParameter(name.clone()))?)
                }
                Node::Const(_) | Node::X(_) | Node::V(_) => n.clone(),
                Node::Neg(a) => Node::Neg(Box::new(walk(a, p)?)),
                Node::Call(f, a) => Node::Call(*f, Box::new(walk(a, p)?)),
                Node::Pow { base, num, den } => {
                    Node::Pow { base: Box::new(walk(base, p)?), num: *num, den: *den }
                }
                Node::Add(a, b) => Node::Add(Box::new(walk(a, p)?), Box::new(walk(b, p)?)),
                Node::Sub(a, b) => Node::Sub(Box::new(walk(a, p)?), Box::new(walk(b, p)?)),
                Node::Mul(a, b) => Node::Mul(Box::new(walk(a, p)?), Box::new(walk(b, p)?)),
                Node::Div(a, b) => Node::Div(Box::new(walk(a, p)?), Box::new(walk(b, p)?)),
            })
        }
        Ok(Expression { root: Arc::new(walk(&self.root, params)?), dim: self.dim, source: self.source.clone() })
    }

    /// Evaluates with the given parameter values.
    pub fn evaluate<T: Scalar>(&self, x: &[T], v: &[T], params: &Params) -> Result<T> {
        self.check_arity(x, v)?;
        eval_node(&self.root, x, v, params)
    }

    /// Evaluates an expression whose parameters have all been bound.
    pub fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<T> {
        self.check_arity(x, v)?;
        eval_node(&self.root, x, v, &EMPTY)
    }

    fn check_arity<T>(&self, x: &[T], v: &[T]) -> Result<()> {
        if x.len() != self.dim || v.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "formula expects {} coordinates, got x:{} v:{}",
                self.dim,
                x.len(),
                v.len()
            )));
        }
        Ok(())
    }
}

static EMPTY: Params = BTreeMap::new();

impl PhaseField for Expression {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(vec![Expression::eval(self, x, v)?])
    }
}

impl fmt::Display for Expression {
    /// Fully parenthesized form; parsing it again gives the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => write!(f, "(-{:?})", -c),
            Node::Const(c) => write!(f, "{c:?}"),
            Node::X(i) => write!(f, "x{}", i + 1),
            Node::V(i) => write!(f, "v{}", i + 1),
            Node::Param(p) => f.write_str(p),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow { base, num, den: 1 } => write!(f, "({base}^({num}))"),
            Node::Pow { base, num, den } => write!(f, "({base}^({num}/{den}))"),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

fn eval_node<T: Scalar>(n: &Node, x: &[T], v: &[T], p: &Params) -> Result<T> {
    Ok(match n {
        Node::Const(c) => T::from_f64(*c),
        Node::X(i) => x[*i],
        Node::V(i) => v[*i],
        Node::Param(name) => {
            T::from_f64(*p.get(name).ok_or_else(|| Error::UnboundParameter(name.clone()))?)
        }
        Node::Neg(a) => -eval_node(a, x, v, p)?,
        Node::Add(a, b) => eval_node(a, x, v, p)? + eval_node(b, x, v, p)?,
        Node::Sub(a, b) => eval_node(a, x, v, p)? - eval_node(b, x, v, p)?,
        Node::Mul(a, b) => eval_node(a, x, v, p)? * eval_node(b, x, v, p)?,
        Node::Div(a, b) => {
            let den = eval_node(b, x, v, p)?;
            if den.re() == 0.0 {
                return Err(Error::Domain("division by zero".into()));
            }
            eval_node(a, x, v, p)? / den
        }
        Node::Pow { base, num, den } => {
            let b = eval_node(base, x, v, p)?;
            if *den == 2 {
                checked_sqrt(b)?.powi(*num)
            } else {
                if *num < 0 && b.re() == 0.0 {
                    return Err(Error::Domain("negative power of zero".into()));
                }
                if *num < 0 {
                    T::one() / b.powi(-*num)
                } else {
                    b.powi(*num)
                }
            }
        }
        Node::Call(Func::Sqrt, a) => checked_sqrt(eval_node(a, x, v, p)?)?,
        Node::Call(Func::Sin, a) => eval_node(a, x, v, p)?.sin(),
        Node::Call(Func::Cos, a) => eval_node(a, x, v, p)?.cos(),
    })
}

/// Square root on the open positive half line; zero is rejected because the
/// derivative blows up there.
fn checked_sqrt<T: Scalar>(a: T) -> Result<T> {
    let r = a.re();
    if r > 0.0 {
        Ok(a.sqrt())
    } else if r == 0.0 && T::depth() == 0 {
        Ok(a.sqrt())
    } else {
        Err(Error::Domain(format!("square root of {r:e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(n) => write!(f, "number {n}"),
            TokKind::Ident(s) => write!(f, "`{s}`"),
            TokKind::Op(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
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
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| Error::Syntax {
                pos: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token { kind: TokKind::Num(value), pos: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(src[start..i].to_string()), pos: start });
        } else if "+-*/^()".contains(c) {
            out.push(Token { kind: TokKind::Op(c), pos: i });
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(Error::Syntax { pos: i, message: format!("unexpected character `{ch}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    at: usize,
    dim: usize,
    params: &'a BTreeSet<&'a str>,
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn peek_op(&self, op: char) -> bool {
        matches!(self.peek(), Some(Token { kind: TokKind::Op(c), .. }) if *c == op)
    }

    fn end_pos(&self) -> usize {
        self.len
    }

    fn expect_op(&mut self, op: char) -> Result<()> {
        match self.peek() {
            Some(Token { kind: TokKind::Op(c), .. }) if *c == op => {
                self.at += 1;
                Ok(())
            }
            Some(tok) => Err(Error::Syntax { pos: tok.pos, message: format!("expected `{op}`, found {}", tok.kind) }),
            None => Err(Error::Syntax { pos: self.end_pos(), message: format!("expected `{op}` before end of input") }),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_op('+') {
                self.at += 1;
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.peek_op('-') {
                self.at += 1;
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.at += 1;
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek_op('/') {
                self.at += 1;
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_op('-') {
            self.at += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op('+') {
            self.at += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if !self.peek_op('^') {
            return Ok(base);
        }
        let caret = self.tokens[self.at].pos;
        self.at += 1;
        let exponent = self.unary()?;
        let value = constant_value(&exponent).ok_or_else(|| Error::Syntax {
            pos: caret,
            message: "exponent must be a numeric constant".into(),
        })?;
        let twice = 2.0 * value;
        if twice.fract() != 0.0 || twice.abs() > 64.0 {
            return Err(Error::Syntax {
                pos: caret,
                message: format!("exponent {value} is not an integer or half-integer"),
            });
        }
        let twice = twice as i32;
        let (num, den) = if twice % 2 == 0 { (twice / 2, 1) } else { (twice, 2) };
        Ok(Node::Pow { base: Box::new(base), num, den })
    }

    fn primary(&mut self) -> Result<Node> {
        let Some(tok) = self.peek().cloned() else {
            return Err(Error::Syntax { pos: self.end_pos(), message: "unexpected end of input".into() });
        };
        self.at += 1;
        match tok.kind {
            TokKind::Num(n) => Ok(Node::Const(n)),
            TokKind::Op('(') => {
                let inner = self.expr()?;
                self.expect_op(')')?;
                Ok(inner)
            }
            TokKind::Op(c) => Err(Error::Syntax { pos: tok.pos, message: format!("unexpected `{c}`") }),
            TokKind::Ident(name) => {
                let func = match name.as_str() {
                    "sqrt" => Some(Func::Sqrt),
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    _ => None,
                };
                if let Some(func) = func {
                    self.expect_op('(')?;
                    let arg = self.expr()?;
                    self.expect_op(')')?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if self.params.contains(name.as_str()) {
                    return Ok(Node::Param(name));
                }
                if let Some(node) = self.coordinate(&name, tok.pos)? {
                    return Ok(node);
                }
                Err(Error::UnknownSymbol { token: name, pos: tok.pos })
            }
        }
    }

    fn coordinate(&self, name: &str, pos: usize) -> Result<Option<Node>> {
        let (head, digits) = name.split_at(1);
        if !(head == "x" || head == "v") || digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Ok(None);
        }
        let index: usize = digits.parse().unwrap_or(usize::MAX);
        if index == 0 || index > self.dim {
            return Err(Error::DimensionViolation { token: name.to_string(), pos, dim: self.dim });
        }
        Ok(Some(if head == "x" { Node::X(index - 1) } else { Node::V(index - 1) }))
    }
}

fn constant_value(n: &Node) -> Option<f64> {
    Some(match n {
        Node::Const(c) => *c,
        Node::Neg(a) => -constant_value(a)?,
        Node::Add(a, b) => constant_value(a)? + constant_value(b)?,
        Node::Sub(a, b) => constant_value(a)? - constant_value(b)?,
        Node::Mul(a, b) => constant_value(a)? * constant_value(b)?,
        Node::Div(a, b) => constant_value(a)? / constant_value(b)?,
        Node::Pow { base, num, den } => constant_value(base)?.powf(*num as f64 / *den as f64),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::{Dual, Jet1};

    fn params(pairs: &[(&str, f64)]) -> Params {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn constant_literal() {
        let e = Expression::parse("0", 2, &[]).unwrap();
        assert_eq!(*e.root(), Node::Const(0.0));
        assert!(e.is_zero());
    }

    #[test]
    fn shen_coefficient_has_sqrt_of_sum() {
        let e = Expression::parse("-2*tau*v2*sqrt(v1^2+v2^2)", 2, &["tau"]).unwrap();
        let text = e.to_string();
        assert!(text.contains("sqrt(((v1^(2)) + (v2^(2))))"), "{text}");
        let val: f64 = e.evaluate(&[0.5, 0.0], &[0.0, 1.0], &params(&[("tau", 1.0)])).unwrap();
        assert_eq!(val, -2.0);
    }

    #[test]
    fn power_node_and_value() {
        let e = Expression::parse("v3^2", 3, &[]).unwrap();
        assert!(matches!(e.root(), Node::Pow { num: 2, den: 1, .. }));
        let e = Expression::parse("v2^2", 2, &[]).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0], &[0.0, 3.0]).unwrap(), 9.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let eval = |s: &str| Expression::parse(s, 1, &[]).unwrap().eval(&[2.0], &[3.0]).unwrap();
        assert_eq!(eval("-x1^2"), -4.0);
        assert_eq!(eval("2^3^2"), 512.0);
        assert_eq!(eval("8-3-2"), 3.0);
        assert_eq!(eval("8/4/2"), 1.0);
        assert_eq!(eval("1+2*3"), 7.0);
        assert_eq!(eval("(1+2)*3"), 9.0);
        assert_eq!(eval("x1^-1"), 0.5);
        assert!((eval("x1^(3/2)") - 2f64.powf(1.5)).abs() < 1e-15);
        assert_eq!(eval("1.5e1"), 15.0);
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(
            Expression::parse("v1 + w", 2, &[]).unwrap_err(),
            Error::UnknownSymbol { token: "w".into(), pos: 5 }
        );
        assert_eq!(
            Expression::parse("x3", 2, &[]).unwrap_err(),
            Error::DimensionViolation { token: "x3".into(), pos: 0, dim: 2 }
        );
        assert!(matches!(Expression::parse("v1 +", 2, &[]), Err(Error::Syntax { pos: 4, .. })));
        assert!(matches!(Expression::parse("(v1", 2, &[]), Err(Error::Syntax { .. })));
        assert!(matches!(Expression::parse("v1 $ 2", 2, &[]), Err(Error::Syntax { pos: 3, .. })));
        assert!(matches!(Expression::parse("v1^x1", 2, &[]), Err(Error::Syntax { pos: 2, .. })));
        assert!(matches!(Expression::parse("v1^(1/3)", 2, &[]), Err(Error::Syntax { .. })));
        assert!(matches!(Expression::parse("  ", 2, &[]), Err(Error::Syntax { .. })));
        assert!(matches!(Expression::parse("abs(v1)", 2, &[]), Err(Error::UnknownSymbol { .. })));
    }

    #[test]
    fn domain_errors() {
        let f = Expression::parse("(sqrt(v1^2+v2^2) + (x2*v1 - x1*v2))/(2*(1-x1^2-x2^2))", 2, &[]).unwrap();
        let r: Result<f64> = f.eval(&[0.0, 1.0], &[1.0, 0.0]);
        assert!(r.unwrap_err().is_domain());
        let s = Expression::parse("sqrt(x1)", 1, &[]).unwrap();
        assert!(s.eval::<f64>(&[-1.0], &[1.0]).unwrap_err().is_domain());
        assert!(s.eval::<Jet1>(&[Dual::new(0.0, 1.0)], &[Jet1::from_f64(1.0)]).unwrap_err().is_domain());
    }

    #[test]
    fn unbound_parameters_are_reported() {
        let e = Expression::parse("tau*v1", 1, &["tau"]).unwrap();
        assert_eq!(e.eval::<f64>(&[0.0], &[1.0]).unwrap_err(), Error::UnboundParameter("tau".into()));
        let bound = e.bind(&params(&[("tau", 0.75)])).unwrap();
        assert!(bound.free_params().is_empty());
        assert_eq!(bound.eval(&[0.0], &[2.0]).unwrap(), 1.5);
    }

    #[test]
    fn printed_form_parses_to_the_same_tree() {
        let src = "-2*tau*v2*sqrt(v1^2+v2^2) / (1 - x1^(3/2)) + cos(x2)^-2 - sin(-v1)";
        let e = Expression::parse(src, 2, &["tau"]).unwrap();
        let again = Expression::parse(&e.to_string(), 2, &["tau"]).unwrap();
        assert_eq!(e.root(), again.root());
    }
}
