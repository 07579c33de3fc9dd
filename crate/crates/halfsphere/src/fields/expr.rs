//! Expression trees for scalar fields in ambient coordinates.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | ident '(' expr ')' | 'x1'..'x4' | '(' expr ')'
//! ident  := 'exp' | 'sin' | 'cos' | 'sqrt' | 'atan'
//! ```
//!
//! Numbers are decimal literals with optional exponent. `atan` also parses
//! as `arctan`. Variables refer to the ambient coordinates of the sphere;
//! chart expressions use `x1..x3`. `ln` is accepted as well so that
//! derivatives of general powers stay inside the grammar.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Variable index 0..3 for x1..x4.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sqrt(Box<Expr>),
    Atan(Box<Expr>),
    Ln(Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        assert!(i < 4);
        Expr::Var(i)
    }

    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Neg(a) => -a.eval(x),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
            Expr::Atan(a) => a.eval(x).atan(),
            Expr::Ln(a) => a.eval(x).ln(),
        }
    }

    /// Partial derivative with respect to variable `i`, as a new tree.
    pub fn derivative(&self, i: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(j) => Const(if *j == i { 1.0 } else { 0.0 }),
            Add(a, b) => simplify_add(a.derivative(i), b.derivative(i)),
            Sub(a, b) => simplify_sub(a.derivative(i), b.derivative(i)),
            Mul(a, b) => simplify_add(
                simplify_mul(a.derivative(i), (**b).clone()),
                simplify_mul((**a).clone(), b.derivative(i)),
            ),
            Div(a, b) => {
                // (a'b - ab') / b^2
                let num = simplify_sub(
                    simplify_mul(a.derivative(i), (**b).clone()),
                    simplify_mul((**a).clone(), b.derivative(i)),
                );
                simplify_div(num, simplify_mul((**b).clone(), (**b).clone()))
            }
            Pow(a, b) => match **b {
                Const(c) => {
                    // c a^{c-1} a'
                    let power = if (c - 1.0).abs() < 1e-300 {
                        Const(1.0)
                    } else {
                        Pow(a.clone(), Box::new(Const(c - 1.0)))
                    };
                    simplify_mul(simplify_mul(Const(c), power), a.derivative(i))
                }
                _ => {
                    // a^b (b' ln a + b a'/a)
                    let inner = simplify_add(
                        simplify_mul(b.derivative(i), Ln(a.clone())),
                        simplify_div(simplify_mul((**b).clone(), a.derivative(i)), (**a).clone()),
                    );
                    simplify_mul(Pow(a.clone(), b.clone()), inner)
                }
            },
            Neg(a) => simplify_neg(a.derivative(i)),
            Exp(a) => simplify_mul(Exp(a.clone()), a.derivative(i)),
            Sin(a) => simplify_mul(Cos(a.clone()), a.derivative(i)),
            Cos(a) => simplify_neg(simplify_mul(Sin(a.clone()), a.derivative(i))),
            Sqrt(a) => simplify_div(
                a.derivative(i),
                simplify_mul(Const(2.0), Sqrt(a.clone())),
            ),
            Atan(a) => simplify_div(
                a.derivative(i),
                simplify_add(Const(1.0), simplify_mul((**a).clone(), (**a).clone())),
            ),
            Ln(a) => simplify_div(a.derivative(i), (**a).clone()),
        }
    }

    /// Substitute each variable by the corresponding expression (used to
    /// compose ambient fields with chart coordinate maps).
    pub fn substitute(&self, vars: &[Expr; 4]) -> Expr {
        use Expr::*;
        match self {
            Const(c) => Const(*c),
            Var(i) => vars[*i].clone(),
            Add(a, b) => Add(Box::new(a.substitute(vars)), Box::new(b.substitute(vars))),
            Sub(a, b) => Sub(Box::new(a.substitute(vars)), Box::new(b.substitute(vars))),
            Mul(a, b) => Mul(Box::new(a.substitute(vars)), Box::new(b.substitute(vars))),
            Div(a, b) => Div(Box::new(a.substitute(vars)), Box::new(b.substitute(vars))),
            Pow(a, b) => Pow(Box::new(a.substitute(vars)), Box::new(b.substitute(vars))),
            Neg(a) => Neg(Box::new(a.substitute(vars))),
            Exp(a) => Exp(Box::new(a.substitute(vars))),
            Sin(a) => Sin(Box::new(a.substitute(vars))),
            Cos(a) => Cos(Box::new(a.substitute(vars))),
            Sqrt(a) => Sqrt(Box::new(a.substitute(vars))),
            Atan(a) => Atan(Box::new(a.substitute(vars))),
            Ln(a) => Ln(Box::new(a.substitute(vars))),
        }
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

fn simplify_add(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        b
    } else if is_zero(&b) {
        a
    } else {
        Expr::Add(Box::new(a), Box::new(b))
    }
}

fn simplify_sub(a: Expr, b: Expr) -> Expr {
    if is_zero(&b) {
        a
    } else if is_zero(&a) {
        simplify_neg(b)
    } else {
        Expr::Sub(Box::new(a), Box::new(b))
    }
}

fn simplify_mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        Expr::Const(0.0)
    } else if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Expr::Mul(Box::new(a), Box::new(b))
    }
}

fn simplify_div(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        Expr::Const(0.0)
    } else if is_one(&b) {
        a
    } else {
        Expr::Div(Box::new(a), Box::new(b))
    }
}

fn simplify_neg(a: Expr) -> Expr {
    if is_zero(&a) {
        Expr::Const(0.0)
    } else {
        Expr::Neg(Box::new(a))
    }
}

// ---------------------------------------------------------------------------
// Pretty printing (inverse of the parser, modulo whitespace)
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f, 0)
    }
}

/// Precedence levels: 0 additive, 1 multiplicative, 2 unary minus, 3 power.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 0,
        Expr::Mul(..) | Expr::Div(..) => 1,
        Expr::Neg(..) => 2,
        Expr::Pow(..) => 3,
        _ => 4,
    }
}

fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
    let p = precedence(e);
    let needs = p < parent;
    if needs {
        write!(f, "(")?;
    }
    match e {
        Expr::Const(c) => {
            if *c < 0.0 || !c.is_finite() {
                write!(f, "({c})")?;
            } else {
                write!(f, "{c}")?;
            }
        }
        Expr::Var(i) => write!(f, "x{}", i + 1)?,
        Expr::Add(a, b) => {
            write_expr(a, f, 0)?;
            write!(f, " + ")?;
            write_expr(b, f, 1)?;
        }
        Expr::Sub(a, b) => {
            write_expr(a, f, 0)?;
            write!(f, " - ")?;
            write_expr(b, f, 1)?;
        }
        Expr::Mul(a, b) => {
            write_expr(a, f, 1)?;
            write!(f, "*")?;
            write_expr(b, f, 2)?;
        }
        Expr::Div(a, b) => {
            write_expr(a, f, 1)?;
            write!(f, "/")?;
            write_expr(b, f, 2)?;
        }
        Expr::Pow(a, b) => {
            write_expr(a, f, 4)?;
            write!(f, "^")?;
            write_expr(b, f, 3)?;
        }
        Expr::Neg(a) => {
            write!(f, "-")?;
            write_expr(a, f, 2)?;
        }
        Expr::Exp(a) => write_fn(f, "exp", a)?,
        Expr::Sin(a) => write_fn(f, "sin", a)?,
        Expr::Cos(a) => write_fn(f, "cos", a)?,
        Expr::Sqrt(a) => write_fn(f, "sqrt", a)?,
        Expr::Atan(a) => write_fn(f, "atan", a)?,
        Expr::Ln(a) => write_fn(f, "ln", a)?,
    }
    if needs {
        write!(f, ")")?;
    }
    Ok(())
}

fn write_fn(f: &mut fmt::Formatter<'_>, name: &str, a: &Expr) -> fmt::Result {
    write!(f, "{name}(")?;
    write_expr(a, f, 0)?;
    write!(f, ")")
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

pub fn parse_expression(text: &str) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::Parse { offset: 0, msg: "empty expression".into() });
    }
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    let e = p.parse_expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(Error::Parse {
            offset: p.pos,
            msg: format!("unexpected trailing input `{}`", &text[p.pos..]),
        });
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Expr> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.parse_factor()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let base = self.parse_atom()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.parse_factor()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            None => Err(Error::Parse { offset: start, msg: "unexpected end of input".into() }),
            Some(b'(') => {
                self.pos += 1;
                let e = self.parse_expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(Error::Parse { offset: self.pos, msg: "expected `)`".into() });
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => {
                while self
                    .peek()
                    .map(|c| c.is_ascii_alphanumeric() || c == b'_')
                    .unwrap_or(false)
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match name {
                    "x1" => Ok(Expr::Var(0)),
                    "x2" => Ok(Expr::Var(1)),
                    "x3" => Ok(Expr::Var(2)),
                    "x4" => Ok(Expr::Var(3)),
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "exp" | "sin" | "cos" | "sqrt" | "atan" | "arctan" | "ln" => {
                        self.skip_ws();
                        if self.peek() != Some(b'(') {
                            return Err(Error::Parse {
                                offset: self.pos,
                                msg: format!("expected `(` after `{name}`"),
                            });
                        }
                        self.pos += 1;
                        let arg = Box::new(self.parse_expr()?);
                        self.skip_ws();
                        if self.peek() != Some(b')') {
                            return Err(Error::Parse { offset: self.pos, msg: "expected `)`".into() });
                        }
                        self.pos += 1;
                        Ok(match name {
                            "exp" => Expr::Exp(arg),
                            "sin" => Expr::Sin(arg),
                            "cos" => Expr::Cos(arg),
                            "sqrt" => Expr::Sqrt(arg),
                            "ln" => Expr::Ln(arg),
                            _ => Expr::Atan(arg),
                        })
                    }
                    _ => Err(Error::Name(name.to_string())),
                }
            }
            Some(c) => Err(Error::Parse {
                offset: start,
                msg: format!("unexpected character `{}`", c as char),
            }),
        }
    }

    fn parse_number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_digit() || c == b'.')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark; // `e` belonged to an identifier after all
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::Parse { offset: start, msg: format!("bad number `{text}`") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evaluates_simple_expression() {
        let e = parse_expression("2 + x4^2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0, 0.0, 1.0]), 3.0);
    }

    #[test]
    fn parse_error_carries_offset() {
        match parse_expression("1 + * 2") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_expression("1 + y2") {
            Err(Error::Name(name)) => assert_eq!(name, "y2"),
            other => panic!("expected name error, got {other:?}"),
        }
    }

    #[test]
    fn operator_precedence() {
        let e = parse_expression("1 + 2*3^2").unwrap();
        assert_eq!(e.eval(&[0.0; 4]), 19.0);
        let e = parse_expression("-x1^2").unwrap();
        assert_eq!(e.eval(&[2.0, 0.0, 0.0, 0.0]), -4.0);
        let e = parse_expression("2^-1").unwrap();
        assert_eq!(e.eval(&[0.0; 4]), 0.5);
    }

    fn finite_difference(e: &Expr, x: &[f64; 4], i: usize) -> f64 {
        let h = 1e-5;
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        (e.eval(&xp) - e.eval(&xm)) / (2.0 * h)
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exprs = [
            "sin(x1)*cos(x2)",
            "exp(x1*x2) + sqrt(2 + x3)",
            "atan(x1/(1 + x4^2))",
            "(x1 + x2)^3 - x3/(2 + x4)",
            "sqrt(1 + x1^2 + x2^2)",
        ];
        for text in exprs {
            let e = parse_expression(text).unwrap();
            for i in 0..4 {
                let d = e.derivative(i);
                for _ in 0..20 {
                    let x: [f64; 4] = std::array::from_fn(|_| rng.gen::<f64>() - 0.5);
                    let exact = d.eval(&x);
                    let approx = finite_difference(&e, &x, i);
                    let scale = exact.abs().max(1.0);
                    assert!(
                        (exact - approx).abs() < 1e-6 * scale,
                        "{text} d/dx{i}: {exact} vs {approx}"
                    );
                }
            }
        }
    }

    #[test]
    fn substitution_composes() {
        let e = parse_expression("x1^2 + x2").unwrap();
        let composed = e.substitute(&[
            parse_expression("x3 + 1").unwrap(),
            parse_expression("2*x4").unwrap(),
            Expr::Const(0.0),
            Expr::Const(0.0),
        ]);
        let x = [0.0, 0.0, 2.0, 5.0];
        assert_eq!(composed.eval(&x), 9.0 + 10.0);
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (0usize..4).prop_map(Expr::Var),
                (0.0..10.0f64).prop_map(|c| Expr::Const((c * 100.0).round() / 100.0)),
            ];
            leaf.prop_recursive(4, 24, 3, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
                    (inner.clone(), 1u32..4)
                        .prop_map(|(a, k)| Expr::Pow(Box::new(a), Box::new(Expr::Const(k as f64)))),
                    inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Sin(Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Cos(Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Exp(Box::new(a))),
                    inner.prop_map(|a| Expr::Atan(Box::new(a))),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn print_parse_round_trip(e in arb_expr()) {
                let printed = e.to_string();
                let reparsed = parse_expression(&printed).unwrap();
                // structural identity up to constant re-printing
                prop_assert_eq!(reparsed.to_string(), printed);
                // and numerical identity on a fixed point
                let x = [0.3, -0.4, 0.5, 0.6];
                let a = e.eval(&x);
                let b = reparsed.eval(&x);
                prop_assert!(
                    (a.is_nan() && b.is_nan())
                        || a == b
                        || (a - b).abs() <= 1e-12 * a.abs().max(1.0)
                );
            }
        }
    }
}
