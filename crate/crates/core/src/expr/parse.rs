//! Recursive-descent parser for the benchmark notation.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | 'pi' | var | slot | hole
//!         | func '(' expr (',' expr)? ')' | '(' expr ')' | '-' factor
//! var    := 'x' '_'? digit+
//! slot   := 'c' ('_'? digit+)?
//! func   := sin | cos | exp | log | sqrt | pow | fpow | div | inv
//! ```
//!
//! `sqrt`, `div` and unary minus are rewritten onto the operator set. A bare
//! `c` is a fresh slot, numbered after every explicit `c_k`.

use std::fmt;

use super::canon::{mk_add, mk_mul, mk_mulconst, mk_unary};
use super::display::HOLE_TOKEN;
use super::{Constant, Expr, OpKind, SlotId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedEnd,
    UnexpectedChar(char),
    Expected(&'static str),
    UnknownIdentifier(String),
    BadNumber(String),
    WrongArgCount { func: String, expected: usize },
}

/// Parse failure at a character offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: ", self.offset)?;
        match &self.kind {
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::Expected(what) => write!(f, "expected {what}"),
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier {s:?}"),
            ParseErrorKind::BadNumber(s) => write!(f, "malformed number {s:?}"),
            ParseErrorKind::WrongArgCount { func, expected } => {
                write!(f, "{func} takes {expected} argument(s)")
            }
        }
    }
}

/// Bare `c` slots get provisional ids counting down from here.
const FRESH_BASE: u32 = u32::MAX;

struct Parser {
    chars: Vec<char>,
    pos: usize,
    fresh: u32,
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
        fresh: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if let Some(c) = p.peek() {
        return Err(p.err(ParseErrorKind::UnexpectedChar(c)));
    }
    Ok(if p.fresh > 0 { number_fresh_slots(e) } else { e })
}

fn number_fresh_slots(e: Expr) -> Expr {
    let provisional = |id: SlotId| id.0 > FRESH_BASE - 1_000_000;
    let explicit_max = e
        .slots()
        .into_iter()
        .filter(|id| !provisional(*id))
        .map(|id| id.0)
        .max()
        .unwrap_or(0);
    e.map_constants(&mut |c| match c {
        Constant::Slot(id) if provisional(*id) => {
            Constant::Slot(SlotId(explicit_max + (FRESH_BASE - id.0) + 1))
        }
        other => *other,
    })
}

impl Parser {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char, what: &'static str) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else if self.peek().is_none() {
            Err(self.err(ParseErrorKind::UnexpectedEnd))
        } else {
            Err(self.err(ParseErrorKind::Expected(what)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![(self.term()?, Constant::ONE)];
        loop {
            let sign = if self.eat('+') {
                1.0
            } else if self.eat('-') {
                -1.0
            } else {
                break;
            };
            terms.push((self.term()?, Constant::Value(sign)));
        }
        Ok(mk_add(terms, Constant::ZERO))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.factor()?];
        loop {
            if self.eat('*') {
                factors.push(self.factor()?);
            } else if self.eat('/') {
                let f = self.factor()?;
                factors.push(mk_unary(OpKind::Inv, f, Vec::new()));
            } else {
                break;
            }
        }
        Ok(mk_mul(factors, Constant::ONE))
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Err(self.err(ParseErrorKind::UnexpectedEnd));
        };
        if c == '-' {
            self.pos += 1;
            let f = self.factor()?;
            return Ok(mk_mulconst(f, Constant::Value(-1.0)));
        }
        if c == '+' {
            self.pos += 1;
            return self.factor();
        }
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(')', "')'")?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if self.chars[self.pos..].starts_with(&HOLE_TOKEN.chars().collect::<Vec<_>>()) {
            self.pos += HOLE_TOKEN.chars().count();
            return Ok(Expr::Hole);
        }
        if c.is_ascii_alphabetic() {
            let ident = self.ident();
            return self.identifier(ident, start);
        }
        Err(self.err(ParseErrorKind::UnexpectedChar(c)))
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .map(Expr::value)
            .map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::BadNumber(s),
            })
    }

    fn identifier(&mut self, ident: String, start: usize) -> Result<Expr, ParseError> {
        let unknown = |ident: String| ParseError {
            offset: start,
            kind: ParseErrorKind::UnknownIdentifier(ident),
        };
        if ident == "pi" {
            return Ok(Expr::value(std::f64::consts::PI));
        }
        if ident == "c" {
            self.fresh += 1;
            return Ok(Expr::Const(Constant::Slot(SlotId(FRESH_BASE - self.fresh + 1))));
        }
        if let Some(idx) = indexed(&ident, 'x') {
            return match idx {
                Some(i) if i >= 1 && i <= u8::MAX as u32 => Ok(Expr::Var(i as u8)),
                _ => Err(unknown(ident)),
            };
        }
        if let Some(idx) = indexed(&ident, 'c') {
            return match idx {
                Some(i) if i >= 1 && i < FRESH_BASE - 1_000_000 => {
                    Ok(Expr::Const(Constant::Slot(SlotId(i))))
                }
                _ => Err(unknown(ident)),
            };
        }
        let expected = match ident.as_str() {
            "sin" | "cos" | "exp" | "log" | "sqrt" | "inv" => 1,
            "pow" | "fpow" | "div" => 2,
            _ => return Err(unknown(ident)),
        };
        self.expect('(', "'('")?;
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        if args.len() != expected {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::WrongArgCount {
                    func: ident,
                    expected,
                },
            });
        }
        self.expect(')', "')'")?;
        let mut args = args.into_iter();
        let a = args.next().unwrap();
        Ok(match ident.as_str() {
            "sin" => mk_unary(OpKind::Sin, a, Vec::new()),
            "cos" => mk_unary(OpKind::Cos, a, Vec::new()),
            "exp" => mk_unary(OpKind::Exp, a, Vec::new()),
            "log" => mk_unary(OpKind::Log, a, Vec::new()),
            "inv" => mk_unary(OpKind::Inv, a, Vec::new()),
            "sqrt" => mk_unary(OpKind::FracPow, a, vec![Constant::Value(0.5)]),
            "div" => {
                let b = args.next().unwrap();
                mk_mul(vec![a, mk_unary(OpKind::Inv, b, Vec::new())], Constant::ONE)
            }
            "fpow" => match args.next().unwrap() {
                Expr::Const(c) => mk_unary(OpKind::FracPow, a, vec![c]),
                b => general_pow(a, b),
            },
            "pow" => power(a, args.next().unwrap()),
            _ => unreachable!(),
        })
    }
}

/// `x_3`, `x3` -> `Some(Some(3))`; `x` alone or other text -> `None`.
fn indexed(ident: &str, prefix: char) -> Option<Option<u32>> {
    let rest = ident.strip_prefix(prefix)?;
    let digits = rest.strip_prefix('_').unwrap_or(rest);
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(digits.parse().ok())
}

/// `pow(a, b)` mapped onto the operator set according to the exponent.
fn power(a: Expr, b: Expr) -> Expr {
    match b {
        Expr::Const(Constant::Value(n)) => {
            if n > 1.0 {
                mk_unary(OpKind::Pow, a, vec![Constant::Value(n)])
            } else if n == 1.0 {
                a
            } else if n > 0.0 {
                mk_unary(OpKind::FracPow, a, vec![Constant::Value(n)])
            } else if n == 0.0 {
                Expr::value(1.0)
            } else {
                mk_unary(OpKind::Inv, power(a, Expr::value(-n)), Vec::new())
            }
        }
        Expr::Const(c @ Constant::Slot(_)) => mk_unary(OpKind::Pow, a, vec![c]),
        b => general_pow(a, b),
    }
}

/// Non-constant exponent: `exp(b*log(a))`.
fn general_pow(a: Expr, b: Expr) -> Expr {
    let log = mk_unary(OpKind::Log, a, Vec::new());
    mk_unary(OpKind::Exp, mk_mul(vec![b, log], Constant::ONE), Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable() {
        assert_eq!(parse("x_1").unwrap(), Expr::Var(1));
        assert_eq!(parse("x2").unwrap(), Expr::Var(2));
    }

    #[test]
    fn three_term_sum() {
        let e = parse("pow(x_1,3)+pow(x_1,2)+x_1").unwrap();
        assert_eq!(e.kind(), Some(OpKind::Add));
        assert_eq!(e.children().len(), 3);
    }

    #[test]
    fn unbalanced_paren_reports_end_offset() {
        let err = parse("sin(").unwrap_err();
        assert_eq!(err.offset, 4);
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
    }

    #[test]
    fn unknown_identifier() {
        let err = parse("x_1+cot(x_2)").unwrap_err();
        assert_eq!(err.offset, 4);
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("cot".into()));
        assert!(parse("x+1").is_err());
    }

    #[test]
    fn sugar_maps_onto_operator_set() {
        let sq = parse("sqrt(x_1)").unwrap();
        assert_eq!(sq, Expr::with_const(OpKind::FracPow, Expr::Var(1), Constant::Value(0.5)));
        let d = parse("div(x_1,x_2)").unwrap();
        assert_eq!(
            d,
            Expr::mul(vec![Expr::Var(1), Expr::unary(OpKind::Inv, Expr::Var(2))], Constant::ONE)
        );
        let neg = parse("-sin(x_1)").unwrap();
        assert_eq!(
            neg,
            Expr::with_const(OpKind::MulConst, Expr::unary(OpKind::Sin, Expr::Var(1)), Constant::Value(-1.0))
        );
        let inv = parse("pow(x_1,-2)").unwrap();
        assert_eq!(inv.kind(), Some(OpKind::Inv));
    }

    #[test]
    fn variable_exponent_goes_through_log() {
        let e = parse("pow(x_1,x_2)").unwrap();
        assert_eq!(e.kind(), Some(OpKind::Exp));
    }

    #[test]
    fn bare_slots_number_after_explicit_ones() {
        let e = parse("c*sin(c_2*x_1)+c").unwrap();
        let slots: Vec<u32> = e.slots().iter().map(|s| s.0).collect();
        let mut sorted = slots.clone();
        sorted.sort();
        assert_eq!(sorted, [2, 3, 4]);
    }

    #[test]
    fn constants_fold_at_parse_time() {
        assert_eq!(parse("1/3").unwrap(), Expr::value(1.0 / 3.0));
        assert_eq!(parse("2*pi").unwrap(), Expr::value(2.0 * std::f64::consts::PI));
    }
}
