//! Flat instruction form of an expression for repeated evaluation.
//!
//! Slots become parameters indexed in [`Expr::slots`] order. The same tape
//! evaluates over `f64` (with operator range guards) or `Complex64`
//! (principal branches, no guards), and computes parameter gradients of a
//! scalar loss by a reverse sweep.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use super::eval::{complex_pow, real_pow};
use super::{Constant, Expr, OpKind, SlotId, Thresholds};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scale {
    Fixed(f64),
    Param(usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Var(usize),
    Fixed(f64),
    Param(usize),
    Add(Vec<(usize, Scale)>),
    Mul(Vec<usize>, Scale),
    Unary(OpKind, usize, Scale),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("placeholder outside of a sum or product")]
    Placeholder,
    #[error("variable index must be at least 1")]
    ZeroVariable,
}

/// Numeric type a tape can run over.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// `None` when the input is outside the operator's admissible set.
    fn apply(kind: OpKind, u: Self, c: Self, th: &Thresholds) -> Option<Self>;
    /// `(d/du, d/dc)` of a single-argument operator with output `v`.
    fn partials(kind: OpKind, u: Self, v: Self, c: Self) -> (Self, Self);
    fn real(self) -> f64;
    fn finite(self) -> bool;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn apply(kind: OpKind, u: f64, c: f64, th: &Thresholds) -> Option<f64> {
        if !th.admits(kind, u) {
            return None;
        }
        let v = match kind {
            OpKind::Inv => 1.0 / u,
            OpKind::Sin => u.sin(),
            OpKind::Cos => u.cos(),
            OpKind::Exp => u.exp(),
            OpKind::Pow | OpKind::FracPow => real_pow(u, c)?,
            OpKind::Log => u.ln(),
            OpKind::AddConst => u + c,
            OpKind::MulConst => u * c,
            OpKind::Add | OpKind::Mul => unreachable!(),
        };
        v.is_finite().then_some(v)
    }

    fn partials(kind: OpKind, u: f64, v: f64, c: f64) -> (f64, f64) {
        match kind {
            OpKind::Inv => (-v * v, 0.0),
            OpKind::Sin => (u.cos(), 0.0),
            OpKind::Cos => (-u.sin(), 0.0),
            OpKind::Exp => (v, 0.0),
            OpKind::Pow | OpKind::FracPow => {
                let du = if c == 0.0 {
                    0.0
                } else {
                    c * real_pow(u, c - 1.0).unwrap_or(f64::NAN)
                };
                let dc = if u > 0.0 {
                    v * u.ln()
                } else if u == 0.0 && c > 0.0 {
                    0.0
                } else {
                    f64::NAN
                };
                (du, dc)
            }
            OpKind::Log => (1.0 / u, 0.0),
            OpKind::AddConst => (1.0, 1.0),
            OpKind::MulConst => (c, u),
            OpKind::Add | OpKind::Mul => unreachable!(),
        }
    }

    fn real(self) -> f64 {
        self
    }

    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }

    fn apply(kind: OpKind, u: Self, c: Self, _th: &Thresholds) -> Option<Self> {
        let v = match kind {
            OpKind::Inv => {
                if u == Complex64::new(0.0, 0.0) {
                    return None;
                }
                u.inv()
            }
            OpKind::Sin => u.sin(),
            OpKind::Cos => u.cos(),
            OpKind::Exp => u.exp(),
            OpKind::Pow | OpKind::FracPow => complex_pow(u, c),
            OpKind::Log => u.ln(),
            OpKind::AddConst => u + c,
            OpKind::MulConst => u * c,
            OpKind::Add | OpKind::Mul => unreachable!(),
        };
        v.is_finite().then_some(v)
    }

    fn partials(kind: OpKind, u: Self, v: Self, c: Self) -> (Self, Self) {
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        match kind {
            OpKind::Inv => (-v * v, zero),
            OpKind::Sin => (u.cos(), zero),
            OpKind::Cos => (-u.sin(), zero),
            OpKind::Exp => (v, zero),
            OpKind::Pow | OpKind::FracPow => {
                let du = if c == zero { zero } else { c * complex_pow(u, c - one) };
                let dc = if u == zero { zero } else { v * u.ln() };
                (du, dc)
            }
            OpKind::Log => (u.inv(), zero),
            OpKind::AddConst => (one, one),
            OpKind::MulConst => (c, u),
            OpKind::Add | OpKind::Mul => unreachable!(),
        }
    }

    fn real(self) -> f64 {
        self.re
    }

    fn finite(self) -> bool {
        self.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tape {
    nodes: Vec<Node>,
    slots: Vec<SlotId>,
    thresholds: Thresholds,
}

struct Compiler<'a> {
    nodes: Vec<Node>,
    slots: &'a [SlotId],
}

impl Compiler<'_> {
    fn scale(&self, c: &Constant) -> Scale {
        match c {
            Constant::Value(v) => Scale::Fixed(*v),
            Constant::Slot(id) => Scale::Param(self.param(*id)),
        }
    }

    fn param(&self, id: SlotId) -> usize {
        self.slots.iter().position(|s| *s == id).expect("slot collected")
    }

    fn emit(&mut self, n: Node) -> usize {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn compile(&mut self, e: &Expr) -> Result<usize, CompileError> {
        let node = match e {
            Expr::Var(0) => return Err(CompileError::ZeroVariable),
            Expr::Var(i) => Node::Var(*i as usize - 1),
            Expr::Const(Constant::Value(v)) => Node::Fixed(*v),
            Expr::Const(Constant::Slot(id)) => Node::Param(self.param(*id)),
            Expr::Hole => return Err(CompileError::Placeholder),
            Expr::Op { kind, args, consts } => match kind {
                OpKind::Add => {
                    let mut terms = Vec::with_capacity(args.len());
                    for (a, s) in args.iter().zip(consts) {
                        if !a.is_hole() {
                            terms.push((self.compile(a)?, self.scale(s)));
                        }
                    }
                    Node::Add(terms)
                }
                OpKind::Mul => {
                    let mut factors = Vec::with_capacity(args.len());
                    for a in args.iter().filter(|a| !a.is_hole()) {
                        factors.push(self.compile(a)?);
                    }
                    Node::Mul(factors, self.scale(&consts[0]))
                }
                _ => {
                    let u = self.compile(&args[0])?;
                    let c = consts.first().map(|c| self.scale(c)).unwrap_or(Scale::Fixed(0.0));
                    Node::Unary(*kind, u, c)
                }
            },
        };
        Ok(self.emit(node))
    }
}

impl Tape {
    pub fn compile(e: &Expr, thresholds: Thresholds) -> Result<Tape, CompileError> {
        let mut slots = e.slots();
        slots.dedup();
        let mut c = Compiler {
            nodes: Vec::new(),
            slots: &slots,
        };
        c.compile(e)?;
        let nodes = c.nodes;
        Ok(Tape {
            nodes,
            slots,
            thresholds,
        })
    }

    /// Slot ids in parameter order.
    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    pub fn param_count(&self) -> usize {
        self.slots.len()
    }

    fn scale<T: Scalar>(s: Scale, params: &[f64]) -> T {
        match s {
            Scale::Fixed(v) => T::from_f64(v),
            Scale::Param(p) => T::from_f64(params[p]),
        }
    }

    /// Forward pass; `buf` receives every intermediate value. Returns `None`
    /// on a guard violation or non-finite intermediate.
    pub fn forward<T: Scalar>(&self, x: &[f64], params: &[f64], buf: &mut Vec<T>) -> Option<T> {
        buf.clear();
        for node in &self.nodes {
            let v = match node {
                Node::Var(i) => T::from_f64(x[*i]),
                Node::Fixed(v) => T::from_f64(*v),
                Node::Param(p) => T::from_f64(params[*p]),
                Node::Add(terms) => {
                    let mut acc = T::from_f64(0.0);
                    for (i, s) in terms {
                        acc = acc + Self::scale::<T>(*s, params) * buf[*i];
                    }
                    acc
                }
                Node::Mul(factors, c) => {
                    let mut acc = Self::scale::<T>(*c, params);
                    for i in factors {
                        acc = acc * buf[*i];
                    }
                    acc
                }
                Node::Unary(kind, u, c) => {
                    T::apply(*kind, buf[*u], Self::scale(*c, params), &self.thresholds)?
                }
            };
            if !v.finite() {
                return None;
            }
            buf.push(v);
        }
        buf.last().copied()
    }

    /// Reverse sweep after [`Tape::forward`]: adds `Re(seed * d out/d p)` to
    /// `grad[p]` for every parameter. Returns `false` if a local derivative
    /// was not finite.
    pub fn backward<T: Scalar>(
        &self,
        params: &[f64],
        buf: &[T],
        seed: T,
        grad: &mut [f64],
        adj: &mut Vec<T>,
    ) -> bool {
        let zero = T::from_f64(0.0);
        adj.clear();
        adj.resize(self.nodes.len(), zero);
        *adj.last_mut().expect("non-empty tape") = seed;
        let mut ok = true;
        fn add_param<T: Scalar>(s: Scale, d: T, grad: &mut [f64], ok: &mut bool) {
            if let Scale::Param(p) = s {
                let r = d.real();
                if r.is_finite() {
                    grad[p] += r;
                } else {
                    *ok = false;
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate().rev() {
            let a = adj[idx];
            match node {
                Node::Var(_) | Node::Fixed(_) => {}
                Node::Param(p) => add_param(Scale::Param(*p), a, grad, &mut ok),
                Node::Add(terms) => {
                    for (i, s) in terms {
                        adj[*i] = adj[*i] + a * Self::scale::<T>(*s, params);
                        add_param(*s, a * buf[*i], grad, &mut ok);
                    }
                }
                Node::Mul(factors, c) => {
                    let cv: T = Self::scale(*c, params);
                    let mut prod = T::from_f64(1.0);
                    for i in factors {
                        prod = prod * buf[*i];
                    }
                    add_param(*c, a * prod, grad, &mut ok);
                    for (j, i) in factors.iter().enumerate() {
                        let mut others = cv;
                        for (k, o) in factors.iter().enumerate() {
                            if k != j {
                                others = others * buf[*o];
                            }
                        }
                        adj[*i] = adj[*i] + a * others;
                    }
                }
                Node::Unary(kind, u, c) => {
                    let cv: T = Self::scale(*c, params);
                    let (du, dc) = T::partials(*kind, buf[*u], buf[idx], cv);
                    let g = a * du;
                    if !g.finite() {
                        ok = false;
                    } else {
                        adj[*u] = adj[*u] + g;
                    }
                    if kind.const_count() == 1 {
                        add_param(*c, a * dc, grad, &mut ok);
                    }
                }
            }
        }
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{differentiate_constants, evaluate, parse, Bindings};

    #[test]
    fn matches_tree_evaluation_and_gradient() {
        let e = parse("c_1*sin(c_2*x_1)+c_3*pow(x_2,c_4)*exp(c_5*x_1)+c_6").unwrap();
        let tape = Tape::compile(&e, Thresholds::default()).unwrap();
        let params = [1.3, -0.7, 0.4, 2.5, 0.2, -1.1];
        let b: Bindings = tape.slots().iter().copied().zip(params).collect();
        let x = [0.3, 0.8];
        let mut buf = Vec::new();
        let v: f64 = tape.forward(&x, &params, &mut buf).unwrap();
        let th = Thresholds::default();
        assert!((v - evaluate(&e, &x, &b, &th).unwrap()).abs() < 1e-14);
        let mut grad = vec![0.0; 6];
        let mut adj = Vec::new();
        assert!(tape.backward(&params, &buf, 1.0, &mut grad, &mut adj));
        let tree = differentiate_constants(&e, &x, &b, &th).unwrap();
        for (p, id) in tape.slots().iter().enumerate() {
            assert!((grad[p] - tree.grad[id]).abs() < 1e-12, "{id}");
        }
    }

    #[test]
    fn complex_run_agrees_on_real_inputs() {
        let e = parse("c_1*log(x_1)+inv(c_2*x_1)").unwrap();
        let tape = Tape::compile(&e, Thresholds::default()).unwrap();
        let params = [0.5, 2.0];
        let mut rb = Vec::new();
        let mut cb = Vec::new();
        let r: f64 = tape.forward(&[1.7], &params, &mut rb).unwrap();
        let c: Complex64 = tape.forward(&[1.7], &params, &mut cb).unwrap();
        assert!((r - c.re).abs() < 1e-14 && c.im == 0.0);
    }

    #[test]
    fn guard_violation_stops_real_pass() {
        let e = parse("log(c_1*x_1)").unwrap();
        let tape = Tape::compile(&e, Thresholds::default()).unwrap();
        let mut buf: Vec<f64> = Vec::new();
        assert!(tape.forward(&[1.0], &[-1.0], &mut buf).is_none());
        let mut cbuf: Vec<Complex64> = Vec::new();
        let z = tape.forward(&[1.0], &[-1.0], &mut cbuf).unwrap();
        assert!((z.im - std::f64::consts::PI).abs() < 1e-15);
    }
}
