//! Normal forms.
//!
//! The smart constructors here are shared with the parser so that printing a
//! canonical expression and parsing it back yields the identical tree. They
//! only ever remove kind-level edges (a sum absorbing a nested sum keeps the
//! grandchildren's kinds, which the inner sum already consumed); the one
//! exception is absorbing a `MulConst` child into a sum or product, which the
//! search never emits.

use std::cmp::Ordering;

use super::display::{render, SlotStyle};
use super::eval::apply_real;
use super::{Constant, Expr, OpKind, SlotId, Thresholds};

/// Product of two constants. Any free slot absorbs the other factor; when
/// both are free the first one is kept.
pub(crate) fn cmul(a: Constant, b: Constant) -> Constant {
    match (a, b) {
        (Constant::Value(x), Constant::Value(y)) => Constant::Value(x * y),
        (Constant::Slot(_), _) => a,
        (_, Constant::Slot(_)) => b,
    }
}

pub(crate) fn cadd(a: Constant, b: Constant) -> Constant {
    match (a, b) {
        (Constant::Value(x), Constant::Value(y)) => Constant::Value(x + y),
        (Constant::Slot(_), _) => a,
        (_, Constant::Slot(_)) => b,
    }
}

pub(crate) fn mk_op(kind: OpKind, args: Vec<Expr>, consts: Vec<Constant>) -> Expr {
    match kind {
        OpKind::Add => mk_add(args.into_iter().zip(consts).collect(), Constant::ZERO),
        OpKind::Mul => mk_mul(args, consts[0]),
        OpKind::MulConst => mk_mulconst(args.into_iter().next().unwrap(), consts[0]),
        OpKind::AddConst => mk_addconst(args.into_iter().next().unwrap(), consts[0]),
        _ => mk_unary(kind, args.into_iter().next().unwrap(), consts),
    }
}

/// Guarded unary operator with constant folding. A free slot anywhere in a
/// constant subtree makes the whole subtree a single free constant.
pub(crate) fn mk_unary(kind: OpKind, arg: Expr, consts: Vec<Constant>) -> Expr {
    if let Expr::Const(a) = arg {
        if let Some(slot) = std::iter::once(&a).chain(&consts).find(|c| c.is_slot()) {
            return Expr::Const(*slot);
        }
        let c = consts.first().and_then(Constant::as_value).unwrap_or(0.0);
        let u = a.as_value().unwrap();
        if let Ok(v) = apply_real(kind, u, c, &Thresholds::default()) {
            return Expr::value(v);
        }
    }
    Expr::Op {
        kind,
        args: vec![arg],
        consts,
    }
}

pub(crate) fn mk_mulconst(t: Expr, k: Constant) -> Expr {
    if k.is_value(1.0) {
        return t;
    }
    match t {
        Expr::Const(c) => Expr::Const(cmul(c, k)),
        Expr::Op {
            kind: OpKind::MulConst,
            mut args,
            consts,
        } => mk_mulconst(args.pop().unwrap(), cmul(consts[0], k)),
        Expr::Op {
            kind: OpKind::Mul,
            args,
            consts,
        } => Expr::mul(args, cmul(consts[0], k)),
        t => Expr::with_const(OpKind::MulConst, t, k),
    }
}

pub(crate) fn mk_addconst(t: Expr, k: Constant) -> Expr {
    if k.is_value(0.0) {
        return t;
    }
    match t {
        Expr::Const(c) => Expr::Const(cadd(c, k)),
        Expr::Op {
            kind: OpKind::AddConst,
            mut args,
            consts,
        } => mk_addconst(args.pop().unwrap(), cadd(consts[0], k)),
        t => Expr::with_const(OpKind::AddConst, t, k),
    }
}

struct SumBuilder {
    terms: Vec<(Expr, Constant)>,
    holes: usize,
    offset: Constant,
}

impl SumBuilder {
    fn push(&mut self, t: Expr, s: Constant) {
        match t {
            Expr::Hole => self.holes += 1,
            Expr::Const(k) => self.offset = cadd(self.offset, cmul(k, s)),
            Expr::Op {
                kind: OpKind::Add,
                args,
                consts,
            } if can_flatten(s, &args, &consts) => {
                for (a, c) in args.into_iter().zip(consts) {
                    self.push(a, cmul(c, s));
                }
            }
            Expr::Op {
                kind: OpKind::Mul,
                args,
                consts,
            } if !consts[0].is_value(1.0) => {
                self.push(Expr::mul(args, Constant::ONE), cmul(s, consts[0]));
            }
            Expr::Op {
                kind: OpKind::MulConst,
                mut args,
                consts,
            } => self.push(args.pop().unwrap(), cmul(s, consts[0])),
            t => self.terms.push((t, s)),
        }
    }
}

/// A nested sum may be spliced into its parent when distributing the outer
/// scale does not tie two independent bound values to one free slot.
fn can_flatten(outer: Constant, args: &[Expr], scales: &[Constant]) -> bool {
    if !outer.is_slot() {
        return true;
    }
    let bound = args
        .iter()
        .zip(scales)
        .filter(|(a, s)| !a.is_hole() && !s.is_slot())
        .count();
    bound <= 1
}

/// Sum of scaled terms plus an additive offset.
pub(crate) fn mk_add(terms: Vec<(Expr, Constant)>, offset: Constant) -> Expr {
    let mut b = SumBuilder {
        terms: Vec::new(),
        holes: 0,
        offset,
    };
    for (t, s) in terms {
        b.push(t, s);
    }

    let mut merged: Vec<(Expr, Constant)> = Vec::with_capacity(b.terms.len());
    for (t, s) in b.terms {
        match merged.iter_mut().find(|(u, _)| *u == t) {
            Some(entry) => entry.1 = cadd(entry.1, s),
            None => merged.push((t, s)),
        }
    }
    merged.retain(|(_, s)| !s.is_value(0.0));

    let base = match (merged.len(), b.holes) {
        (0, 1) if b.offset.is_value(0.0) => return Expr::Hole,
        (0, _) => return Expr::Const(b.offset),
        (1, 0) => {
            let (t, s) = merged.pop().unwrap();
            mk_mulconst(t, s)
        }
        _ => {
            let (mut args, mut scales): (Vec<_>, Vec<_>) = merged.into_iter().unzip();
            for _ in 0..b.holes {
                args.push(Expr::Hole);
                scales.push(Constant::ONE);
            }
            Expr::add(args, scales)
        }
    };
    mk_addconst(base, b.offset)
}

pub(crate) fn mk_mul(factors: Vec<Expr>, coef: Constant) -> Expr {
    fn push(f: Expr, out: &mut Vec<Expr>, holes: &mut usize, coef: &mut Constant) {
        match f {
            Expr::Hole => *holes += 1,
            Expr::Const(k) => *coef = cmul(*coef, k),
            Expr::Op {
                kind: OpKind::Mul,
                args,
                consts,
            } => {
                *coef = cmul(*coef, consts[0]);
                for a in args {
                    push(a, out, holes, coef);
                }
            }
            Expr::Op {
                kind: OpKind::MulConst,
                mut args,
                consts,
            } => {
                *coef = cmul(*coef, consts[0]);
                push(args.pop().unwrap(), out, holes, coef);
            }
            f => out.push(f),
        }
    }
    let mut out = Vec::with_capacity(factors.len());
    let mut holes = 0;
    let mut coef = coef;
    for f in factors {
        push(f, &mut out, &mut holes, &mut coef);
    }
    match (out.len(), holes) {
        (0, 1) if coef.is_value(1.0) => Expr::Hole,
        (0, _) => Expr::Const(coef),
        (1, 0) => mk_mulconst(out.pop().unwrap(), coef),
        _ => {
            out.extend(std::iter::repeat(Expr::Hole).take(holes));
            Expr::mul(out, coef)
        }
    }
}

fn rank(e: &Expr) -> usize {
    match e {
        Expr::Const(_) => 0,
        Expr::Op { kind, .. } => kind.index(),
        Expr::Var(i) => OpKind::ALL.len() + *i as usize,
        Expr::Hole => usize::MAX,
    }
}

fn const_key(c: &Constant) -> String {
    match c {
        Constant::Slot(_) => String::from("c"),
        Constant::Value(v) => super::display::fmt_num(*v),
    }
}

fn sort_children(e: &mut Expr) {
    if let Expr::Op { kind, args, consts } = e {
        for a in args.iter_mut() {
            sort_children(a);
        }
        match kind {
            OpKind::Add => {
                let mut pairs: Vec<(String, Expr, Constant)> = args
                    .drain(..)
                    .zip(consts.drain(..))
                    .map(|(a, c)| (render(&a, SlotStyle::Erased), a, c))
                    .collect();
                pairs.sort_by(|x, y| {
                    rank(&x.1)
                        .cmp(&rank(&y.1))
                        .then_with(|| x.0.cmp(&y.0))
                        .then_with(|| const_key(&x.2).cmp(&const_key(&y.2)))
                });
                for (_, a, c) in pairs {
                    args.push(a);
                    consts.push(c);
                }
            }
            OpKind::Mul => {
                let mut keyed: Vec<(String, Expr)> = args
                    .drain(..)
                    .map(|a| (render(&a, SlotStyle::Erased), a))
                    .collect();
                keyed.sort_by(|x, y| match rank(&x.1).cmp(&rank(&y.1)) {
                    Ordering::Equal => x.0.cmp(&y.0),
                    o => o,
                });
                args.extend(keyed.into_iter().map(|(_, a)| a));
            }
            _ => {}
        }
    }
}

fn rebuild(e: &Expr) -> Expr {
    match e {
        Expr::Op { kind, args, consts } => {
            let args = args.iter().map(rebuild).collect();
            let mut out = mk_op(*kind, args, consts.clone());
            sort_children(&mut out);
            out
        }
        other => other.clone(),
    }
}

/// Deterministic normal form: nested sums and products flattened, constant
/// subexpressions folded, scalar multiples merged into the enclosing sum or
/// product, commutative operands sorted by (kind, serialized form), and free
/// slots renumbered in serialization order.
pub fn canonicalize(e: &Expr) -> Expr {
    rebuild(e).renumber_slots()
}

/// Replace every constant position with a free slot and put variables in
/// leaf form `c*x_i`, then canonicalize.
pub fn skeletonize(e: &Expr) -> Expr {
    fn slotify(e: &Expr, next: &mut u32) -> Expr {
        let mut fresh = || {
            *next += 1;
            Constant::Slot(SlotId(*next))
        };
        match e {
            Expr::Var(i) => Expr::scaled_var(*i, fresh()),
            Expr::Const(_) => Expr::Const(fresh()),
            Expr::Hole => Expr::Hole,
            Expr::Op { kind, args, consts } => {
                if let Some(i) = e.leaf_var() {
                    return Expr::scaled_var(i, fresh());
                }
                let consts = consts.iter().map(|_| fresh()).collect();
                let args = args.iter().map(|a| slotify(a, next)).collect();
                Expr::Op {
                    kind: *kind,
                    args,
                    consts,
                }
            }
        }
    }
    let mut next = 0;
    canonicalize(&slotify(&canonicalize(e), &mut next))
}

/// Canonical serialization with slots erased and placeholders removed; two
/// skeletons with equal keys differ only in their constants.
pub fn shape_key(e: &Expr) -> String {
    render(&canonicalize(&e.strip_holes()), SlotStyle::Erased)
}

/// Like [`shape_key`] but keeps placeholders.
pub fn structure_key(e: &Expr) -> String {
    render(&canonicalize(e), SlotStyle::Erased)
}

/// Character count of the canonical serialization.
pub fn char_length(e: &Expr) -> usize {
    render(&canonicalize(e), SlotStyle::Numbered).chars().count()
}
