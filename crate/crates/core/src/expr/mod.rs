//! Expression trees over the eleven-operator set.
//!
//! An [`Expr`] is built from variables `x_i`, constants (either bound values
//! or free slots awaiting optimization), placeholders left by the search, and
//! operator applications. Each operator carries the constants of its closed
//! form in `consts`:
//!
//! | kind | form | consts |
//! |------|------|--------|
//! | `Add` | `s_1*u_1 + s_2*u_2 + ...` | one scale per term |
//! | `Mul` | `c*u_1*u_2*...` | `[c]` |
//! | `Pow`, `FracPow` | `pow(u, c)` | `[c]` |
//! | `AddConst` | `u + c` | `[c]` |
//! | `MulConst` | `u * c` | `[c]` |
//! | others | `G(u)` | `[]` |
//!
//! `Add` and `Mul` are n-ary once canonicalized; the binary two-term forms are
//! the special case produced by parsing and search.

mod canon;
mod display;
mod domain;
mod equiv;
mod eval;
mod ops;
mod parse;
pub mod tape;

use std::collections::BTreeMap;
use std::fmt;

pub use canon::{canonicalize, char_length, shape_key, skeletonize, structure_key};
pub use domain::{EvalDomain, Interval, Thresholds, VarRange};
pub use equiv::{halton, numeric_equivalent, Equivalence};
pub use eval::{differentiate_constants, evaluate, evaluate_complex, ConstGradient, EvalError};
pub use ops::OpKind;
pub use parse::{parse, ParseError, ParseErrorKind};

/// Identifier of a free constant. Ids are 1-based and unique within one
/// expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub u32);

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c_{}", self.0)
    }
}

/// A constant position: either still free, or bound to a value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constant {
    Slot(SlotId),
    Value(f64),
}

impl Constant {
    pub const ONE: Constant = Constant::Value(1.0);
    pub const ZERO: Constant = Constant::Value(0.0);

    pub fn is_value(&self, v: f64) -> bool {
        matches!(self, Constant::Value(x) if *x == v)
    }

    pub fn as_value(&self) -> Option<f64> {
        match self {
            Constant::Value(v) => Some(*v),
            Constant::Slot(_) => None,
        }
    }

    pub fn is_slot(&self) -> bool {
        matches!(self, Constant::Slot(_))
    }
}

/// Slot bindings used when evaluating a skeleton.
pub type Bindings = BTreeMap<SlotId, f64>;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    /// `x_i`, 1-based.
    Var(u8),
    Const(Constant),
    /// Reserved position for a later extra term; evaluates as the identity of
    /// its parent (0 in a sum, 1 in a product).
    Hole,
    Op {
        kind: OpKind,
        args: Vec<Expr>,
        consts: Vec<Constant>,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructureError {
    #[error("{kind} expects {expected} argument(s), found {found}")]
    Arity {
        kind: OpKind,
        expected: &'static str,
        found: usize,
    },
    #[error("{kind} expects {expected} constant(s), found {found}")]
    ConstCount {
        kind: OpKind,
        expected: usize,
        found: usize,
    },
    #[error("slot {0} appears more than once")]
    DuplicateSlot(SlotId),
    #[error("placeholder outside of a sum or product")]
    MisplacedHole,
    #[error("variable index must be at least 1")]
    ZeroVariable,
}

impl Expr {
    pub fn var(i: u8) -> Expr {
        Expr::Var(i)
    }

    pub fn value(v: f64) -> Expr {
        Expr::Const(Constant::Value(v))
    }

    pub fn unary(kind: OpKind, arg: Expr) -> Expr {
        debug_assert_eq!(kind.arity(), 1);
        debug_assert_eq!(kind.const_count(), 0);
        Expr::Op {
            kind,
            args: vec![arg],
            consts: Vec::new(),
        }
    }

    /// Single-argument operator with one constant (`Pow`, `FracPow`,
    /// `AddConst`, `MulConst`).
    pub fn with_const(kind: OpKind, arg: Expr, c: Constant) -> Expr {
        debug_assert_eq!(kind.arity(), 1);
        debug_assert_eq!(kind.const_count(), 1);
        Expr::Op {
            kind,
            args: vec![arg],
            consts: vec![c],
        }
    }

    pub fn add(terms: Vec<Expr>, scales: Vec<Constant>) -> Expr {
        debug_assert_eq!(terms.len(), scales.len());
        Expr::Op {
            kind: OpKind::Add,
            args: terms,
            consts: scales,
        }
    }

    pub fn mul(factors: Vec<Expr>, coef: Constant) -> Expr {
        Expr::Op {
            kind: OpKind::Mul,
            args: factors,
            consts: vec![coef],
        }
    }

    /// Leaf form `c*x_i`.
    pub fn scaled_var(i: u8, c: Constant) -> Expr {
        Expr::with_const(OpKind::MulConst, Expr::Var(i), c)
    }

    pub fn kind(&self) -> Option<OpKind> {
        match self {
            Expr::Op { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    /// Variable index when this node is `x_i` or the leaf form `c*x_i`.
    pub fn leaf_var(&self) -> Option<u8> {
        match self {
            Expr::Var(i) => Some(*i),
            Expr::Op {
                kind: OpKind::MulConst,
                args,
                ..
            } => match args.as_slice() {
                [Expr::Var(i)] => Some(*i),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn is_hole(&self) -> bool {
        matches!(self, Expr::Hole)
    }

    pub fn children(&self) -> &[Expr] {
        match self {
            Expr::Op { args, .. } => args,
            _ => &[],
        }
    }

    /// Number of nodes counting leaves at 1 (`x_1` has depth 1, `sin(x_1)` 2).
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Expr::depth).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(Expr::node_count).sum::<usize>()
    }

    /// Visit every node in pre-order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Visit every constant position (operator constants and constant leaves)
    /// in the order they appear in the serialized form.
    pub fn visit_constants<'a>(&'a self, f: &mut impl FnMut(&'a Constant)) {
        match self {
            Expr::Const(c) => f(c),
            Expr::Op { kind, args, consts } => match kind {
                OpKind::Add => {
                    for (a, c) in args.iter().zip(consts) {
                        f(c);
                        a.visit_constants(f);
                    }
                }
                OpKind::Mul | OpKind::MulConst => {
                    consts.iter().for_each(&mut *f);
                    for a in args {
                        a.visit_constants(f);
                    }
                }
                _ => {
                    for a in args {
                        a.visit_constants(f);
                    }
                    consts.iter().for_each(f);
                }
            },
            _ => {}
        }
    }

    /// Rebuild with every constant position mapped, in the same order as
    /// [`Expr::visit_constants`].
    pub fn map_constants(&self, f: &mut impl FnMut(&Constant) -> Constant) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(f(c)),
            Expr::Op { kind, args, consts } => {
                let (args, consts) = match kind {
                    OpKind::Add => {
                        let mut new_args = Vec::with_capacity(args.len());
                        let mut new_consts = Vec::with_capacity(consts.len());
                        for (a, c) in args.iter().zip(consts) {
                            new_consts.push(f(c));
                            new_args.push(a.map_constants(f));
                        }
                        (new_args, new_consts)
                    }
                    OpKind::Mul | OpKind::MulConst => {
                        let consts: Vec<_> = consts.iter().map(&mut *f).collect();
                        let args = args.iter().map(|a| a.map_constants(f)).collect();
                        (args, consts)
                    }
                    _ => {
                        let args: Vec<_> = args.iter().map(|a| a.map_constants(f)).collect();
                        let consts = consts.iter().map(&mut *f).collect();
                        (args, consts)
                    }
                };
                Expr::Op {
                    kind: *kind,
                    args,
                    consts,
                }
            }
            other => other.clone(),
        }
    }

    /// Slots in serialization order.
    pub fn slots(&self) -> Vec<SlotId> {
        let mut out = Vec::new();
        self.visit_constants(&mut |c| {
            if let Constant::Slot(id) = c {
                out.push(*id);
            }
        });
        out
    }

    pub fn slot_count(&self) -> usize {
        self.slots().len()
    }

    pub fn max_slot(&self) -> u32 {
        self.slots().iter().map(|s| s.0).max().unwrap_or(0)
    }

    pub fn hole_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if e.is_hole() {
                n += 1
            }
        });
        n
    }

    /// Highest variable index used, 0 for constant expressions.
    pub fn var_count(&self) -> u8 {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                n = n.max(*i)
            }
        });
        n
    }

    /// Replace slots by their bound values. Unbound slots are kept.
    pub fn bind(&self, bindings: &Bindings) -> Expr {
        self.map_constants(&mut |c| match c {
            Constant::Slot(id) => bindings
                .get(id)
                .map(|v| Constant::Value(*v))
                .unwrap_or(*c),
            v => *v,
        })
    }

    /// Renumber slots 1..n in serialization order.
    pub fn renumber_slots(&self) -> Expr {
        let mut next = 0u32;
        self.map_constants(&mut |c| match c {
            Constant::Slot(_) => {
                next += 1;
                Constant::Slot(SlotId(next))
            }
            v => *v,
        })
    }

    /// Remove placeholders. Sums and products left with a single operand
    /// collapse onto it.
    pub fn strip_holes(&self) -> Expr {
        match self {
            Expr::Op { kind, args, consts } => {
                let mut new_args = Vec::with_capacity(args.len());
                let mut new_consts = Vec::new();
                for (i, a) in args.iter().enumerate() {
                    if a.is_hole() {
                        continue;
                    }
                    new_args.push(a.strip_holes());
                    if *kind == OpKind::Add {
                        new_consts.push(consts[i]);
                    }
                }
                match kind {
                    OpKind::Add => match new_args.len() {
                        0 => Expr::value(0.0),
                        1 => {
                            let s = new_consts[0];
                            let t = new_args.pop().unwrap();
                            if s.is_value(1.0) {
                                t
                            } else {
                                Expr::with_const(OpKind::MulConst, t, s)
                            }
                        }
                        _ => Expr::add(new_args, new_consts),
                    },
                    OpKind::Mul => match new_args.len() {
                        0 => Expr::Const(consts[0]),
                        1 => {
                            let t = new_args.pop().unwrap();
                            if consts[0].is_value(1.0) {
                                t
                            } else {
                                Expr::with_const(OpKind::MulConst, t, consts[0])
                            }
                        }
                        _ => Expr::mul(new_args, consts[0]),
                    },
                    _ => Expr::Op {
                        kind: *kind,
                        args: new_args,
                        consts: consts.clone(),
                    },
                }
            }
            other => other.clone(),
        }
    }

    /// Check arity, constant counts, slot uniqueness and placeholder placement.
    pub fn validate(&self) -> Result<(), StructureError> {
        let mut seen = std::collections::BTreeSet::new();
        self.validate_inner(false, &mut seen)
    }

    fn validate_inner(
        &self,
        hole_ok: bool,
        seen: &mut std::collections::BTreeSet<SlotId>,
    ) -> Result<(), StructureError> {
        match self {
            Expr::Var(0) => Err(StructureError::ZeroVariable),
            Expr::Var(_) => Ok(()),
            Expr::Hole if hole_ok => Ok(()),
            Expr::Hole => Err(StructureError::MisplacedHole),
            Expr::Const(c) => check_slot(c, seen),
            Expr::Op { kind, args, consts } => {
                let n = args.len();
                match kind.arity() {
                    2 if n < 2 => {
                        return Err(StructureError::Arity {
                            kind: *kind,
                            expected: "at least 2",
                            found: n,
                        })
                    }
                    1 if n != 1 => {
                        return Err(StructureError::Arity {
                            kind: *kind,
                            expected: "exactly 1",
                            found: n,
                        })
                    }
                    _ => {}
                }
                let expected = if *kind == OpKind::Add {
                    n
                } else {
                    kind.const_count()
                };
                if consts.len() != expected {
                    return Err(StructureError::ConstCount {
                        kind: *kind,
                        expected,
                        found: consts.len(),
                    });
                }
                for c in consts {
                    check_slot(c, seen)?;
                }
                let holes_here = matches!(kind, OpKind::Add | OpKind::Mul);
                for a in args {
                    a.validate_inner(holes_here, seen)?;
                }
                Ok(())
            }
        }
    }
}

fn check_slot(
    c: &Constant,
    seen: &mut std::collections::BTreeSet<SlotId>,
) -> Result<(), StructureError> {
    if let Constant::Slot(id) = c {
        if !seen.insert(*id) {
            return Err(StructureError::DuplicateSlot(*id));
        }
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&display::render(self, display::SlotStyle::Numbered))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_counts_leaves_as_one() {
        assert_eq!(Expr::var(1).depth(), 1);
        let e = parse("sin(x_1+x_2)").unwrap();
        assert_eq!(e.depth(), 3);
    }

    #[test]
    fn validate_rejects_duplicate_slots() {
        let s = Constant::Slot(SlotId(1));
        let e = Expr::add(vec![Expr::var(1), Expr::var(2)], vec![s, s]);
        assert_eq!(e.validate(), Err(StructureError::DuplicateSlot(SlotId(1))));
    }

    #[test]
    fn validate_rejects_bad_arity() {
        let e = Expr::Op {
            kind: OpKind::Sin,
            args: vec![Expr::var(1), Expr::var(2)],
            consts: vec![],
        };
        assert!(matches!(e.validate(), Err(StructureError::Arity { .. })));
    }

    #[test]
    fn hole_only_inside_sum_or_product() {
        let e = Expr::unary(OpKind::Sin, Expr::Hole);
        assert_eq!(e.validate(), Err(StructureError::MisplacedHole));
        let ok = Expr::add(
            vec![Expr::var(1), Expr::var(2), Expr::Hole],
            vec![Constant::ONE; 3],
        );
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn strip_holes_collapses_single_term() {
        let s = Constant::Slot(SlotId(1));
        let e = Expr::add(vec![Expr::var(1), Expr::Hole], vec![s, Constant::ONE]);
        assert_eq!(e.strip_holes(), Expr::scaled_var(1, s));
    }
}
