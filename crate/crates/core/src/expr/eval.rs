use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{Bindings, Constant, Expr, OpKind, SlotId, Thresholds};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{kind} input {input} is outside its range")]
    DomainViolation { kind: OpKind, input: f64 },
    #[error("slot {0} is not bound")]
    UnboundSlot(SlotId),
    #[error("variable x_{0} has no value")]
    UnboundVariable(u8),
    #[error("placeholder evaluated outside of a sum or product")]
    Placeholder,
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result from {0}")]
    NonFinite(OpKind),
}

/// Real power with the usual conventions: integral exponents accept any
/// base, others require a non-negative base.
pub(crate) fn real_pow(u: f64, c: f64) -> Option<f64> {
    if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 {
        Some(u.powi(c as i32))
    } else if u >= 0.0 {
        Some(u.powf(c))
    } else {
        None
    }
}

/// Apply a single-argument operator to a real input. `c` is the operator's
/// constant where it has one.
pub(crate) fn apply_real(kind: OpKind, u: f64, c: f64, th: &Thresholds) -> Result<f64, EvalError> {
    if !th.admits(kind, u) {
        return Err(EvalError::DomainViolation { kind, input: u });
    }
    let v = match kind {
        OpKind::Inv => 1.0 / u,
        OpKind::Sin => u.sin(),
        OpKind::Cos => u.cos(),
        OpKind::Exp => u.exp(),
        OpKind::Pow | OpKind::FracPow => {
            real_pow(u, c).ok_or(EvalError::DomainViolation { kind, input: u })?
        }
        OpKind::Log => u.ln(),
        OpKind::AddConst => u + c,
        OpKind::MulConst => u * c,
        OpKind::Add | OpKind::Mul => unreachable!("binary kinds are handled by the caller"),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite(kind))
    }
}

fn const_value(c: &Constant, bindings: &Bindings) -> Result<f64, EvalError> {
    match c {
        Constant::Value(v) => Ok(*v),
        Constant::Slot(id) => bindings.get(id).copied().ok_or(EvalError::UnboundSlot(*id)),
    }
}

fn var_value<T: Copy>(i: u8, point: &[T]) -> Result<T, EvalError> {
    (i as usize)
        .checked_sub(1)
        .and_then(|k| point.get(k))
        .copied()
        .ok_or(EvalError::UnboundVariable(i))
}

/// Evaluate at a real point. Slots are looked up in `bindings`; guarded
/// operators fail with [`EvalError::DomainViolation`] outside their range.
pub fn evaluate(e: &Expr, point: &[f64], bindings: &Bindings, th: &Thresholds) -> Result<f64, EvalError> {
    match e {
        Expr::Var(i) => var_value(*i, point),
        Expr::Const(c) => const_value(c, bindings),
        Expr::Hole => Err(EvalError::Placeholder),
        Expr::Op { kind, args, consts } => match kind {
            OpKind::Add => {
                let mut acc = 0.0;
                for (a, s) in args.iter().zip(consts) {
                    if !a.is_hole() {
                        acc += const_value(s, bindings)? * evaluate(a, point, bindings, th)?;
                    }
                }
                finite(acc, *kind)
            }
            OpKind::Mul => {
                let mut acc = const_value(&consts[0], bindings)?;
                for a in args {
                    if !a.is_hole() {
                        acc *= evaluate(a, point, bindings, th)?;
                    }
                }
                finite(acc, *kind)
            }
            _ => {
                let u = evaluate(&args[0], point, bindings, th)?;
                let c = match consts.first() {
                    Some(c) => const_value(c, bindings)?,
                    None => 0.0,
                };
                apply_real(*kind, u, c, th)
            }
        },
    }
}

fn finite(v: f64, kind: OpKind) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite(kind))
    }
}

/// Complex power on the principal branch; integral exponents use repeated
/// multiplication so real inputs stay exactly real.
pub(crate) fn complex_pow(u: Complex64, c: Complex64) -> Complex64 {
    if c.im == 0.0 && c.re.fract() == 0.0 && c.re.abs() <= i32::MAX as f64 {
        u.powi(c.re as i32)
    } else if u == Complex64::new(0.0, 0.0) {
        if c.re > 0.0 {
            u
        } else {
            Complex64::new(f64::INFINITY, 0.0)
        }
    } else {
        (c * u.ln()).exp()
    }
}

/// Evaluate without real-domain guards, using principal branches. The only
/// failure besides missing bindings is an exact division by zero.
pub fn evaluate_complex(e: &Expr, point: &[f64], bindings: &Bindings) -> Result<Complex64, EvalError> {
    let re = |v: f64| Complex64::new(v, 0.0);
    match e {
        Expr::Var(i) => var_value(*i, point).map(re),
        Expr::Const(c) => const_value(c, bindings).map(re),
        Expr::Hole => Err(EvalError::Placeholder),
        Expr::Op { kind, args, consts } => {
            let c = match consts.first() {
                Some(c) if *kind != OpKind::Add => re(const_value(c, bindings)?),
                _ => re(0.0),
            };
            match kind {
                OpKind::Add => {
                    let mut acc = re(0.0);
                    for (a, s) in args.iter().zip(consts) {
                        if !a.is_hole() {
                            acc += const_value(s, bindings)? * evaluate_complex(a, point, bindings)?;
                        }
                    }
                    Ok(acc)
                }
                OpKind::Mul => {
                    let mut acc = c;
                    for a in args {
                        if !a.is_hole() {
                            acc *= evaluate_complex(a, point, bindings)?;
                        }
                    }
                    Ok(acc)
                }
                _ => {
                    let u = evaluate_complex(&args[0], point, bindings)?;
                    Ok(match kind {
                        OpKind::Inv => {
                            if u == re(0.0) {
                                return Err(EvalError::DivisionByZero);
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
                    })
                }
            }
        }
    }
}

/// Partial derivatives of an expression with respect to its slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstGradient {
    pub value: f64,
    pub grad: BTreeMap<SlotId, f64>,
    /// Set when some partial derivative is not finite at this point (for
    /// example `d/dc pow(u, c)` at a negative base); callers should fall back
    /// to finite differences.
    pub fallback: bool,
}

type Partials = Vec<(SlotId, f64)>;

fn scale_partials(p: &mut Partials, k: f64) {
    for (_, d) in p.iter_mut() {
        *d *= k;
    }
}

/// Value and gradient with respect to every slot, by recursive
/// differentiation of the tree.
pub fn differentiate_constants(
    e: &Expr,
    point: &[f64],
    bindings: &Bindings,
    th: &Thresholds,
) -> Result<ConstGradient, EvalError> {
    let mut fallback = false;
    let (value, partials) = diff(e, point, bindings, th, &mut fallback)?;
    let mut grad = BTreeMap::new();
    for id in e.slots() {
        grad.insert(id, 0.0);
    }
    for (id, d) in partials {
        if !d.is_finite() {
            fallback = true;
        }
        *grad.entry(id).or_insert(0.0) += d;
    }
    Ok(ConstGradient { value, grad, fallback })
}

fn slot_partial(c: &Constant, d: f64, out: &mut Partials) {
    if let Constant::Slot(id) = c {
        out.push((*id, d));
    }
}

fn diff(
    e: &Expr,
    point: &[f64],
    bindings: &Bindings,
    th: &Thresholds,
    fallback: &mut bool,
) -> Result<(f64, Partials), EvalError> {
    match e {
        Expr::Var(i) => Ok((var_value(*i, point)?, Vec::new())),
        Expr::Const(c) => {
            let v = const_value(c, bindings)?;
            let mut p = Vec::new();
            slot_partial(c, 1.0, &mut p);
            Ok((v, p))
        }
        Expr::Hole => Err(EvalError::Placeholder),
        Expr::Op { kind, args, consts } => match kind {
            OpKind::Add => {
                let mut value = 0.0;
                let mut out = Vec::new();
                for (a, s) in args.iter().zip(consts) {
                    if a.is_hole() {
                        continue;
                    }
                    let sv = const_value(s, bindings)?;
                    let (u, mut p) = diff(a, point, bindings, th, fallback)?;
                    value += sv * u;
                    scale_partials(&mut p, sv);
                    out.extend(p);
                    slot_partial(s, u, &mut out);
                }
                Ok((finite(value, *kind)?, out))
            }
            OpKind::Mul => {
                let coef = const_value(&consts[0], bindings)?;
                let mut vals = Vec::new();
                let mut parts = Vec::new();
                for a in args.iter().filter(|a| !a.is_hole()) {
                    let (u, p) = diff(a, point, bindings, th, fallback)?;
                    vals.push(u);
                    parts.push(p);
                }
                let prod: f64 = vals.iter().product();
                let mut out = Vec::new();
                slot_partial(&consts[0], prod, &mut out);
                for (j, mut p) in parts.into_iter().enumerate() {
                    let others: f64 = vals
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != j)
                        .map(|(_, v)| v)
                        .product();
                    scale_partials(&mut p, coef * others);
                    out.extend(p);
                }
                Ok((finite(coef * prod, *kind)?, out))
            }
            _ => {
                let (u, mut p) = diff(&args[0], point, bindings, th, fallback)?;
                let c = match consts.first() {
                    Some(c) => const_value(c, bindings)?,
                    None => 0.0,
                };
                let v = apply_real(*kind, u, c, th)?;
                let (du, dc) = match kind {
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
                };
                if !du.is_finite() && !p.is_empty() {
                    *fallback = true;
                }
                scale_partials(&mut p, du);
                if let Some(k) = consts.first() {
                    if k.is_slot() && !dc.is_finite() {
                        *fallback = true;
                    }
                    slot_partial(k, dc, &mut p);
                }
                Ok((v, p))
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn eval_str(s: &str, x: &[f64]) -> Result<f64, EvalError> {
        evaluate(&parse(s).unwrap(), x, &Bindings::new(), &Thresholds::default())
    }

    #[test]
    fn benchmark_values() {
        assert_eq!(eval_str("pow(x_1,3)+pow(x_1,2)+x_1", &[1.0]).unwrap(), 3.0);
        assert_eq!(eval_str("0.5*x_1*(x_1+1)", &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn log_at_zero_is_a_domain_violation() {
        let err = eval_str("log(x_1)", &[0.0]).unwrap_err();
        assert_eq!(
            err,
            EvalError::DomainViolation {
                kind: OpKind::Log,
                input: 0.0
            }
        );
    }

    #[test]
    fn unbound_slot_is_reported() {
        let e = parse("c_1*x_1").unwrap();
        let err = evaluate(&e, &[1.0], &Bindings::new(), &Thresholds::default()).unwrap_err();
        assert_eq!(err, EvalError::UnboundSlot(SlotId(1)));
    }

    #[test]
    fn complex_principal_branches() {
        let b = Bindings::new();
        let z = evaluate_complex(&parse("pow(x_1,c_1)").unwrap(), &[-1.0], &[(SlotId(1), 0.5)].into());
        let z = z.unwrap();
        assert!(z.re.abs() < 1e-15 && (z.im - 1.0).abs() < 1e-15);
        let s = evaluate_complex(&parse("sin(x_1)").unwrap(), &[0.0], &b).unwrap();
        assert_eq!(s, Complex64::new(0.0, 0.0));
        let e = evaluate_complex(&parse("inv(x_1)").unwrap(), &[0.0], &b).unwrap_err();
        assert_eq!(e, EvalError::DivisionByZero);
    }

    #[test]
    fn constant_gradients() {
        let th = Thresholds::default();
        let g = differentiate_constants(&parse("c_1*x_1").unwrap(), &[2.0], &[(SlotId(1), 1.0)].into(), &th).unwrap();
        assert_eq!(g.grad[&SlotId(1)], 2.0);
        let g = differentiate_constants(&parse("sin(c_1*x_1)").unwrap(), &[1.0], &[(SlotId(1), 0.0)].into(), &th)
            .unwrap();
        assert_eq!(g.grad[&SlotId(1)], 1.0);
        let g = differentiate_constants(&parse("pow(x_1,c_1)").unwrap(), &[2.0], &[(SlotId(1), 3.0)].into(), &th)
            .unwrap();
        assert!((g.grad[&SlotId(1)] - 8.0 * 2f64.ln()).abs() < 1e-12);
        assert!(!g.fallback);
    }

    #[test]
    fn negative_base_exponent_gradient_requests_fallback() {
        let th = Thresholds::default();
        let g = differentiate_constants(&parse("pow(x_1,c_1)").unwrap(), &[-2.0], &[(SlotId(1), 3.0)].into(), &th)
            .unwrap();
        assert_eq!(g.value, -8.0);
        assert!(g.fallback);
    }
}
