use std::fmt::Write;

use super::{Constant, Expr, OpKind};

pub(crate) const HOLE_TOKEN: &str = "⟨hole⟩";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SlotStyle {
    /// `c_3`
    Numbered,
    /// Every slot renders as `c`; used for structural comparison.
    Erased,
}

pub(crate) fn render(e: &Expr, style: SlotStyle) -> String {
    let mut out = String::new();
    write_expr(e, style, &mut out);
    out
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn fmt_const(c: &Constant, style: SlotStyle) -> String {
    match (c, style) {
        (Constant::Value(v), _) => fmt_num(*v),
        (Constant::Slot(_), SlotStyle::Erased) => "c".to_string(),
        (Constant::Slot(id), SlotStyle::Numbered) => id.to_string(),
    }
}

fn write_expr(e: &Expr, style: SlotStyle, out: &mut String) {
    match e {
        Expr::Var(i) => {
            let _ = write!(out, "x_{i}");
        }
        Expr::Const(c) => out.push_str(&fmt_const(c, style)),
        Expr::Hole => out.push_str(HOLE_TOKEN),
        Expr::Op { kind, args, consts } => match kind {
            OpKind::Add => write_sum(args, consts, style, out),
            OpKind::Mul => {
                write_coef_prefix(&consts[0], style, out);
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push('*');
                    }
                    write_factor(a, style, out);
                }
            }
            OpKind::MulConst => {
                write_coef_prefix(&consts[0], style, out);
                write_factor(&args[0], style, out);
            }
            OpKind::AddConst => {
                let arg = &args[0];
                if matches!(arg.kind(), Some(OpKind::AddConst)) {
                    out.push('(');
                    write_expr(arg, style, out);
                    out.push(')');
                } else {
                    write_expr(arg, style, out);
                }
                match consts[0] {
                    Constant::Value(v) if v < 0.0 || (v == 0.0 && v.is_sign_negative()) => {
                        out.push('-');
                        out.push_str(&fmt_num(-v));
                    }
                    c => {
                        out.push('+');
                        out.push_str(&fmt_const(&c, style));
                    }
                }
            }
            OpKind::Pow | OpKind::FracPow => {
                let name = match (kind, consts[0]) {
                    (OpKind::FracPow, Constant::Value(v)) if v == 0.5 => {
                        out.push_str("sqrt(");
                        write_expr(&args[0], style, out);
                        out.push(')');
                        return;
                    }
                    (OpKind::FracPow, Constant::Slot(_)) => "fpow",
                    (OpKind::FracPow, Constant::Value(v)) if !(v > 0.0 && v < 1.0) => "fpow",
                    _ => "pow",
                };
                out.push_str(name);
                out.push('(');
                write_expr(&args[0], style, out);
                out.push(',');
                out.push_str(&fmt_const(&consts[0], style));
                out.push(')');
            }
            _ => {
                out.push_str(kind.label());
                out.push('(');
                write_expr(&args[0], style, out);
                out.push(')');
            }
        },
    }
}

/// `k*` before a product; unit coefficients are omitted and `-1` becomes a
/// bare minus.
fn write_coef_prefix(c: &Constant, style: SlotStyle, out: &mut String) {
    match c {
        Constant::Value(v) if *v == 1.0 => {}
        Constant::Value(v) if *v == -1.0 => out.push('-'),
        c => {
            out.push_str(&fmt_const(c, style));
            out.push('*');
        }
    }
}

fn write_sum(args: &[Expr], scales: &[Constant], style: SlotStyle, out: &mut String) {
    for (i, (term, scale)) in args.iter().zip(scales).enumerate() {
        if term.is_hole() {
            if i > 0 {
                out.push('+');
            }
            out.push_str(HOLE_TOKEN);
            continue;
        }
        match scale {
            Constant::Value(v) if *v == 1.0 => {
                if i > 0 {
                    out.push('+');
                }
            }
            Constant::Value(v) if *v == -1.0 => out.push('-'),
            Constant::Value(v) if *v < 0.0 => {
                out.push('-');
                out.push_str(&fmt_num(-v));
                out.push('*');
            }
            c => {
                if i > 0 {
                    out.push('+');
                }
                out.push_str(&fmt_const(c, style));
                out.push('*');
            }
        }
        let wrap = matches!(
            term,
            Expr::Op {
                kind: OpKind::Add | OpKind::AddConst,
                ..
            }
        ) || matches!(term, Expr::Const(Constant::Value(v)) if *v < 0.0);
        if wrap {
            out.push('(');
            write_expr(term, style, out);
            out.push(')');
        } else if matches!(term.kind(), Some(OpKind::MulConst))
            && !scale.is_value(1.0)
        {
            write_factor(term, style, out);
        } else {
            write_expr(term, style, out);
        }
    }
}

fn write_factor(e: &Expr, style: SlotStyle, out: &mut String) {
    let wrap = match e {
        Expr::Op { kind, .. } => matches!(
            kind,
            OpKind::Add | OpKind::AddConst | OpKind::Mul | OpKind::MulConst
        ),
        Expr::Const(Constant::Value(v)) => *v < 0.0,
        _ => false,
    };
    if wrap {
        out.push('(');
        write_expr(e, style, out);
        out.push(')');
    } else {
        write_expr(e, style, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SlotId;

    #[test]
    fn numbers_use_shortest_form() {
        assert_eq!(fmt_num(3.0), "3");
        assert_eq!(fmt_num(0.3), "0.3");
        assert_eq!(fmt_num(1e-7), "1e-7");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1e300), "1e300");
    }

    #[test]
    fn sums_render_signs() {
        let e = Expr::add(
            vec![Expr::var(1), Expr::var(2), Expr::Hole],
            vec![
                Constant::Value(-2.0),
                Constant::Slot(SlotId(4)),
                Constant::ONE,
            ],
        );
        assert_eq!(render(&e, SlotStyle::Numbered), "-2*x_1+c_4*x_2+⟨hole⟩");
        assert_eq!(render(&e, SlotStyle::Erased), "-2*x_1+c*x_2+⟨hole⟩");
    }

    #[test]
    fn fractional_powers() {
        let sq = Expr::with_const(OpKind::FracPow, Expr::var(1), Constant::Value(0.5));
        assert_eq!(render(&sq, SlotStyle::Numbered), "sqrt(x_1)");
        let fp = Expr::with_const(OpKind::FracPow, Expr::var(1), Constant::Slot(SlotId(1)));
        assert_eq!(render(&fp, SlotStyle::Numbered), "fpow(x_1,c_1)");
    }
}
