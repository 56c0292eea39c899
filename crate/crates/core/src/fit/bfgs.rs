//! Quasi-Newton minimization with an inverse-Hessian BFGS update and a
//! strong Wolfe line search.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Stop once the largest gradient component falls below this.
    pub gradient_tolerance: f64,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its value.
    pub relative_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            relative_tolerance: 1e-13,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Gradient tolerance reached, as opposed to running out of iterations
    /// or failing to find an acceptable step.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BfgsError {
    #[error("objective or gradient is not finite at the starting point")]
    NonFiniteStart,
}

/// Evaluates the objective at `x`, writing the gradient into `grad`. `None`
/// or a non-finite value marks a point outside the admissible region.
pub trait Objective {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Option<f64>;
}

impl<F: FnMut(&[f64], &mut [f64]) -> Option<f64>> Objective for F {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        self(x, grad)
    }
}

struct Probe {
    a: f64,
    f: f64,
    /// Directional derivative.
    d: f64,
    grad: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn probe<O: Objective + ?Sized>(obj: &mut O, x: &[f64], p: &[f64], a: f64) -> Probe {
    let point: Vec<f64> = x.iter().zip(p).map(|(xi, pi)| xi + a * pi).collect();
    let mut grad = vec![0.0; x.len()];
    let f = obj.eval(&point, &mut grad).unwrap_or(f64::INFINITY);
    let ok = f.is_finite() && grad.iter().all(|g| g.is_finite());
    if ok {
        Probe { a, f, d: dot(&grad, p), grad }
    } else {
        Probe {
            a,
            f: f64::INFINITY,
            d: f64::NAN,
            grad,
        }
    }
}

/// Step length satisfying the strong Wolfe conditions along `p`, or failing
/// that the best step with sufficient decrease.
fn line_search<O: Objective + ?Sized>(obj: &mut O, x: &[f64], p: &[f64], f0: f64, d0: f64, a1: f64, cfg: &BfgsConfig) -> Option<Probe> {
    let armijo = |pr: &Probe| pr.f <= f0 + cfg.c1 * pr.a * d0;
    let curvature = |pr: &Probe| pr.d.abs() <= -cfg.c2 * d0;
    let mut prev = Probe {
        a: 0.0,
        f: f0,
        d: d0,
        grad: Vec::new(),
    };
    let mut a = a1;
    let mut budget = cfg.max_line_search;
    for i in 0..cfg.max_line_search {
        budget -= 1;
        let cur = probe(obj, x, p, a);
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, x, p, f0, d0, prev, cur, budget, cfg);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.d >= 0.0 {
            return zoom(obj, x, p, f0, d0, cur, prev, budget, cfg);
        }
        a = cur.a * 2.0;
        prev = cur;
    }
    (prev.a > 0.0).then_some(prev)
}

#[allow(clippy::too_many_arguments)]
fn zoom<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    p: &[f64],
    f0: f64,
    d0: f64,
    mut lo: Probe,
    mut hi: Probe,
    budget: usize,
    cfg: &BfgsConfig,
) -> Option<Probe> {
    for _ in 0..budget.max(1) {
        let width = hi.a - lo.a;
        // minimizer of the quadratic through lo (value, slope) and hi (value)
        let mut a = lo.a + 0.5 * width;
        if hi.f.is_finite() && lo.d.is_finite() {
            let denom = 2.0 * (hi.f - lo.f - lo.d * width);
            if denom > 0.0 {
                let t = lo.a - lo.d * width * width / denom;
                let (l, h) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
                let margin = 0.1 * (h - l);
                if t > l + margin && t < h - margin {
                    a = t;
                }
            }
        }
        if width.abs() < 1e-16 * lo.a.abs().max(1e-16) {
            break;
        }
        let cur = probe(obj, x, p, a);
        if cur.f > f0 + cfg.c1 * a * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.d.abs() <= -cfg.c2 * d0 {
                return Some(cur);
            }
            if cur.d * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    (lo.a > 0.0).then_some(lo)
}

pub fn bfgs_minimize<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], cfg: &BfgsConfig) -> Result<Minimum, BfgsError> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let f = obj.eval(&x, &mut g).ok_or(BfgsError::NonFiniteStart)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(BfgsError::NonFiniteStart);
    }
    let mut f = f;
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        if g.iter().all(|v| v.abs() < cfg.gradient_tolerance) {
            converged = true;
            break;
        }
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut d0 = dot(&g, &p);
        if !(d0 < 0.0) {
            h = identity(n);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            d0 = dot(&g, &p);
        }
        // first step: unit length along the gradient; later: the full
        // quasi-Newton step
        let a1 = if fresh {
            (1.0 / dot(&p, &p).sqrt()).min(1.0)
        } else {
            1.0
        };
        let step = match line_search(obj, &x, &p, f, d0, a1, cfg) {
            Some(s) => s,
            None if !fresh => {
                h = identity(n);
                fresh = true;
                continue;
            }
            None => break,
        };
        iterations += 1;
        let s: Vec<f64> = p.iter().map(|pi| step.a * pi).collect();
        let y: Vec<f64> = step.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let decrease = f - step.f;
        f = step.f;
        g = step.grad;
        let sy = dot(&s, &y);
        if sy > 1e-300 && sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
            fresh = false;
        }
        if f == 0.0 || decrease <= cfg.relative_tolerance * f.abs() {
            converged = g.iter().all(|v| v.abs() < cfg.gradient_tolerance) || f == 0.0;
            break;
        }
    }
    Ok(Minimum {
        x,
        f,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// `H <- (I - r s y^T) H (I - r y s^T) + r s s^T` with `r = 1 / s.y`.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> Option<f64> {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        Some((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    }

    #[test]
    fn quadratic() {
        let m = bfgs_minimize(
            &mut |x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * (x[0] - 3.0);
                Some((x[0] - 3.0).powi(2))
            },
            &[0.0],
            &BfgsConfig::default(),
        )
        .unwrap();
        assert!((m.x[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let m = bfgs_minimize(&mut rosenbrock, &[-1.2, 1.0], &BfgsConfig::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
        assert!(m.f <= 24.2);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let r = bfgs_minimize(
            &mut |_: &[f64], g: &mut [f64]| {
                g[0] = f64::NAN;
                Some(1.0)
            },
            &[0.0],
            &BfgsConfig::default(),
        );
        assert_eq!(r, Err(BfgsError::NonFiniteStart));
    }

    #[test]
    fn respects_admissible_region() {
        // log barrier: undefined for x <= 0, minimum at x = 1
        let m = bfgs_minimize(
            &mut |x: &[f64], g: &mut [f64]| {
                if x[0] <= 0.0 {
                    return None;
                }
                g[0] = 1.0 - 1.0 / x[0];
                Some(x[0] - x[0].ln())
            },
            &[5.0],
            &BfgsConfig::default(),
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{m:?}");
    }
}
