use super::{evaluate, Bindings, EvalDomain, Expr};

/// Outcome of a sampled equivalence test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Equivalence {
    Equivalent,
    NotEquivalent,
    /// More than half of the sample points fell outside an operator's range
    /// for one of the expressions.
    Indeterminate,
}

impl Equivalence {
    pub fn holds(self) -> bool {
        self == Equivalence::Equivalent
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical-inverse Halton coordinate of `index` (1-based) in dimension
/// `dim`.
pub fn halton(index: u64, dim: usize) -> f64 {
    let base = PRIMES[dim % PRIMES.len()];
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Compare two bound expressions at `n` quasi-random points of `domain`.
/// Points where either side leaves its operator ranges are skipped; agreement
/// means `|a - b| <= tol * (1 + |b|)` at every remaining point.
pub fn numeric_equivalent(a: &Expr, b: &Expr, domain: &EvalDomain, n: usize, tol: f64) -> Equivalence {
    let bindings = Bindings::new();
    let th = &domain.thresholds;
    let mut skipped = 0;
    let mut point = vec![0.0; domain.dims()];
    for k in 1..=n as u64 {
        for (d, range) in domain.vars.iter().enumerate() {
            point[d] = range.map_unit(halton(k, d));
        }
        match (evaluate(a, &point, &bindings, th), evaluate(b, &point, &bindings, th)) {
            (Ok(va), Ok(vb)) => {
                if (va - vb).abs() > tol * (1.0 + vb.abs()) {
                    return Equivalence::NotEquivalent;
                }
            }
            _ => skipped += 1,
        }
    }
    if n == 0 || 2 * skipped > n {
        Equivalence::Indeterminate
    } else {
        Equivalence::Equivalent
    }
}
