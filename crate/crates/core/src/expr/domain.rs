use serde::{Deserialize, Serialize};

use super::OpKind;

/// Input-range thresholds for the guarded operators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `exp` requires `|u| <= exp`.
    pub exp: f64,
    /// `log` requires `u >= log`.
    pub log: f64,
    /// `inv` requires `|u| >= inv`.
    pub inv: f64,
    /// `pow` with `c > 1` requires `|u| <= pow`.
    pub pow: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            exp: 20.0,
            log: 1e-6,
            inv: 1e-6,
            pow: 10.0,
        }
    }
}

impl Thresholds {
    /// Whether `u` lies in the input range of `kind`. Unguarded kinds accept
    /// every finite input.
    pub fn admits(&self, kind: OpKind, u: f64) -> bool {
        if !u.is_finite() {
            return false;
        }
        match kind {
            OpKind::Inv => u.abs() >= self.inv,
            OpKind::Exp => u.abs() <= self.exp,
            OpKind::Pow => u.abs() <= self.pow,
            OpKind::FracPow => u >= 0.0,
            OpKind::Log => u >= self.log,
            _ => true,
        }
    }
}

/// Open interval `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// Range of one variable: a union of disjoint intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarRange(pub Vec<Interval>);

impl VarRange {
    pub fn single(lo: f64, hi: f64) -> VarRange {
        VarRange(vec![Interval::new(lo, hi)])
    }

    pub fn total_width(&self) -> f64 {
        self.0.iter().map(Interval::width).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0.iter().any(|i| i.contains(x))
    }

    /// Map `u` in `[0, 1)` onto the union, proportionally to interval widths.
    pub fn map_unit(&self, u: f64) -> f64 {
        let mut t = u * self.total_width();
        for iv in &self.0 {
            if t < iv.width() {
                return iv.lo + t;
            }
            t -= iv.width();
        }
        let last = self.0.last().expect("non-empty range");
        last.hi
    }

    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self
                .0
                .iter()
                .all(|i| i.lo.is_finite() && i.hi.is_finite() && i.lo < i.hi)
    }
}

/// Variable ranges plus operator thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalDomain {
    pub vars: Vec<VarRange>,
    pub thresholds: Thresholds,
}

impl EvalDomain {
    pub fn new(vars: Vec<VarRange>) -> EvalDomain {
        EvalDomain {
            vars,
            thresholds: Thresholds::default(),
        }
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> EvalDomain {
        EvalDomain::new(vec![VarRange::single(lo, hi); n])
    }

    pub fn dims(&self) -> usize {
        self.vars.len()
    }
}
