use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{fit_constants, fit_constants_complex, integer_exponent_sweep, slot_roles, Dataset, FitError, FitResult, OptConfig, SlotRole};
use crate::expr::Expr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyTag {
    PlainBfgs,
    IntegerTraversal,
    ComplexBfgs,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 3] = [
        StrategyTag::PlainBfgs,
        StrategyTag::IntegerTraversal,
        StrategyTag::ComplexBfgs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyTag::PlainBfgs => "plain-bfgs",
            StrategyTag::IntegerTraversal => "integer-traversal",
            StrategyTag::ComplexBfgs => "complex-bfgs",
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// A way of fitting a skeleton's constants.
pub trait ConstStrategy: Send + Sync {
    fn tag(&self) -> StrategyTag;
    fn fit(&self, skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError>;
}

pub struct PlainBfgs;
pub struct IntegerTraversal;
pub struct ComplexBfgs;

impl ConstStrategy for PlainBfgs {
    fn tag(&self) -> StrategyTag {
        StrategyTag::PlainBfgs
    }

    fn fit(&self, skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError> {
        fit_constants(skeleton, data, cfg, seed)
    }
}

impl ConstStrategy for IntegerTraversal {
    fn tag(&self) -> StrategyTag {
        StrategyTag::IntegerTraversal
    }

    /// Falls back to plain BFGS when there is no exponent to sweep.
    fn fit(&self, skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError> {
        match integer_exponent_sweep(skeleton, data, cfg, seed) {
            Err(FitError::NoExponentSlots) => fit_constants(skeleton, data, cfg, seed),
            other => other,
        }
    }
}

impl ConstStrategy for ComplexBfgs {
    fn tag(&self) -> StrategyTag {
        StrategyTag::ComplexBfgs
    }

    fn fit(&self, skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError> {
        fit_constants_complex(skeleton, data, cfg, seed)
    }
}

/// Strategies by name.
pub struct StrategyRegistry {
    entries: Vec<Box<dyn ConstStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        StrategyRegistry {
            entries: vec![Box::new(PlainBfgs), Box::new(IntegerTraversal), Box::new(ComplexBfgs)],
        }
    }
}

impl StrategyRegistry {
    pub fn empty() -> StrategyRegistry {
        StrategyRegistry { entries: Vec::new() }
    }

    /// Adds `s`, replacing any strategy with the same tag.
    pub fn register(&mut self, s: Box<dyn ConstStrategy>) {
        self.entries.retain(|e| e.tag() != s.tag());
        self.entries.push(s);
    }

    pub fn get(&self, tag: StrategyTag) -> Option<&dyn ConstStrategy> {
        self.entries.iter().find(|e| e.tag() == tag).map(|b| b.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&dyn ConstStrategy> {
        self.get(name.parse().ok()?)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.tag().name()).collect()
    }
}

/// Skeletons without a `pow` exponent use plain BFGS. Otherwise exponents up
/// to the arity threshold are swept as integers and larger ones are left to
/// the complex-safe fit. Without a hint the sweep is tried first.
pub fn select_strategy(skeleton: &Expr, n_vars: usize, exponent_hint: Option<u32>, cfg: &OptConfig) -> StrategyTag {
    let has_exponent = slot_roles(skeleton).iter().any(|(_, r)| *r == SlotRole::Exponent);
    if !has_exponent {
        return StrategyTag::PlainBfgs;
    }
    match exponent_hint {
        Some(e) if e > cfg.exponent_threshold(n_vars) => StrategyTag::ComplexBfgs,
        _ => StrategyTag::IntegerTraversal,
    }
}
