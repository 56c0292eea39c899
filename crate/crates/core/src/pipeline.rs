//! Matrix source, then search, then constant fitting, then recovery.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{canonicalize, shape_key, EvalDomain, Expr};
use crate::fit::{recovery_check, select_strategy, Dataset, FitResult, OptConfig, StrategyRegistry, StrategyTag};
use crate::graph::{encode_expression, AdjacencyMatrix, NODE_COUNT};
use crate::search::{search, SearchConfig};

/// Deterministic 64-bit seed derived from a parent seed and a path of
/// labels (splitmix64 over FNV-1a of each label).
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut s = seed;
    for p in parts {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in p.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        s = splitmix(s ^ h);
    }
    s
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("unknown matrix source `{0}`")]
    Unknown(String),
    #[error("bad matrix source argument: {0}")]
    Argument(String),
    #[error("cannot encode label: {0}")]
    Encode(#[from] crate::graph::EncodeError),
    #[error("matrix source failed: {0}")]
    Other(String),
}

/// Supplies the adjacency matrix that guides the search.
pub trait MatrixSource: Send + Sync {
    fn name(&self) -> String;
    fn matrix(&self, label: &Expr, data: &Dataset, seed: u64) -> Result<AdjacencyMatrix, SourceError>;
}

/// The exact matrix of the label.
pub struct OracleSource;

impl MatrixSource for OracleSource {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn matrix(&self, label: &Expr, _: &Dataset, _: u64) -> Result<AdjacencyMatrix, SourceError> {
        Ok(encode_expression(label)?)
    }
}

/// The label's matrix with `flips` distinct entries inverted.
pub struct NoisySource {
    pub flips: usize,
}

impl MatrixSource for NoisySource {
    fn name(&self) -> String {
        format!("noisy:{}", self.flips)
    }

    fn matrix(&self, label: &Expr, _: &Dataset, seed: u64) -> Result<AdjacencyMatrix, SourceError> {
        let mut m = encode_expression(label)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["flips"]));
        let total = NODE_COUNT * NODE_COUNT;
        for pos in sample(&mut rng, total, self.flips.min(total)).into_vec() {
            m = m.flipped(pos / NODE_COUNT, pos % NODE_COUNT);
        }
        Ok(m)
    }
}

type SourceFactory = Arc<dyn Fn(Option<&str>) -> Result<Box<dyn MatrixSource>, SourceError> + Send + Sync>;

/// Matrix sources by name. Selectors are `name` or `name:argument`.
#[derive(Clone)]
pub struct SourceRegistry {
    factories: BTreeMap<String, SourceFactory>,
}

impl Default for SourceRegistry {
    fn default() -> Self {
        let mut r = SourceRegistry {
            factories: BTreeMap::new(),
        };
        r.register("oracle", |arg| match arg {
            None => Ok(Box::new(OracleSource)),
            Some(a) => Err(SourceError::Argument(format!("oracle takes no argument, got `{a}`"))),
        });
        r.register("noisy", |arg| {
            let flips = arg
                .ok_or_else(|| SourceError::Argument("noisy needs a flip count, as in noisy:1".into()))?
                .parse()
                .map_err(|e| SourceError::Argument(format!("flip count: {e}")))?;
            Ok(Box::new(NoisySource { flips }))
        });
        r
    }
}

impl SourceRegistry {
    pub fn register(
        &mut self,
        name: &str,
        f: impl Fn(Option<&str>) -> Result<Box<dyn MatrixSource>, SourceError> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.to_string(), Arc::new(f));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, selector: &str) -> Result<Box<dyn MatrixSource>, SourceError> {
        let (name, arg) = match selector.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (selector, None),
        };
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| SourceError::Unknown(selector.to_string()))?;
        f(arg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub search: SearchConfig,
    pub opt: OptConfig,
    /// Force one strategy instead of routing per skeleton.
    pub strategy: Option<StrategyTag>,
    /// Largest exponent expected, used for routing.
    pub exponent_hint: Option<u32>,
    /// Stop after fitting this many distinct skeletons.
    pub max_fits: Option<usize>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            search: SearchConfig::default(),
            opt: OptConfig::default(),
            strategy: None,
            exponent_hint: None,
            max_fits: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedCandidate {
    /// Canonical skeleton with placeholders removed.
    pub skeleton: Expr,
    pub fit: FitResult,
    /// Skeleton with the fitted constants bound.
    pub expression: Expr,
    pub round: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    /// Every fitted candidate, best score first (stable on ties).
    pub ranked: Vec<FittedCandidate>,
    pub recovered: Option<FittedCandidate>,
}

impl SolveOutcome {
    pub fn best(&self) -> Option<&FittedCandidate> {
        self.recovered.as_ref().or(self.ranked.first())
    }
}

/// What decides recovery: the label when known, else the score alone.
pub enum Target<'a> {
    Label { label: &'a Expr, domain: &'a EvalDomain },
    ScoreOnly,
}

/// Search `m`, fit each new skeleton in stream order and stop at the first
/// recovery.
pub fn solve(
    m: &AdjacencyMatrix,
    data: &Dataset,
    target: &Target<'_>,
    cfg: &SolveConfig,
    registry: &StrategyRegistry,
    seed: u64,
) -> SolveOutcome {
    let mut seen = HashSet::new();
    let mut ranked = Vec::new();
    let mut recovered = None;
    for cand in search(m, &cfg.search) {
        if cfg.max_fits.is_some_and(|n| ranked.len() >= n) {
            break;
        }
        let skeleton = canonicalize(&cand.expr.strip_holes());
        if !seen.insert(shape_key(&skeleton)) {
            continue;
        }
        let cand_seed = derive_seed(seed, &[&ranked.len().to_string()]);
        let fit = fit_one(&skeleton, data, cfg, registry, cand_seed);
        let mut fit = fit.unwrap_or_else(|| FitResult::failed(StrategyTag::PlainBfgs));
        fit.recovered = match target {
            Target::Label { label, domain } => recovery_check(&fit, &skeleton, label, domain, &cfg.opt),
            Target::ScoreOnly => fit.r2 > cfg.opt.recovery_r2,
        };
        let fc = FittedCandidate {
            expression: skeleton.bind(&fit.bindings),
            skeleton,
            fit,
            round: cand.round,
        };
        let done = fc.fit.recovered;
        if done {
            recovered = Some(fc.clone());
        }
        ranked.push(fc);
        if done {
            break;
        }
    }
    ranked.sort_by(|a, b| b.fit.r2.total_cmp(&a.fit.r2));
    SolveOutcome { ranked, recovered }
}

/// Routed fit. An unhinted sweep that misses the threshold is retried with
/// the complex-safe fit.
fn fit_one(skeleton: &Expr, data: &Dataset, cfg: &SolveConfig, registry: &StrategyRegistry, seed: u64) -> Option<FitResult> {
    let tag = cfg
        .strategy
        .unwrap_or_else(|| select_strategy(skeleton, data.n_vars(), cfg.exponent_hint, &cfg.opt));
    let first = registry.get(tag)?.fit(skeleton, data, &cfg.opt, seed).ok()?;
    let retry = cfg.strategy.is_none()
        && cfg.exponent_hint.is_none()
        && tag == StrategyTag::IntegerTraversal
        && !(first.r2 > cfg.opt.recovery_r2);
    if retry {
        if let Some(Ok(second)) = registry
            .get(StrategyTag::ComplexBfgs)
            .map(|s| s.fit(skeleton, data, &cfg.opt, seed))
        {
            if second.r2 > first.r2 {
                return Some(second);
            }
        }
    }
    Some(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_path() {
        assert_ne!(derive_seed(1, &["a"]), derive_seed(1, &["b"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
        assert_eq!(derive_seed(7, &["x", "3"]), derive_seed(7, &["x", "3"]));
    }

    #[test]
    fn registry_parses_selectors() {
        let r = SourceRegistry::default();
        assert_eq!(r.build("oracle").unwrap().name(), "oracle");
        assert_eq!(r.build("noisy:3").unwrap().name(), "noisy:3");
        assert!(matches!(r.build("noisy"), Err(SourceError::Argument(_))));
        assert!(matches!(r.build("model:x"), Err(SourceError::Unknown(_))));
    }

    #[test]
    fn noisy_flips_exactly_k_entries() {
        let label = crate::expr::parse("sin(x_1)+cos(x_2)+x_1").unwrap();
        let clean = OracleSource.matrix(&label, &Dataset::default(), 0).unwrap();
        for k in [0, 1, 5] {
            let m = NoisySource { flips: k }.matrix(&label, &Dataset::default(), 11).unwrap();
            let diff: usize = (0..NODE_COUNT)
                .flat_map(|r| (0..NODE_COUNT).map(move |c| (r, c)))
                .filter(|&(r, c)| m.get_index(r, c) != clean.get_index(r, c))
                .count();
            assert_eq!(diff, k);
        }
    }
}
