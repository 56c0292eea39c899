//! Benchmark suites, the repeated-run protocol, aggregation and reports.

mod report;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{char_length, evaluate, parse, Bindings, EvalDomain, Expr, Interval, Thresholds, VarRange};
use crate::fit::{Dataset, StrategyRegistry, StrategyTag};
use crate::pipeline::{derive_seed, solve, MatrixSource, SolveConfig, Target};

pub use report::{emit_report, length_bins_csv, report_csv, summary_json, table_text, ReferenceTable};

const UNIVARIATE: &str = include_str!("../../data/univariate.tsv");
const BIVARIATE: &str = include_str!("../../data/bivariate.tsv");
const REFERENCE_UNIVARIATE: &str = include_str!("../../data/reference_univariate.tsv");
const REFERENCE_BIVARIATE: &str = include_str!("../../data/reference_bivariate.tsv");

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub name: String,
    /// Label as written in the data file.
    pub expression: String,
    pub label: Expr,
    /// One (possibly disjoint) range per variable.
    pub ranges: Vec<VarRange>,
}

impl Benchmark {
    pub fn n_vars(&self) -> usize {
        self.ranges.len()
    }

    pub fn domain(&self, thresholds: Thresholds) -> EvalDomain {
        EvalDomain {
            vars: self.ranges.clone(),
            thresholds,
        }
    }

    /// Character length of the canonical label.
    pub fn length(&self) -> usize {
        char_length(&self.label)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{name}: only {got} of {wanted} sample points are admissible")]
    Sampling { name: String, got: usize, wanted: usize },
}

fn parse_ranges(cell: &str) -> Result<Vec<VarRange>, String> {
    cell.split(';')
        .map(|var| {
            let inner = var
                .trim()
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| format!("range `{var}` is not parenthesized"))?;
            let parts = inner
                .split(" and ")
                .map(|pair| {
                    let (lo, hi) = pair
                        .split_once(',')
                        .ok_or_else(|| format!("interval `{pair}` needs two bounds"))?;
                    let lo: f64 = lo.trim().parse().map_err(|e| format!("bound `{lo}`: {e}"))?;
                    let hi: f64 = hi.trim().parse().map_err(|e| format!("bound `{hi}`: {e}"))?;
                    if !(lo < hi) {
                        return Err(format!("empty interval ({lo},{hi})"));
                    }
                    Ok(Interval::new(lo, hi))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(VarRange(parts))
        })
        .collect()
}

fn format_ranges(ranges: &[VarRange]) -> String {
    let vars: Vec<String> = ranges
        .iter()
        .map(|r| {
            let parts: Vec<String> = r.0.iter().map(|i| format!("{},{}", i.lo, i.hi)).collect();
            format!("({})", parts.join(" and "))
        })
        .collect();
    vars.join(";")
}

/// Parse tab-separated rows `name  expression  ranges`; `#` lines and blank
/// lines are skipped.
pub fn parse_benchmarks(text: &str) -> Result<Vec<Benchmark>, BenchError> {
    let mut out: Vec<Benchmark> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bad = |message: String| BenchError::Malformed { line: line_no, message };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [name, expression, ranges] = cols[..] else {
            return Err(bad(format!("expected 3 tab-separated columns, found {}", cols.len())));
        };
        let label = parse(expression).map_err(|e| bad(format!("expression: {e}")))?;
        let ranges = parse_ranges(ranges).map_err(bad)?;
        if (label.var_count() as usize) > ranges.len() {
            return Err(bad(format!("{} variables but {} ranges", label.var_count(), ranges.len())));
        }
        if out.iter().any(|b| b.name == name) {
            return Err(bad(format!("duplicate name `{name}`")));
        }
        out.push(Benchmark {
            name: name.to_string(),
            expression: expression.to_string(),
            label,
            ranges,
        });
    }
    Ok(out)
}

pub fn load_benchmarks(path: &Path) -> Result<Vec<Benchmark>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_benchmarks(&text)
}

pub fn serialize_benchmarks(benchmarks: &[Benchmark]) -> String {
    let mut out = String::from("# name\texpression\tranges\n");
    for b in benchmarks {
        out.push_str(&format!("{}\t{}\t{}\n", b.name, b.expression, format_ranges(&b.ranges)));
    }
    out
}

/// The shipped univariate suite.
pub fn univariate() -> Vec<Benchmark> {
    parse_benchmarks(UNIVARIATE).expect("shipped univariate suite parses")
}

/// The shipped bivariate suite.
pub fn bivariate() -> Vec<Benchmark> {
    parse_benchmarks(BIVARIATE).expect("shipped bivariate suite parses")
}

/// Published comparison results for both suites.
pub fn reference_tables() -> ReferenceTable {
    let mut t = ReferenceTable::parse(REFERENCE_UNIVARIATE);
    t.extend(ReferenceTable::parse(REFERENCE_BIVARIATE));
    t
}

/// Look a benchmark up by name in both shipped suites.
pub fn find(name: &str) -> Option<Benchmark> {
    univariate().into_iter().chain(bivariate()).find(|b| b.name == name)
}

/// `n` points drawn uniformly over each variable's range, keeping only
/// points where the label is defined.
pub fn sample_dataset(b: &Benchmark, n: usize, seed: u64, thresholds: &Thresholds) -> Result<Dataset, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::default();
    let budget = 100 * n + 1000;
    let none = Bindings::new();
    for _ in 0..budget {
        if data.len() >= n {
            break;
        }
        let point: Vec<f64> = b
            .ranges
            .iter()
            .map(|r| {
                // open interval: never land on a bound
                let mut u: f64 = rng.gen();
                while u == 0.0 {
                    u = rng.gen();
                }
                r.map_unit(u)
            })
            .collect();
        if let Ok(v) = evaluate(&b.label, &point, &none, thresholds) {
            data.points.push(point);
            data.values.push(v);
        }
    }
    if data.len() < n {
        return Err(BenchError::Sampling {
            name: b.name.clone(),
            got: data.len(),
            wanted: n,
        });
    }
    Ok(data)
}

/// Why a run produced no score.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Failure {
    /// The search emitted nothing.
    NoCandidate,
    /// Candidates existed but every fit failed numerically.
    Numerical,
    Error(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub r2: Option<f64>,
    pub recovered: bool,
    pub time_s: f64,
    pub strategy: Option<StrategyTag>,
    pub expression: Option<String>,
    pub failure: Option<Failure>,
}

impl RunOutcome {
    fn failed(f: Failure, time_s: f64) -> RunOutcome {
        RunOutcome {
            r2: None,
            recovered: false,
            time_s,
            strategy: None,
            expression: None,
            failure: Some(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub vars: usize,
    pub length: usize,
    pub outcomes: Vec<RunOutcome>,
    pub recorded_r2: Option<f64>,
    pub recovery_rate: f64,
}

impl RunRecord {
    pub fn new(b: &Benchmark, outcomes: Vec<RunOutcome>) -> RunRecord {
        let recovery_rate = if outcomes.is_empty() {
            0.0
        } else {
            outcomes.iter().filter(|o| o.recovered).count() as f64 / outcomes.len() as f64
        };
        RunRecord {
            name: b.name.clone(),
            vars: b.n_vars(),
            length: b.length(),
            recorded_r2: recorded_r2(&outcomes),
            outcomes,
            recovery_rate,
        }
    }

    /// Strategy of the first recovering run, else of the best-scoring run.
    pub fn strategy(&self) -> Option<StrategyTag> {
        self.outcomes
            .iter()
            .find(|o| o.recovered)
            .or_else(|| {
                self.outcomes
                    .iter()
                    .filter(|o| o.r2.is_some())
                    .max_by(|a, b| a.r2.unwrap().total_cmp(&b.r2.unwrap()))
            })
            .and_then(|o| o.strategy)
    }

    pub fn mean_time_s(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.iter().map(|o| o.time_s).sum::<f64>() / self.outcomes.len() as f64
    }
}

/// 1 if any run recovered; otherwise the median score (the mean of the two
/// middle order statistics for an even count). Missing scores sort lowest,
/// and the result is `None` when a middle statistic is missing.
pub fn recorded_r2(outcomes: &[RunOutcome]) -> Option<f64> {
    if outcomes.iter().any(|o| o.recovered) {
        return Some(1.0);
    }
    if outcomes.is_empty() {
        return None;
    }
    let mut scores: Vec<f64> = outcomes.iter().map(|o| o.r2.unwrap_or(f64::NEG_INFINITY)).collect();
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let mid = if n % 2 == 0 {
        (scores[n / 2 - 1] + scores[n / 2]) / 2.0
    } else {
        scores[n / 2]
    };
    mid.is_finite().then_some(mid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Test points sampled per run.
    pub samples: usize,
    pub repeats: usize,
    pub solve: SolveConfig,
    /// Benchmarks run concurrently; results do not depend on it.
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            samples: 1000,
            repeats: 10,
            solve: SolveConfig::default(),
            jobs: 1,
        }
    }
}

/// One pass of the pipeline on freshly sampled data.
pub fn run_once(
    b: &Benchmark,
    source: &dyn MatrixSource,
    cfg: &BenchConfig,
    registry: &StrategyRegistry,
    seed: u64,
) -> RunOutcome {
    let start = Instant::now();
    let attempt = catch_unwind(AssertUnwindSafe(|| -> Result<RunOutcome, Failure> {
        let th = cfg.solve.opt.thresholds;
        let data = sample_dataset(b, cfg.samples, derive_seed(seed, &["data"]), &th)
            .map_err(|e| Failure::Error(e.to_string()))?;
        let m = source
            .matrix(&b.label, &data, derive_seed(seed, &["matrix"]))
            .map_err(|e| Failure::Error(e.to_string()))?;
        let domain = b.domain(th);
        let target = Target::Label {
            label: &b.label,
            domain: &domain,
        };
        let out = solve(&m, &data, &target, &cfg.solve, registry, derive_seed(seed, &["solve"]));
        let best = out.best().ok_or(Failure::NoCandidate)?;
        let r2 = best.fit.r2_value().ok_or(Failure::Numerical)?;
        Ok(RunOutcome {
            r2: Some(r2),
            recovered: best.fit.recovered,
            time_s: 0.0,
            strategy: Some(best.fit.strategy),
            expression: Some(best.expression.to_string()),
            failure: None,
        })
    }));
    let elapsed = start.elapsed().as_secs_f64();
    match attempt {
        Ok(Ok(mut o)) => {
            o.time_s = elapsed;
            o
        }
        Ok(Err(f)) => RunOutcome::failed(f, elapsed),
        Err(_) => RunOutcome::failed(Failure::Error("pipeline panicked".into()), elapsed),
    }
}

/// `cfg.repeats` runs, each with its own derived seed.
pub fn run_benchmark(
    b: &Benchmark,
    source: &dyn MatrixSource,
    cfg: &BenchConfig,
    registry: &StrategyRegistry,
    seed: u64,
) -> RunRecord {
    let outcomes = (0..cfg.repeats)
        .map(|r| run_once(b, source, cfg, registry, derive_seed(seed, &[&b.name, &r.to_string()])))
        .collect();
    RunRecord::new(b, outcomes)
}

/// Run every benchmark, `cfg.jobs` at a time. Records come back in input
/// order.
pub fn run_suite(
    benchmarks: &[Benchmark],
    source: &dyn MatrixSource,
    cfg: &BenchConfig,
    registry: &StrategyRegistry,
    seed: u64,
) -> Vec<RunRecord> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; benchmarks.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.max(1).min(benchmarks.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(b) = benchmarks.get(i) else { break };
                let rec = run_benchmark(b, source, cfg, registry, seed);
                slots.lock().expect("no poisoned workers")[i] = Some(rec);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every benchmark ran"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean recovery rate of the bin; absent for an empty bin.
    pub mean_recovery: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub benchmarks: usize,
    pub recovery_rate: f64,
    /// Mean over benchmarks with a recorded score.
    pub mean_recorded_r2: Option<f64>,
    pub none_count: usize,
    pub bins: Vec<LengthBin>,
    pub grand_mean: f64,
    pub variance: f64,
}

/// Weighted mean and `sum n_i (m_i - mean)^2 / sum n_i`.
pub fn weighted_variance(counts: &[usize], means: &[f64]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return (0.0, 0.0);
    }
    let total = total as f64;
    let mean = counts.iter().zip(means).map(|(&n, &m)| n as f64 * m).sum::<f64>() / total;
    let var = counts
        .iter()
        .zip(means)
        .map(|(&n, &m)| n as f64 * (m - mean).powi(2))
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Overall rates plus the spread of recovery across `bins` equal-width
/// label-length bins.
pub fn aggregate_metrics(records: &[RunRecord], bins: usize) -> Metrics {
    let bins = bins.max(1);
    let n = records.len();
    let recovery_rate = if n == 0 {
        0.0
    } else {
        records.iter().map(|r| r.recovery_rate).sum::<f64>() / n as f64
    };
    let scored: Vec<f64> = records.iter().filter_map(|r| r.recorded_r2).collect();
    let mean_recorded_r2 = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);

    let lo = records.iter().map(|r| r.length).min().unwrap_or(0);
    let hi = records.iter().map(|r| r.length).max().unwrap_or(0);
    let mut counts = vec![0usize; bins];
    let mut sums = vec![0.0; bins];
    for r in records {
        // Integer arithmetic keeps lengths on a bin edge in the upper bin.
        let i = if hi > lo { ((r.length - lo) * bins / (hi - lo)).min(bins - 1) } else { 0 };
        counts[i] += 1;
        sums[i] += r.recovery_rate;
    }
    let means: Vec<f64> = counts
        .iter()
        .zip(&sums)
        .map(|(&c, &s)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let (grand_mean, variance) = weighted_variance(&counts, &means);
    let (lo, width) = (lo as f64, (hi - lo) as f64 / bins as f64);
    let hi = hi as f64;
    let bins = (0..bins)
        .map(|i| LengthBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: counts[i],
            mean_recovery: (counts[i] > 0).then_some(means[i]),
        })
        .collect();
    Metrics {
        benchmarks: n,
        recovery_rate,
        mean_recorded_r2,
        none_count: n - scored.len(),
        bins,
        grand_mean,
        variance,
    }
}
