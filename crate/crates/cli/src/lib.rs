//! Command implementations behind the `opfeat` binary. Kept in a library so
//! the integration tests can drive them without spawning processes.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use opfeat_core::bench::{self, aggregate_metrics, emit_report, run_suite, sample_dataset, Benchmark};
use opfeat_core::expr::{parse, EvalDomain};
use opfeat_core::fit::{Dataset, StrategyRegistry, StrategyTag};
use opfeat_core::graph::{encode_expression, validate_matrix, AdjacencyMatrix};
use opfeat_core::pipeline::{derive_seed, solve, SolveOutcome, SourceRegistry, Target};
use opfeat_neural::gradcheck::{gradient_check, Module};
use opfeat_neural::{checkpoint, train, Model};
use serde_json::json;

pub use config::{usage, CliConfig, UsageError};

/// Largest tolerated relative gradient error.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "opfeat", version, about = "Operator-graph guided symbolic regression")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file layered under the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports, checkpoints and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Candidate cap per search round.
    #[arg(long, global = true)]
    pub max_candidates: Option<usize>,
    /// `oracle`, `noisy:k` or `model:path`.
    #[arg(long, global = true)]
    pub matrix_source: Option<String>,
    /// Points sampled per run.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Force one constant-fitting strategy.
    #[arg(long, global = true)]
    pub strategy: Option<StrategyTag>,
    /// Largest exponent expected; routes pow skeletons.
    #[arg(long, global = true)]
    pub exponent_hint: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the adjacency matrix of an expression.
    Encode { expression: String },
    /// Search and fit one target.
    Solve(SolveArgs),
    /// Run a benchmark suite and write reports.
    Bench(BenchArgs),
    /// Train the toy networks and write a checkpoint.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare tape gradients with finite differences.
    Gradcheck {
        /// One of dense, deeponet, set-encoder, inverse, attention.
        #[arg(long)]
        module: Option<Module>,
    },
}

#[derive(Debug, Default, Args)]
pub struct SolveArgs {
    /// Name from the shipped suites (or the --benchmarks file).
    #[arg(long, conflicts_with_all = ["expr", "data"])]
    pub benchmark: Option<String>,
    /// Target expression to sample from.
    #[arg(long, requires = "ranges", conflicts_with = "data")]
    pub expr: Option<String>,
    /// Per-variable ranges for --expr, as in `(-1,1);(0,2)`.
    #[arg(long)]
    pub ranges: Option<String>,
    /// Whitespace or comma separated rows `x_1 [x_2] y`.
    #[arg(long, requires = "matrix")]
    pub data: Option<PathBuf>,
    /// Matrix file used instead of the matrix source.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub benchmarks: Option<PathBuf>,
    /// Candidates printed.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Default, Args)]
pub struct BenchArgs {
    /// `univariate`, `bivariate`, `all` or a benchmark file.
    #[arg(long, default_value = "univariate")]
    pub suite: String,
    /// Comma-separated subset of benchmark names.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Record wall-clock times (reports are then not reproducible).
    #[arg(long)]
    pub timing: bool,
}

/// How a command ended when it did not error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NoResult,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NoResult => 1,
        }
    }
}

/// Exit code for a failed command.
pub fn error_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(g: &GlobalArgs) -> anyhow::Result<CliConfig> {
    let mut c = match &g.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if g.seed.is_some() {
        c.seed = g.seed;
    }
    if let Some(o) = &g.out {
        c.out = Some(o.clone());
    }
    if let Some(j) = g.jobs {
        c.jobs = j;
    }
    if let Some(r) = g.repeats {
        c.repeats = r;
    }
    if let Some(m) = g.max_candidates {
        c.solve.search.max_candidates_per_round = m;
    }
    if let Some(s) = &g.matrix_source {
        c.matrix_source = s.clone();
    }
    if let Some(n) = g.samples {
        c.samples = n;
    }
    if g.strategy.is_some() {
        c.solve.strategy = g.strategy;
    }
    if g.exponent_hint.is_some() {
        c.solve.exponent_hint = g.exponent_hint;
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let mut cfg = resolve(&cli.global)?;
    match &cli.command {
        Command::Encode { expression } => cmd_encode(expression, &cfg, out),
        Command::Solve(a) => cmd_solve(a, &cfg, out).map(|(o, _)| o),
        Command::Bench(a) => cmd_bench(a, &cfg, out),
        Command::Train { checkpoint } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            cmd_train(&cfg, out)
        }
        Command::Gradcheck { module } => cmd_gradcheck(*module, &cfg, out),
    }
}

fn source_registry() -> SourceRegistry {
    let mut r = SourceRegistry::default();
    opfeat_neural::source::register_model_source(&mut r);
    r
}

/// Seeds, config hash and artifact names. The output directory itself is
/// left out so a rerun elsewhere produces the same bytes.
fn write_manifest(dir: &Path, command: &str, cfg: &CliConfig, seeds: serde_json::Value, artifacts: &[&str]) -> anyhow::Result<()> {
    let cfg = CliConfig {
        out: None,
        ..cfg.clone()
    };
    let m = json!({
        "tool": "opfeat",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "seeds": seeds,
        "config_sha256": cfg.hash(),
        "config": cfg,
        "artifacts": artifacts,
    });
    let text = serde_json::to_string_pretty(&m)? + "\n";
    std::fs::write(dir.join("manifest.json"), text).with_context(|| format!("writing manifest in {}", dir.display()))
}

fn out_dir(cfg: &CliConfig, fallback: Option<&str>) -> anyhow::Result<Option<PathBuf>> {
    let dir = cfg.out.clone().or_else(|| fallback.map(PathBuf::from));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(dir)
}

pub fn cmd_encode(text: &str, cfg: &CliConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let e = parse(text).map_err(|e| usage(format!("cannot parse `{text}`: {e}")))?;
    let m = encode_expression(&e).map_err(|e| usage(e.to_string()))?;
    let text = m.to_text();
    out.write_all(text.as_bytes())?;
    for d in validate_matrix(&m) {
        writeln!(out, "# {d}")?;
    }
    if let Some(dir) = out_dir(cfg, None)? {
        std::fs::write(dir.join("matrix.json"), &text)?;
        write_manifest(&dir, "encode", cfg, json!({}), &["matrix.json"])?;
    }
    Ok(Outcome::Success)
}

fn read_matrix(path: &Path) -> anyhow::Result<AdjacencyMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    AdjacencyMatrix::from_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Rows of numbers; the last column is the target. Lines starting with `#`
/// or a letter are skipped.
pub fn parse_data(text: &str) -> anyhow::Result<Dataset> {
    let mut d = Dataset::default();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(|c: char| c.is_alphabetic()) {
            continue;
        }
        let nums: Vec<f64> = t
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| usage(format!("data line {}: {e}", i + 1)))?;
        if !(2..=3).contains(&nums.len()) || d.points.first().is_some_and(|p| p.len() + 1 != nums.len()) {
            return Err(usage(format!("data line {}: expected one or two inputs and a target", i + 1)));
        }
        d.values.push(nums[nums.len() - 1]);
        d.points.push(nums[..nums.len() - 1].to_vec());
    }
    if d.len() < 2 {
        return Err(usage("data needs at least two rows"));
    }
    Ok(d)
}

fn load_suite(file: Option<&Path>) -> anyhow::Result<Vec<Benchmark>> {
    match file {
        Some(p) => bench::load_benchmarks(p).map_err(|e| usage(e.to_string())),
        None => Ok(bench::univariate().into_iter().chain(bench::bivariate()).collect()),
    }
}

fn solve_target(a: &SolveArgs, cfg: &CliConfig) -> anyhow::Result<Option<Benchmark>> {
    if let Some(name) = &a.benchmark {
        let file = a.benchmarks.as_deref().or(cfg.benchmarks.as_deref());
        return load_suite(file)?
            .into_iter()
            .find(|b| &b.name == name)
            .map(Some)
            .ok_or_else(|| usage(format!("no benchmark named `{name}`")));
    }
    if let Some(expr) = &a.expr {
        let ranges = a.ranges.as_deref().unwrap_or_default();
        let row = format!("target\t{expr}\t{ranges}");
        let mut b = bench::parse_benchmarks(&row).map_err(|e| usage(e.to_string()))?;
        return Ok(b.pop());
    }
    if a.data.is_some() {
        return Ok(None);
    }
    Err(usage("solve needs --benchmark, --expr with --ranges, or --data with --matrix"))
}

/// Runs the pipeline once. Exit status follows recovery.
pub fn cmd_solve(a: &SolveArgs, cfg: &CliConfig, out: &mut dyn Write) -> anyhow::Result<(Outcome, SolveOutcome)> {
    let seed = cfg.require_seed()?;
    let th = cfg.solve.opt.thresholds;
    let target = solve_target(a, cfg)?;
    let data = match (&a.data, &target) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            parse_data(&text)?
        }
        (None, Some(b)) => sample_dataset(b, cfg.samples, derive_seed(seed, &["data"]), &th)?,
        (None, None) => unreachable!("solve_target rejects this"),
    };
    let m = match (&a.matrix, &target) {
        (Some(p), _) => read_matrix(p)?,
        (None, Some(b)) => {
            let src = source_registry().build(&cfg.matrix_source).map_err(|e| usage(e.to_string()))?;
            src.matrix(&b.label, &data, derive_seed(seed, &["matrix"]))?
        }
        (None, None) => return Err(usage("--data needs --matrix")),
    };
    let domain: Option<EvalDomain> = target.as_ref().map(|b| b.domain(th));
    let goal = match (&target, &domain) {
        (Some(b), Some(d)) => Target::Label {
            label: &b.label,
            domain: d,
        },
        _ => Target::ScoreOnly,
    };
    let result = solve(&m, &data, &goal, &cfg.solve, &StrategyRegistry::default(), derive_seed(seed, &["solve"]));

    if result.ranked.is_empty() {
        writeln!(out, "no candidates")?;
    } else {
        writeln!(out, "rank\tr2\trecovered\tstrategy\texpression")?;
        let mut shown: Vec<_> = result.ranked.iter().collect();
        shown.sort_by(|x, y| y.fit.r2.total_cmp(&x.fit.r2));
        for (i, c) in shown.iter().take(a.top).enumerate() {
            let r2 = c.fit.r2_value().map_or("None".to_string(), |v| format!("{v:.9}"));
            let rec = if c.fit.recovered { "yes" } else { "no" };
            writeln!(out, "{}\t{r2}\t{rec}\t{}\t{}", i + 1, c.fit.strategy, c.expression)?;
        }
        match &result.recovered {
            Some(c) => writeln!(out, "recovered: {}", c.expression)?,
            None => writeln!(out, "not recovered ({} candidates fitted)", result.ranked.len())?,
        }
    }
    if let Some(dir) = out_dir(cfg, None)? {
        let ranked: Vec<_> = result
            .ranked
            .iter()
            .map(|c| {
                json!({
                    "skeleton": c.skeleton.to_string(),
                    "expression": c.expression.to_string(),
                    "r2": c.fit.r2_value(),
                    "recovered": c.fit.recovered,
                    "strategy": c.fit.strategy.name(),
                    "round": c.round,
                })
            })
            .collect();
        let body = json!({ "matrix": m.to_text(), "ranked": ranked });
        std::fs::write(dir.join("solve.json"), serde_json::to_string_pretty(&body)? + "\n")?;
        let seeds = json!({
            "data": derive_seed(seed, &["data"]),
            "matrix": derive_seed(seed, &["matrix"]),
            "solve": derive_seed(seed, &["solve"]),
        });
        write_manifest(&dir, "solve", cfg, seeds, &["solve.json"])?;
    }
    let o = if result.recovered.is_some() { Outcome::Success } else { Outcome::NoResult };
    Ok((o, result))
}

pub fn cmd_bench(a: &BenchArgs, cfg: &CliConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let seed = cfg.require_seed()?;
    let mut suite = match a.suite.as_str() {
        "univariate" if cfg.benchmarks.is_none() => bench::univariate(),
        "bivariate" if cfg.benchmarks.is_none() => bench::bivariate(),
        "all" if cfg.benchmarks.is_none() => load_suite(None)?,
        "univariate" | "bivariate" | "all" => load_suite(cfg.benchmarks.as_deref())?,
        path => load_suite(Some(Path::new(path)))?,
    };
    if !a.only.is_empty() {
        if let Some(missing) = a.only.iter().find(|n| !suite.iter().any(|b| &b.name == *n)) {
            return Err(usage(format!("no benchmark named `{missing}` in the suite")));
        }
        suite.retain(|b| a.only.contains(&b.name));
    }
    let src = source_registry().build(&cfg.matrix_source).map_err(|e| usage(e.to_string()))?;
    let records = run_suite(&suite, src.as_ref(), &cfg.bench_config(), &StrategyRegistry::default(), seed);
    let metrics = aggregate_metrics(&records, a.bins.unwrap_or(cfg.bins));
    let dir = out_dir(cfg, Some("opfeat-out"))?.expect("bench always has an output directory");
    emit_report(&metrics, &records, Some(&bench::reference_tables()), &dir, a.timing)
        .with_context(|| format!("writing reports in {}", dir.display()))?;
    write_manifest(
        &dir,
        "bench",
        cfg,
        json!({ "suite": seed }),
        &["report.csv", "table.txt", "length_bins.csv", "summary.json"],
    )?;
    writeln!(
        out,
        "{} benchmarks, recovery rate {:.3}, length-bin variance {:.6}, reports in {}",
        metrics.benchmarks,
        metrics.recovery_rate,
        metrics.variance,
        dir.display()
    )?;
    Ok(if records.is_empty() { Outcome::NoResult } else { Outcome::Success })
}

pub fn cmd_train(cfg: &CliConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let seed = cfg.require_seed()?;
    let hp = opfeat_neural::HyperParams {
        seed,
        ..cfg.model.clone()
    };
    let mut model = Model::new(hp).map_err(|e| usage(e.to_string()))?;
    let (report, corpus) = train::train_all(&mut model)?;
    let dir = out_dir(cfg, Some("opfeat-out"))?.expect("train always has an output directory");
    let path = cfg.checkpoint.clone().unwrap_or_else(|| dir.join("model.ckpt"));
    checkpoint::save(&path, &model, &report)?;
    for (stage, curve) in &report.curves {
        let last = curve.last().copied().unwrap_or(f64::NAN);
        writeln!(out, "{stage}: final loss {last:.3e}")?;
    }
    if let Some(acc) = report.judgment_accuracy {
        writeln!(out, "held-in exact-matrix accuracy {acc:.3} over {} expressions", corpus.len())?;
    }
    writeln!(out, "checkpoint {}", path.display())?;
    let artifact = path.strip_prefix(&dir).unwrap_or(&path).display().to_string();
    write_manifest(&dir, "train", cfg, json!({ "model": seed }), &[&artifact])?;
    Ok(Outcome::Success)
}

pub fn cmd_gradcheck(module: Option<Module>, cfg: &CliConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let seed = cfg.seed.unwrap_or(1);
    let modules = module.map_or(Module::ALL.to_vec(), |m| vec![m]);
    let mut worst: f64 = 0.0;
    let mut lines = String::new();
    for m in modules {
        for b in gradient_check(m, seed).blocks {
            worst = worst.max(b.max_relative_error);
            let verdict = if b.max_relative_error < GRADIENT_TOLERANCE { "ok" } else { "FAIL" };
            lines.push_str(&format!("{m}\t{}\t{}\t{:.3e}\t{verdict}\n", b.block, b.checked, b.max_relative_error));
        }
    }
    out.write_all(lines.as_bytes())?;
    writeln!(out, "max relative error {worst:.3e} (tolerance {GRADIENT_TOLERANCE:e})")?;
    if let Some(dir) = out_dir(cfg, None)? {
        std::fs::write(dir.join("gradcheck.tsv"), &lines)?;
        write_manifest(&dir, "gradcheck", cfg, json!({ "check": seed }), &["gradcheck.tsv"])?;
    }
    Ok(if worst < GRADIENT_TOLERANCE { Outcome::Success } else { Outcome::NoResult })
}
