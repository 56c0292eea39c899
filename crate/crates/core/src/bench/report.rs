//! Report files for a benchmark run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Metrics, RunRecord};

/// Published per-benchmark results for comparison methods, keyed by
/// benchmark name then method.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceTable {
    pub methods: Vec<String>,
    pub rows: BTreeMap<String, BTreeMap<String, (Option<f64>, Option<f64>)>>,
}

fn cell(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

impl ReferenceTable {
    /// Header `# name  <m>_r2  <m>_recovery ...`, then one row per benchmark.
    /// Unparseable cells (`None`, `NA`) become absent values.
    pub fn parse(text: &str) -> ReferenceTable {
        let mut t = ReferenceTable::default();
        let mut lines = text.lines();
        let Some(header) = lines.next() else { return t };
        let cols: Vec<&str> = header.trim_start_matches('#').trim().split('\t').skip(1).collect();
        t.methods = cols
            .chunks(2)
            .filter_map(|c| c[0].strip_suffix("_r2").map(str::to_string))
            .collect();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let entry = t.rows.entry(f[0].to_string()).or_default();
            for (i, m) in t.methods.iter().enumerate() {
                let r2 = f.get(1 + 2 * i).and_then(|s| cell(s));
                let rec = f.get(2 + 2 * i).and_then(|s| cell(s));
                entry.insert(m.clone(), (r2, rec));
            }
        }
        t
    }

    pub fn extend(&mut self, other: ReferenceTable) {
        for m in other.methods {
            if !self.methods.contains(&m) {
                self.methods.push(m);
            }
        }
        self.rows.extend(other.rows);
    }

    pub fn get(&self, name: &str, method: &str) -> Option<(Option<f64>, Option<f64>)> {
        self.rows.get(name)?.get(method).copied()
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "None".into(),
    }
}

/// One row per benchmark. Wall time is `NA` unless `timing` is set so that
/// reports from the same seed are byte-identical.
pub fn report_csv(records: &[RunRecord], timing: bool) -> String {
    let mut out = String::from("name,vars,length,recorded_r2,recovery_rate,strategy,mean_time_s\n");
    for r in records {
        let strategy = r.strategy().map_or("NA".to_string(), |s| s.to_string());
        let time = if timing {
            format!("{:.3}", r.mean_time_s())
        } else {
            "NA".into()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2},{},{}",
            r.name,
            r.vars,
            r.length,
            opt(r.recorded_r2),
            r.recovery_rate,
            strategy,
            time
        );
    }
    out
}

/// Plain-text table of score and recovery, with the published columns of
/// `reference` alongside when given.
pub fn table_text(records: &[RunRecord], reference: Option<&ReferenceTable>) -> String {
    let methods: Vec<String> = reference.map(|r| r.methods.clone()).unwrap_or_default();
    let width = records.iter().map(|r| r.name.len()).max().unwrap_or(4).max(9);
    let mut out = format!("{:<width$}  {:>9}  {:>8}", "benchmark", "R2", "recovery");
    for m in &methods {
        let _ = write!(out, "  {:>14}  {:>14}", format!("{m} R2"), format!("{m} rec"));
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{:<width$}  {:>9}  {:>8.2}",
            r.name,
            r.recorded_r2.map_or("None".to_string(), |v| format!("{v:.3}")),
            r.recovery_rate
        );
        for m in &methods {
            let (r2, rec) = reference.and_then(|t| t.get(&r.name, m)).unwrap_or((None, None));
            let r2 = r2.map_or("None".to_string(), |v| format!("{v:.3}"));
            let rec = rec.map_or("NA".to_string(), |v| format!("{v:.2}"));
            let _ = write!(out, "  {r2:>14}  {rec:>14}");
        }
        out.push('\n');
    }
    out
}

pub fn length_bins_csv(metrics: &Metrics) -> String {
    let mut out = String::from("lo,hi,count,mean_recovery\n");
    for b in &metrics.bins {
        let mean = b.mean_recovery.map_or("NA".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{:.2},{:.2},{},{}", b.lo, b.hi, b.count, mean);
    }
    let _ = writeln!(out, "# grand_mean={:.6} variance={:.6}", metrics.grand_mean, metrics.variance);
    out
}

pub fn summary_json(metrics: &Metrics) -> String {
    serde_json::to_string_pretty(metrics).expect("metrics serialize")
}

/// Writes `report.csv`, `table.txt`, `length_bins.csv` and `summary.json`
/// into `dir`.
pub fn emit_report(
    metrics: &Metrics,
    records: &[RunRecord],
    reference: Option<&ReferenceTable>,
    dir: &Path,
    timing: bool,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_csv(records, timing))?;
    std::fs::write(dir.join("table.txt"), table_text(records, reference))?;
    std::fs::write(dir.join("length_bins.csv"), length_bins_csv(metrics))?;
    std::fs::write(dir.join("summary.json"), summary_json(metrics) + "\n")?;
    Ok(())
}
