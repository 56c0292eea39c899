use num_complex::Complex64;
use opfeat_core::bench::{
    self, aggregate_metrics, recorded_r2, run_suite, weighted_variance, BenchConfig, RunOutcome, RunRecord,
};
use opfeat_core::fit::{r_squared, StrategyRegistry};
use opfeat_core::pipeline::OracleSource;
use proptest::prelude::*;

fn outcome(r2: Option<f64>, recovered: bool) -> RunOutcome {
    RunOutcome {
        r2,
        recovered,
        time_s: 0.0,
        strategy: None,
        expression: None,
        failure: None,
    }
}

/// k-th smallest (1-based) by counting, with missing scores below every
/// real one.
fn order_statistic(xs: &[f64], k: usize) -> f64 {
    *xs.iter()
        .find(|&&v| {
            let below = xs.iter().filter(|&&w| w < v).count();
            let upto = xs.iter().filter(|&&w| w <= v).count();
            below < k && k <= upto
        })
        .unwrap()
}

fn recording_oracle(outcomes: &[RunOutcome]) -> Option<f64> {
    if outcomes.iter().any(|o| o.recovered) {
        return Some(1.0);
    }
    let xs: Vec<f64> = outcomes.iter().map(|o| o.r2.unwrap_or(f64::NEG_INFINITY)).collect();
    let n = xs.len();
    let m = if n % 2 == 1 {
        order_statistic(&xs, n / 2 + 1)
    } else {
        (order_statistic(&xs, n / 2) + order_statistic(&xs, n / 2 + 1)) / 2.0
    };
    m.is_finite().then_some(m)
}

fn record(length: usize, recovery_rate: f64) -> RunRecord {
    RunRecord {
        name: format!("L{length}"),
        vars: 1,
        length,
        outcomes: Vec::new(),
        recorded_r2: None,
        recovery_rate,
    }
}

fn run_outcomes() -> impl Strategy<Value = Vec<RunOutcome>> {
    let score = prop_oneof![
        1 => Just(None),
        4 => (-2.0f64..1.0).prop_map(Some),
        1 => (0u8..4).prop_map(|k| Some(k as f64 / 4.0)),
    ];
    prop::collection::vec((score, prop::bool::weighted(0.1)), 1..14)
        .prop_map(|v| v.into_iter().map(|(r, rec)| outcome(r, rec)).collect())
}

proptest! {
    #[test]
    fn recording_rule_matches_counting_oracle(outcomes in run_outcomes()) {
        prop_assert_eq!(recorded_r2(&outcomes), recording_oracle(&outcomes));
    }

    #[test]
    fn metrics_variance_matches_per_record_sum(
        recs in prop::collection::vec((1usize..40, 0u8..=10), 1..30),
        bins in 1usize..6,
    ) {
        let records: Vec<RunRecord> = recs.iter().map(|&(l, r)| record(l, r as f64 / 10.0)).collect();
        let m = aggregate_metrics(&records, bins);
        // Each record contributes the mean of its own bin, so the plain
        // per-record spread equals the count-weighted spread of bin means.
        let lo = records.iter().map(|r| r.length).min().unwrap();
        let hi = records.iter().map(|r| r.length).max().unwrap();
        let bin_of = |len: usize| if hi == lo { 0 } else { ((len - lo) * bins / (hi - lo)).min(bins - 1) };
        let per_record: Vec<f64> = records
            .iter()
            .map(|r| {
                let mates: Vec<f64> = records.iter().filter(|o| bin_of(o.length) == bin_of(r.length)).map(|o| o.recovery_rate).collect();
                mates.iter().sum::<f64>() / mates.len() as f64
            })
            .collect();
        let n = per_record.len() as f64;
        let mean = per_record.iter().sum::<f64>() / n;
        let var = per_record.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((m.variance - var).abs() < 1e-12, "{} vs {var}", m.variance);
        prop_assert!((m.grand_mean - mean).abs() < 1e-12);
        prop_assert_eq!(m.bins.iter().map(|b| b.count).sum::<usize>(), records.len());
    }

    #[test]
    fn complex_safe_r2_never_exceeds_one(
        pairs in prop::collection::vec(((-1e3f64..1e3), (-1e3f64..1e3), (-1e3f64..1e3)), 2..20),
    ) {
        let pred: Vec<Complex64> = pairs.iter().map(|&(re, im, _)| Complex64::new(re, im)).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        if let Ok(r2) = r_squared(&pred, &truth, true) {
            prop_assert!(r2 <= 1.0);
        }
    }
}

#[test]
fn two_bin_hand_case() {
    assert_eq!(weighted_variance(&[2, 2], &[0.0, 1.0]), (0.5, 0.25));
    let records = [record(5, 0.0), record(5, 0.0), record(9, 1.0), record(9, 1.0)];
    assert_eq!(aggregate_metrics(&records, 2).variance, 0.25);
}

#[test]
fn suite_is_independent_of_job_count() {
    let picks: Vec<_> = ["Nguyen-1", "Keijzer-6"].iter().map(|n| bench::find(n).unwrap()).collect();
    let mut cfg = BenchConfig {
        samples: 100,
        repeats: 2,
        ..BenchConfig::default()
    };
    let reg = StrategyRegistry::default();
    let one = run_suite(&picks, &OracleSource, &cfg, &reg, 5);
    cfg.jobs = 3;
    let three = run_suite(&picks, &OracleSource, &cfg, &reg, 5);
    assert_eq!(bench::report_csv(&one, false), bench::report_csv(&three, false));
    assert!(one.iter().all(|r| r.recovery_rate > 0.0), "{}", bench::report_csv(&one, false));
}

#[test]
fn shipped_suites_have_expected_sizes() {
    assert_eq!(bench::univariate().len(), 45);
    assert!(!bench::bivariate().is_empty());
    for b in bench::univariate().iter().chain(&bench::bivariate()) {
        assert!(b.ranges.iter().all(|r| r.is_valid()), "{}", b.name);
        assert_eq!(b.n_vars(), b.ranges.len(), "{}", b.name);
    }
}
