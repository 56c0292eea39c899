//! Constant optimization for skeletons and the recovery decision.

mod bfgs;
mod strategy;

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::tape::Tape;
use crate::expr::{numeric_equivalent, Bindings, Constant, EvalDomain, Expr, OpKind, SlotId, Thresholds};

pub use bfgs::{bfgs_minimize, BfgsConfig, BfgsError, Minimum, Objective};
pub use strategy::{
    select_strategy, ComplexBfgs, ConstStrategy, IntegerTraversal, PlainBfgs, StrategyRegistry, StrategyTag,
};

/// Sample points and target values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Restarts initialized in `unit_range`, run first.
    pub unit_restarts: usize,
    /// Restarts initialized in `wide_range`.
    pub wide_restarts: usize,
    pub unit_range: [f64; 2],
    pub wide_range: [f64; 2],
    /// Initial range of free `pow` exponents (complex strategy).
    pub exponent_range: [f64; 2],
    pub reference_points: usize,
    pub bfgs: BfgsConfig,
    pub exponent_threshold_univariate: u32,
    pub exponent_threshold_bivariate: u32,
    /// Most exponent combinations the integer sweep will try.
    pub sweep_cap: usize,
    /// Remaining restarts are skipped once the objective drops below this
    /// fraction of the target variance.
    pub early_exit: f64,
    pub recovery_r2: f64,
    pub equivalence_points: usize,
    pub equivalence_tolerance: f64,
    /// Free exponents this close to an integer are pinned to it after a
    /// complex fit.
    pub snap_tolerance: f64,
    pub thresholds: Thresholds,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            unit_restarts: 10,
            wide_restarts: 20,
            unit_range: [0.0, 1.0],
            wide_range: [-10.0, 10.0],
            exponent_range: [1.0, 8.0],
            reference_points: 80,
            bfgs: BfgsConfig::default(),
            exponent_threshold_univariate: 5,
            exponent_threshold_bivariate: 3,
            sweep_cap: 625,
            early_exit: 1e-14,
            recovery_r2: 0.999999,
            equivalence_points: 256,
            equivalence_tolerance: 1e-6,
            snap_tolerance: 1e-4,
            thresholds: Thresholds::default(),
        }
    }
}

impl OptConfig {
    pub fn restarts(&self) -> usize {
        self.unit_restarts + self.wide_restarts
    }

    pub fn exponent_threshold(&self, n_vars: usize) -> u32 {
        if n_vars <= 1 {
            self.exponent_threshold_univariate
        } else {
            self.exponent_threshold_bivariate
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("prediction and truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least two samples are needed, got {0}")]
    TooFewSamples(usize),
    #[error("target values have zero variance")]
    DegenerateTruth,
    #[error("skeleton has no pow exponent to sweep")]
    NoExponentSlots,
    #[error("skeleton cannot be compiled: {0}")]
    Compile(#[from] crate::expr::tape::CompileError),
}

/// Coefficient of determination. With `complex_safe` residuals enter as
/// squared moduli, so the score never exceeds 1; otherwise the real part of
/// the squared complex residual is used, which can.
pub fn r_squared(pred: &[Complex64], truth: &[f64], complex_safe: bool) -> Result<f64, FitError> {
    if pred.len() != truth.len() {
        return Err(FitError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.len() < 2 {
        return Err(FitError::TooFewSamples(truth.len()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(FitError::DegenerateTruth);
    }
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let r = p - t;
            if complex_safe {
                r.norm_sqr()
            } else {
                (r * r).re
            }
        })
        .sum();
    if ss_res.is_nan() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub bindings: Bindings,
    /// Full-dataset score; negative infinity when every restart failed.
    pub r2: f64,
    /// Mean squared residual on the reference points.
    pub objective: f64,
    pub strategy: StrategyTag,
    /// Set by [`recovery_check`]; fitting alone never sets it.
    pub recovered: bool,
    /// The integer sweep hit its combination cap.
    pub budget_exceeded: bool,
}

impl FitResult {
    pub fn failed(strategy: StrategyTag) -> FitResult {
        FitResult {
            bindings: Bindings::new(),
            r2: f64::NEG_INFINITY,
            objective: f64::INFINITY,
            strategy,
            recovered: false,
            budget_exceeded: false,
        }
    }

    /// `None` for the failure sentinel.
    pub fn r2_value(&self) -> Option<f64> {
        self.r2.is_finite().then_some(self.r2)
    }
}

/// What a free constant controls, which decides its initial range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotRole {
    Coefficient,
    /// Exponent of `pow` (kind 7).
    Exponent,
    /// Exponent of the fractional power (kind 8).
    FracExponent,
}

/// Role of every slot, in parameter order.
pub fn slot_roles(e: &Expr) -> Vec<(SlotId, SlotRole)> {
    let mut roles = BTreeMap::new();
    e.visit(&mut |n| {
        if let Expr::Op {
            kind: kind @ (OpKind::Pow | OpKind::FracPow),
            consts,
            ..
        } = n
        {
            if let Constant::Slot(id) = consts[0] {
                let role = if *kind == OpKind::Pow {
                    SlotRole::Exponent
                } else {
                    SlotRole::FracExponent
                };
                roles.insert(id, role);
            }
        }
    });
    let mut slots = e.slots();
    slots.dedup();
    slots
        .into_iter()
        .map(|id| (id, roles.get(&id).copied().unwrap_or(SlotRole::Coefficient)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Real,
    Complex,
}

/// Mean squared residual over a fixed sample, as a function of the free
/// parameters. Pinned parameters keep their values from `full`.
struct Loss<'a> {
    tape: &'a Tape,
    data: &'a Dataset,
    mode: Mode,
    full: Vec<f64>,
    free: Vec<usize>,
    full_grad: Vec<f64>,
    buf_r: Vec<f64>,
    adj_r: Vec<f64>,
    buf_c: Vec<Complex64>,
    adj_c: Vec<Complex64>,
}

impl<'a> Loss<'a> {
    fn new(tape: &'a Tape, data: &'a Dataset, mode: Mode, full: Vec<f64>, free: Vec<usize>) -> Loss<'a> {
        let n = full.len();
        Loss {
            tape,
            data,
            mode,
            full,
            free,
            full_grad: vec![0.0; n],
            buf_r: Vec::new(),
            adj_r: Vec::new(),
            buf_c: Vec::new(),
            adj_c: Vec::new(),
        }
    }

    fn load(&mut self, z: &[f64]) {
        for (&i, &v) in self.free.iter().zip(z) {
            self.full[i] = v;
        }
    }

    /// Loss and, when `want_grad`, its gradient over all parameters in
    /// `full_grad`. The gradient flag is false if a local derivative blew up.
    fn run(&mut self, want_grad: bool) -> Option<(f64, bool)> {
        let n = self.data.len() as f64;
        let mut loss = 0.0;
        let mut grad_ok = true;
        self.full_grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in self.data.points.iter().zip(&self.data.values) {
            match self.mode {
                Mode::Real => {
                    let v = self.tape.forward::<f64>(x, &self.full, &mut self.buf_r)?;
                    let r = v - y;
                    loss += r * r;
                    if want_grad && grad_ok {
                        grad_ok = self.tape.backward(
                            &self.full,
                            &self.buf_r,
                            2.0 * r / n,
                            &mut self.full_grad,
                            &mut self.adj_r,
                        );
                    }
                }
                Mode::Complex => {
                    let v = self.tape.forward::<Complex64>(x, &self.full, &mut self.buf_c)?;
                    let r = v - y;
                    loss += r.norm_sqr();
                    if want_grad && grad_ok {
                        grad_ok = self.tape.backward(
                            &self.full,
                            &self.buf_c,
                            r.conj() * (2.0 / n),
                            &mut self.full_grad,
                            &mut self.adj_c,
                        );
                    }
                }
            }
        }
        let loss = loss / n;
        loss.is_finite().then_some((loss, grad_ok))
    }

    fn value(&mut self, z: &[f64]) -> Option<f64> {
        self.load(z);
        self.run(false).map(|(l, _)| l)
    }
}

impl Objective for Loss<'_> {
    fn eval(&mut self, z: &[f64], grad: &mut [f64]) -> Option<f64> {
        self.load(z);
        let (loss, grad_ok) = self.run(true)?;
        if grad_ok && self.full_grad.iter().all(|g| g.is_finite()) {
            for (g, &i) in grad.iter_mut().zip(&self.free) {
                *g = self.full_grad[i];
            }
        } else {
            // central differences near a guard or singular derivative
            let mut probe = z.to_vec();
            for k in 0..z.len() {
                let h = 1e-6 * z[k].abs().max(1.0);
                probe[k] = z[k] + h;
                let up = self.value(&probe)?;
                probe[k] = z[k] - h;
                let down = self.value(&probe)?;
                probe[k] = z[k];
                grad[k] = (up - down) / (2.0 * h);
            }
            self.load(z);
        }
        Some(loss)
    }
}

/// Everything one skeleton fit needs, prepared once.
struct Problem<'a> {
    tape: Tape,
    roles: Vec<SlotRole>,
    reference: Dataset,
    data: &'a Dataset,
    cfg: &'a OptConfig,
    seed: u64,
    /// Variance of the reference targets, for the early-exit test.
    scale: f64,
}

impl<'a> Problem<'a> {
    fn new(skeleton: &Expr, data: &'a Dataset, cfg: &'a OptConfig, seed: u64) -> Result<Problem<'a>, FitError> {
        let tape = Tape::compile(skeleton, cfg.thresholds)?;
        let roles = slot_roles(skeleton).into_iter().map(|(_, r)| r).collect();
        let k = cfg.reference_points.min(data.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, data.len(), k).into_vec();
        idx.sort_unstable();
        let reference = data.subset(&idx);
        let n = reference.len().max(1) as f64;
        let mean = reference.values.iter().sum::<f64>() / n;
        let var = reference.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Problem {
            tape,
            roles,
            reference,
            data,
            cfg,
            seed,
            scale: if var > 0.0 { var } else { 1.0 },
        })
    }

    fn initial(&self, restart: usize, free: &[usize]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(restart as u64 + 1);
        let range = if restart < self.cfg.unit_restarts {
            self.cfg.unit_range
        } else {
            self.cfg.wide_range
        };
        free.iter()
            .map(|&i| {
                let [lo, hi] = match self.roles[i] {
                    SlotRole::Coefficient => range,
                    SlotRole::FracExponent => [0.0, 1.0],
                    SlotRole::Exponent => self.cfg.exponent_range,
                };
                rng.gen_range(lo..hi)
            })
            .collect()
    }

    /// Best parameters over the restart schedule with `pinned` parameters
    /// held fixed.
    fn multi_start(&self, mode: Mode, pinned: &[Option<f64>]) -> Option<(Vec<f64>, f64)> {
        let n = self.tape.param_count();
        let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
        let base: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(0.0)).collect();
        let mut loss = Loss::new(&self.tape, &self.reference, mode, base, free.clone());
        if free.is_empty() {
            let f = loss.value(&[])?;
            return Some((loss.full.clone(), f));
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for r in 0..self.cfg.restarts() {
            let z0 = self.initial(r, &free);
            let Ok(m) = bfgs_minimize(&mut loss, &z0, &self.cfg.bfgs) else {
                continue;
            };
            if best.as_ref().map_or(true, |(_, f)| m.f < *f) {
                loss.load(&m.x);
                best = Some((loss.full.clone(), m.f));
            }
            if best.as_ref().is_some_and(|(_, f)| *f < self.cfg.early_exit * self.scale) {
                break;
            }
        }
        best
    }

    /// Local refinement from `start` with `pinned` parameters held fixed.
    fn polish(&self, mode: Mode, start: &[f64], pinned: &[Option<f64>]) -> Option<(Vec<f64>, f64)> {
        let free: Vec<usize> = (0..start.len()).filter(|&i| pinned[i].is_none()).collect();
        let base: Vec<f64> = start.iter().zip(pinned).map(|(s, p)| p.unwrap_or(*s)).collect();
        let z0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
        let mut loss = Loss::new(&self.tape, &self.reference, mode, base, free);
        let m = bfgs_minimize(&mut loss, &z0, &self.cfg.bfgs).ok()?;
        loss.load(&m.x);
        Some((loss.full.clone(), m.f))
    }

    fn finish(&self, best: Option<(Vec<f64>, f64)>, strategy: StrategyTag) -> FitResult {
        let Some((params, objective)) = best else {
            return FitResult::failed(strategy);
        };
        let mut buf = Vec::new();
        let preds: Option<Vec<Complex64>> = self
            .data
            .points
            .iter()
            .map(|x| self.tape.forward::<Complex64>(x, &params, &mut buf))
            .collect();
        let r2 = preds
            .and_then(|p| r_squared(&p, &self.data.values, true).ok())
            .unwrap_or(f64::NEG_INFINITY);
        FitResult {
            bindings: self.tape.slots().iter().copied().zip(params).collect(),
            r2,
            objective,
            strategy,
            recovered: false,
            budget_exceeded: false,
        }
    }
}

/// Multi-restart BFGS on the real-valued squared error. Placeholders are
/// ignored; the reference subsample is drawn once from `seed`.
pub fn fit_constants(skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError> {
    let p = Problem::new(skeleton, data, cfg, seed)?;
    let pinned = vec![None; p.tape.param_count()];
    Ok(p.finish(p.multi_start(Mode::Real, &pinned), StrategyTag::PlainBfgs))
}

/// Multi-restart BFGS on squared complex-modulus residuals, with principal
/// branches instead of range guards. Exponents that land near an integer are
/// pinned and the rest refined.
pub fn fit_constants_complex(skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError> {
    let p = Problem::new(skeleton, data, cfg, seed)?;
    let n = p.tape.param_count();
    let mut best = p.multi_start(Mode::Complex, &vec![None; n]);
    if let Some((params, f)) = &best {
        let pinned: Vec<Option<f64>> = params
            .iter()
            .zip(&p.roles)
            .map(|(v, role)| {
                let near = (v - v.round()).abs() < cfg.snap_tolerance;
                (*role == SlotRole::Exponent && near).then(|| v.round())
            })
            .collect();
        if pinned.iter().any(Option::is_some) {
            if let Some((snapped, g)) = p.polish(Mode::Complex, params, &pinned) {
                if g <= f * (1.0 + 1e-3) + cfg.early_exit * p.scale {
                    best = Some((snapped, g));
                }
            }
        }
    }
    Ok(p.finish(best, StrategyTag::ComplexBfgs))
}

/// Pin every `pow` exponent to each integer combination in
/// `2..=threshold(n_vars)` and fit the remaining constants.
pub fn integer_exponent_sweep(skeleton: &Expr, data: &Dataset, cfg: &OptConfig, seed: u64) -> Result<FitResult, FitError> {
    let p = Problem::new(skeleton, data, cfg, seed)?;
    let exps: Vec<usize> = (0..p.roles.len()).filter(|&i| p.roles[i] == SlotRole::Exponent).collect();
    if exps.is_empty() {
        return Err(FitError::NoExponentSlots);
    }
    let top = cfg.exponent_threshold(data.n_vars()).max(2);
    let choices = (top - 1) as usize;
    let total = choices.checked_pow(exps.len() as u32).unwrap_or(usize::MAX);
    let combos = total.min(cfg.sweep_cap);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mut c in 0..combos {
        let mut pinned = vec![None; p.roles.len()];
        for &i in exps.iter().rev() {
            pinned[i] = Some((2 + c % choices) as f64);
            c /= choices;
        }
        if let Some((params, f)) = p.multi_start(Mode::Real, &pinned) {
            if best.as_ref().map_or(true, |(_, b)| f < *b) {
                best = Some((params, f));
            }
        }
        if best.as_ref().is_some_and(|(_, f)| *f < cfg.early_exit * p.scale) {
            break;
        }
    }
    let mut out = p.finish(best, StrategyTag::IntegerTraversal);
    out.budget_exceeded = total > cfg.sweep_cap;
    Ok(out)
}

/// Full recovery: the score clears the threshold and the fitted expression
/// agrees with the label numerically over the domain.
pub fn recovery_check(fit: &FitResult, candidate: &Expr, label: &Expr, domain: &EvalDomain, cfg: &OptConfig) -> bool {
    if !(fit.r2 > cfg.recovery_r2) {
        return false;
    }
    let bound = candidate.bind(&fit.bindings);
    numeric_equivalent(&bound, label, domain, cfg.equivalence_points, cfg.equivalence_tolerance).holds()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, parse, skeletonize};

    fn dataset(label: &str, lo: f64, hi: f64, n: usize) -> Dataset {
        let e = parse(label).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut d = Dataset::default();
        while d.len() < n {
            let x = rng.gen_range(lo..hi);
            if let Ok(v) = evaluate(&e, &[x], &Bindings::new(), &Thresholds::default()) {
                d.points.push(vec![x]);
                d.values.push(v);
            }
        }
        d
    }

    #[test]
    fn r2_basics() {
        let truth = [1.0, 2.0, 3.0, 4.0];
        let exact: Vec<Complex64> = truth.iter().map(|t| Complex64::new(*t, 0.0)).collect();
        assert_eq!(r_squared(&exact, &truth, true).unwrap(), 1.0);
        let mean = vec![Complex64::new(2.5, 0.0); 4];
        assert_eq!(r_squared(&mean, &truth, true).unwrap(), 0.0);
        let mut imag = exact.clone();
        imag[0].im = 0.5;
        assert!(r_squared(&imag, &truth, true).unwrap() < 1.0);
        assert!(r_squared(&imag, &truth, false).unwrap() > 1.0);
        assert_eq!(r_squared(&exact, &[1.0; 4], true), Err(FitError::DegenerateTruth));
        assert_eq!(r_squared(&exact[..1], &truth[..1], true), Err(FitError::TooFewSamples(1)));
    }

    #[test]
    fn roles_follow_parameter_order() {
        let s = skeletonize(&parse("pow(x_1,3)+sqrt(x_1)").unwrap());
        let roles: Vec<SlotRole> = slot_roles(&s).into_iter().map(|(_, r)| r).collect();
        assert_eq!(roles.iter().filter(|r| **r == SlotRole::Exponent).count(), 1);
        assert_eq!(roles.iter().filter(|r| **r == SlotRole::FracExponent).count(), 1);
        assert_eq!(roles.len(), s.slot_count());
    }

    #[test]
    fn constant_one_coefficients() {
        let data = dataset("3.39*pow(x_1,3)+2.12*pow(x_1,2)+1.78*x_1", -4.0, 4.0, 1000);
        let s = parse("c_1*pow(x_1,3)+c_2*pow(x_1,2)+c_3*x_1").unwrap();
        let fit = fit_constants(&s, &data, &OptConfig::default(), 1).unwrap();
        let got: Vec<f64> = fit.bindings.values().copied().collect();
        for (g, want) in got.iter().zip([3.39, 2.12, 1.78]) {
            assert!((g - want).abs() < 1e-4, "{got:?}");
        }
        assert!(fit.r2 > 0.999999);
    }

    #[test]
    fn slotless_and_wrong_skeletons() {
        let data = dataset("sin(x_1)", -1.0, 1.0, 200);
        let fit = fit_constants(&parse("sin(x_1)").unwrap(), &data, &OptConfig::default(), 3).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-15);
        let wrong = fit_constants(&parse("c_1*cos(x_1)").unwrap(), &data, &OptConfig::default(), 3).unwrap();
        assert!(wrong.r2 < 0.999999);
        let label = parse("sin(x_1)").unwrap();
        let domain = EvalDomain::uniform(1, -1.0, 1.0);
        assert!(!recovery_check(&wrong, &parse("c_1*cos(x_1)").unwrap(), &label, &domain, &OptConfig::default()));
    }

    #[test]
    fn sweep_finds_integer_exponent() {
        let data = dataset("pow(x_1,4)", -2.0, 2.0, 300);
        let s = parse("c_1*pow(x_1,c_2)").unwrap();
        let fit = integer_exponent_sweep(&s, &data, &OptConfig::default(), 5).unwrap();
        let b: Vec<f64> = fit.bindings.values().copied().collect();
        assert_eq!(b[1], 4.0);
        assert!((b[0] - 1.0).abs() < 1e-8);
        assert!(!fit.budget_exceeded);
        assert_eq!(
            integer_exponent_sweep(&parse("c_1*x_1").unwrap(), &data, &OptConfig::default(), 5),
            Err(FitError::NoExponentSlots)
        );
    }

    #[test]
    fn complex_fit_recovers_high_power() {
        let data = dataset("pow(x_1,6)+x_1", -1.0, 1.0, 300);
        let s = parse("c_1*pow(x_1,c_2)+c_3*x_1").unwrap();
        let fit = fit_constants_complex(&s, &data, &OptConfig::default(), 2).unwrap();
        assert!(fit.r2 > 0.999999, "{fit:?}");
        assert!(fit.bindings.values().any(|v| *v == 6.0), "{fit:?}");
    }

    #[test]
    fn recovery_needs_equivalence() {
        let label = parse("3.39*pow(x_1,3)+2.12*pow(x_1,2)+1.78*x_1").unwrap();
        let data = dataset("3.39*pow(x_1,3)+2.12*pow(x_1,2)+1.78*x_1", -4.0, 4.0, 500);
        let s = parse("c_1*pow(x_1,3)+c_2*pow(x_1,2)+c_3*x_1").unwrap();
        let domain = EvalDomain::uniform(1, -4.0, 4.0);
        let cfg = OptConfig::default();
        let mut near = FitResult::failed(StrategyTag::PlainBfgs);
        near.bindings = [(SlotId(1), 3.3901), (SlotId(2), 2.12), (SlotId(3), 1.78)].into_iter().collect();
        let mut buf = Vec::new();
        let tape = Tape::compile(&s, cfg.thresholds).unwrap();
        let params: Vec<f64> = near.bindings.values().copied().collect();
        let preds: Vec<Complex64> = data
            .points
            .iter()
            .map(|x| tape.forward::<Complex64>(x, &params, &mut buf).unwrap())
            .collect();
        near.r2 = r_squared(&preds, &data.values, true).unwrap();
        assert!(near.r2 > 0.999999);
        assert!(!recovery_check(&near, &s, &label, &domain, &cfg));
        near.bindings.insert(SlotId(1), 3.39);
        assert!(recovery_check(&near, &s, &label, &domain, &cfg));
        near.r2 = 0.9999;
        assert!(!recovery_check(&near, &s, &label, &domain, &cfg));
    }
}
