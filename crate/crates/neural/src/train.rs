//! Synthetic data and the three training stages: forward operator fitting,
//! the inverse round trip, and judgment on an expression corpus.

use std::collections::HashSet;

use opfeat_core::expr::{evaluate, parse, Bindings, OpKind, Thresholds};
use opfeat_core::graph::{encode_expression, AdjacencyMatrix, NODE_COUNT};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{apply_kind, grid, kind_range, Model};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("{stage} diverged at step {step}: loss {loss}")]
    Diverged { stage: &'static str, step: usize, loss: f64 },
    #[error("could only build {got} of {wanted} corpus expressions")]
    Corpus { got: usize, wanted: usize },
}

/// Input functions for forward training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionFamily {
    /// Random cubics and sinusoids with coefficients in (-2, 2), rescaled
    /// onto the kind's input range.
    Mixed,
    /// `a x + b` with `a, b` in (-1, 1), used as is.
    Linear,
}

/// One input function: branch samples plus the target at every trunk
/// grid position.
pub struct ForwardSample {
    pub samples: Vec<f64>,
    pub targets: Vec<f64>,
}

pub fn forward_sample(
    kind: OpKind,
    family: FunctionFamily,
    sensors: &[f64],
    positions: &[f64],
    rng: &mut ChaCha8Rng,
) -> ForwardSample {
    let u: Box<dyn Fn(f64) -> f64> = match family {
        FunctionFamily::Linear => {
            let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            Box::new(move |x: f64| a * x + b)
        }
        FunctionFamily::Mixed => {
            let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let g: Box<dyn Fn(f64) -> f64> = if rng.gen_bool(0.5) {
                Box::new(move |x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x)
            } else {
                Box::new(move |x: f64| c[0] * (2.0 * c[1] * x + c[2]).sin() + c[3])
            };
            let (lo_g, hi_g) = sensors
                .iter()
                .chain(positions)
                .map(|&x| g(x))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            let (lo, hi) = kind_range(kind);
            let span = hi_g - lo_g;
            Box::new(move |x: f64| {
                let s = if span > 1e-9 { (g(x) - lo_g) / span } else { 0.5 };
                lo + (hi - lo) * s
            })
        }
    };
    ForwardSample {
        samples: sensors.iter().map(|&x| u(x)).collect(),
        targets: positions.iter().map(|&y| apply_kind(kind, u(y), y)).collect(),
    }
}

/// Per-stage loss curves; each entry averages a window of updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub curves: Vec<(String, Vec<f64>)>,
    pub judgment_accuracy: Option<f64>,
}

const WINDOW: usize = 50;

struct Curve {
    stage: &'static str,
    points: Vec<f64>,
    acc: f64,
    n: usize,
}

impl Curve {
    fn new(stage: &'static str) -> Curve {
        Curve {
            stage,
            points: Vec::new(),
            acc: 0.0,
            n: 0,
        }
    }

    fn record(&mut self, step: usize, loss: f64) -> Result<(), TrainError> {
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                stage: self.stage,
                step,
                loss,
            });
        }
        self.acc += loss;
        self.n += 1;
        if self.n == WINDOW {
            self.flush();
        }
        Ok(())
    }

    fn flush(&mut self) {
        if self.n > 0 {
            self.points.push(self.acc / self.n as f64);
            self.acc = 0.0;
            self.n = 0;
        }
    }

    fn finish(mut self) -> (String, Vec<f64>) {
        self.flush();
        (self.stage.to_string(), self.points)
    }
}

fn update(model: &mut Model, lr: f64) {
    let hp = &model.hp;
    let (clip, momentum) = (hp.clip, hp.momentum);
    model.store.clip_grad_norm(clip);
    model.store.sgd_step(lr, momentum);
}

/// Fits encoders, shared decoder and trunk jointly on `kinds`. Each step
/// draws one function per kind and a random subset of trunk positions.
pub fn train_forward(model: &mut Model, kinds: &[OpKind], family: FunctionFamily, steps: usize, seed: u64) -> Result<(String, Vec<f64>), TrainError> {
    model.train_only(&["encoder", "decoder", "trunk"]);
    model.store.reset_velocity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors = grid(model.hp.branch_samples);
    let all_positions = grid(model.hp.trunk_samples);
    let mut curve = Curve::new("forward");
    for step in 0..steps {
        let mut idx: Vec<usize> = (0..all_positions.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(model.hp.trunk_batch);
        idx.sort_unstable();
        let positions: Vec<f64> = idx.iter().map(|&i| all_positions[i]).collect();
        let mut t = Tape::new();
        let y = t.input(Mat::column(&positions));
        let trunk = model.trunk_on(&mut t, y);
        let mut losses = Vec::with_capacity(kinds.len());
        let batch = model.hp.batch;
        for &k in kinds {
            // one column of targets per function
            let mut samples = Vec::with_capacity(batch * sensors.len());
            let mut targets = Mat::zeros(positions.len(), batch);
            for j in 0..batch {
                let s = forward_sample(k, family, &sensors, &positions, &mut rng);
                samples.extend(s.samples);
                for (i, v) in s.targets.into_iter().enumerate() {
                    targets.data[i * batch + j] = v;
                }
            }
            let sv = t.input(Mat::from_vec(batch, sensors.len(), samples));
            let out = model.deeponet(&mut t, k, sv, trunk);
            losses.push(t.mse(out, &targets));
        }
        let all = t.concat_cols(&losses);
        let total = t.sum(all);
        let loss = t.scale(total, 1.0 / kinds.len() as f64);
        curve.record(step, t.value(loss).data[0])?;
        let g = t.backward(loss);
        t.accumulate_param_grads(&g, &mut model.store);
        update(model, decayed(model.hp.learning_rate, step, steps));
    }
    Ok(curve.finish())
}

/// Linear decay to a tenth of `lr` over the run.
fn decayed(lr: f64, step: usize, steps: usize) -> f64 {
    lr * (1.0 - 0.9 * step as f64 / steps.max(1) as f64)
}

/// Mean forward MSE over `n` fresh functions per kind on the full trunk
/// grid.
pub fn forward_loss(model: &Model, kinds: &[OpKind], family: FunctionFamily, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors = grid(model.hp.branch_samples);
    let positions = grid(model.hp.trunk_samples);
    let mut total = 0.0;
    for &k in kinds {
        for _ in 0..n {
            let s = forward_sample(k, family, &sensors, &positions, &mut rng);
            let pred = model.deeponet_forward(k, &s.samples, &positions).expect("sample length matches");
            total += pred.iter().zip(&s.targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / positions.len() as f64;
        }
    }
    total / (kinds.len() * n) as f64
}

/// `(positions, values)` of each kind applied to its reference ramp; the
/// data the inverse round trip is trained on.
pub fn kind_data(model: &Model, kind: OpKind) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (lo, hi) = kind_range(kind);
    let ys = grid(model.hp.corpus_points);
    let values = ys.iter().map(|&y| apply_kind(kind, lo + (hi - lo) * (y + 1.0) / 2.0, y)).collect();
    (ys.iter().map(|&y| [y, 0.0]).collect(), values)
}

struct InverseCase {
    elements: Mat,
    target: Mat,
}

fn inverse_cases(model: &Model) -> Vec<InverseCase> {
    let basic = model.basic_features();
    OpKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (p, v) = kind_data(model, k);
            InverseCase {
                elements: model.set_elements(&p, &v),
                target: Mat::row_vector(basic.row(i)),
            }
        })
        .collect()
}

fn inverse_step(model: &mut Model, cases: &[InverseCase]) -> f64 {
    let mut t = Tape::new();
    let mut losses = Vec::new();
    for c in cases {
        let e = t.input(c.elements.clone());
        let n = model.numerical_on(&mut t, e);
        let f = model.invert_on(&mut t, n);
        losses.push(t.mse(f, &c.target));
    }
    let all = t.concat_cols(&losses);
    let total = t.sum(all);
    let loss = t.scale(total, 1.0 / cases.len() as f64);
    let g = t.backward(loss);
    t.accumulate_param_grads(&g, &mut model.store);
    t.value(loss).data[0]
}

/// Trains the set encoder and inverse decoder so that every kind's data
/// maps back onto its operator feature.
pub fn train_inverse(model: &mut Model, steps: usize) -> Result<(String, Vec<f64>), TrainError> {
    model.train_only(&["setenc", "inverse"]);
    model.store.reset_velocity();
    let cases = inverse_cases(model);
    let mut curve = Curve::new("inverse");
    for step in 0..steps {
        let l = inverse_step(model, &cases);
        curve.record(step, l)?;
        update(model, decayed(model.hp.inverse_learning_rate, step, steps));
    }
    Ok(curve.finish())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub expression: String,
    pub matrix: AdjacencyMatrix,
    pub positions: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

fn random_expression(rng: &mut ChaCha8Rng, depth: usize) -> String {
    if depth <= 1 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.35) { "x_2" } else { "x_1" }.to_string();
    }
    let d = depth - 1;
    let kind = OpKind::ALL[rng.gen_range(0..OpKind::ALL.len())];
    let a = random_expression(rng, d);
    match kind {
        OpKind::Add => format!("({a}+{})", random_expression(rng, d)),
        OpKind::Mul => format!("({a}*{})", random_expression(rng, d)),
        OpKind::Pow => format!("pow({a},{})", rng.gen_range(2..=3)),
        OpKind::FracPow => format!("fpow({a},0.5)"),
        OpKind::AddConst => format!("({a}+1.5)"),
        OpKind::MulConst => format!("2.5*({a})"),
        k => format!("{}({a})", k.label()),
    }
}

/// `hp.corpus_size` distinct random expressions of depth at most
/// `hp.corpus_depth`, each defined and moderate on all its sample points.
pub fn generate_corpus(model: &Model, seed: u64) -> Result<Vec<CorpusItem>, TrainError> {
    let hp = &model.hp;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = Thresholds::default();
    let none = Bindings::new();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..200 * hp.corpus_size {
        if out.len() == hp.corpus_size {
            break;
        }
        let text = random_expression(&mut rng, hp.corpus_depth);
        let Ok(expr) = parse(&text) else { continue };
        let Ok(matrix) = encode_expression(&expr) else { continue };
        if !seen.insert(expr.to_string()) {
            continue;
        }
        let positions: Vec<[f64; 2]> = (0..hp.corpus_points)
            .map(|_| [rng.gen_range(0.1..1.5), rng.gen_range(0.1..1.5)])
            .collect();
        let values: Option<Vec<f64>> = positions
            .iter()
            .map(|p| evaluate(&expr, p, &none, &th).ok().filter(|v| v.abs() < 1e4))
            .collect();
        let Some(values) = values else { continue };
        out.push(CorpusItem {
            expression: expr.to_string(),
            matrix,
            positions,
            values,
        });
    }
    if out.len() < hp.corpus_size {
        return Err(TrainError::Corpus {
            got: out.len(),
            wanted: hp.corpus_size,
        });
    }
    Ok(out)
}

/// Edge cross-entropy of the full data-to-matrix path for one set of
/// encoded points.
pub fn judgment_loss(model: &Model, basic: &Mat, elements: &Mat, labels: &Mat) -> (Tape, Var) {
    let mut t = Tape::new();
    let b = t.input(basic.clone());
    let e = t.input(elements.clone());
    let n = model.numerical_on(&mut t, e);
    let f = model.invert_on(&mut t, n);
    let logits = model.judge_on(&mut t, b, f);
    let loss = t.bce_logits(logits, labels);
    (t, loss)
}

/// 0/1 matrix of `m`'s edges.
pub fn label_matrix(m: &AdjacencyMatrix) -> Mat {
    let mut out = Mat::zeros(NODE_COUNT, NODE_COUNT);
    for r in 0..NODE_COUNT {
        for c in 0..NODE_COUNT {
            if m.get_index(r, c) {
                out.data[r * NODE_COUNT + c] = 1.0;
            }
        }
    }
    out
}

/// Trains the set encoder, inverse decoder and judgment head end to end on
/// `corpus`, with the basic features held fixed. Each epoch also takes
/// one inverse round-trip step so the operator-feature alignment is kept.
pub fn train_judgment(model: &mut Model, corpus: &[CorpusItem], epochs: usize, seed: u64) -> Result<(String, Vec<f64>), TrainError> {
    model.train_only(&["setenc", "inverse", "judge"]);
    model.store.reset_velocity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basic = model.basic_features();
    let cases: Vec<(Mat, Mat)> = corpus
        .iter()
        .map(|c| (model.set_elements(&c.positions, &c.values), label_matrix(&c.matrix)))
        .collect();
    let inverse = inverse_cases(model);
    let lr = model.hp.judgment_learning_rate;
    let mut curve = Curve::new("judgment");
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut step = 0;
    let total = epochs * cases.len();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (elements, labels) = &cases[i];
            let (t, loss) = judgment_loss(model, &basic, elements, labels);
            curve.record(step, t.value(loss).data[0])?;
            step += 1;
            let g = t.backward(loss);
            t.accumulate_param_grads(&g, &mut model.store);
            update(model, decayed(lr, step, total));
        }
        inverse_step(model, &inverse);
        update(model, decayed(lr, step, total));
    }
    Ok(curve.finish())
}

/// Fraction of corpus items whose predicted matrix matches the label on
/// every entry.
pub fn judgment_accuracy(model: &Model, corpus: &[CorpusItem]) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let hits = corpus
        .iter()
        .filter(|c| model.predict_matrix(&c.positions, &c.values).ok().as_ref() == Some(&c.matrix))
        .count();
    hits as f64 / corpus.len() as f64
}

/// Forward training over all kinds, then the inverse and judgment stages.
pub fn train_all(model: &mut Model) -> Result<(TrainReport, Vec<CorpusItem>), TrainError> {
    let seed = model.hp.seed;
    let mut report = TrainReport::default();
    let steps = model.hp.forward_steps;
    report
        .curves
        .push(train_forward(model, &OpKind::ALL, FunctionFamily::Mixed, steps, seed ^ 0x0f)?);
    let steps = model.hp.inverse_steps;
    report.curves.push(train_inverse(model, steps)?);
    let corpus = generate_corpus(model, seed ^ 0xc0)?;
    let epochs = model.hp.judgment_epochs;
    report.curves.push(train_judgment(model, &corpus, epochs, seed ^ 0x1d)?);
    report.judgment_accuracy = Some(judgment_accuracy(model, &corpus));
    Ok((report, corpus))
}
