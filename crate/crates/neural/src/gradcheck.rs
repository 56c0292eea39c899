//! Finite-difference checks of the tape gradients, one trainable block at a
//! time.

use std::fmt;
use std::str::FromStr;

use opfeat_core::expr::OpKind;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{Dense, NetSpec};
use crate::model::{grid, HyperParams, Model};
use crate::params::{Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

pub const STEP: f64 = 1e-5;
/// Entries sampled from each trainable block.
pub const PER_BLOCK: usize = 16;
/// Gradients smaller than this are compared on an absolute scale.
const FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Module {
    /// A standalone stack of single layers and residual blocks.
    Dense,
    DeepOnet,
    SetEncoder,
    Inverse,
    Attention,
}

impl Module {
    pub const ALL: [Module; 5] = [Module::Dense, Module::DeepOnet, Module::SetEncoder, Module::Inverse, Module::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Module::Dense => "dense",
            Module::DeepOnet => "deeponet",
            Module::SetEncoder => "set-encoder",
            Module::Inverse => "inverse",
            Module::Attention => "attention",
        }
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Module {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Module::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown module `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub block: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub module: Module,
    pub blocks: Vec<BlockCheck>,
}

impl CheckResult {
    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares the tape gradient of `loss` with central differences on up to
/// [`PER_BLOCK`] randomly chosen entries of every trainable block of `store`.
pub fn check_store(store: &mut ParamStore, loss: impl Fn(&ParamStore) -> (Tape, Var), rng: &mut ChaCha8Rng) -> Vec<BlockCheck> {
    store.zero_grads();
    let (t, l) = loss(store);
    let g = t.backward(l);
    t.accumulate_param_grads(&g, store);
    let eval = |s: &ParamStore| {
        let (t, l) = loss(s);
        t.value(l).data[0]
    };
    let mut out = Vec::new();
    let trainable: Vec<usize> = (0..store.len()).filter(|&id| store.block(id).trainable).collect();
    for id in trainable {
        let n = store.value(id).data.len();
        let picks = sample(rng, n, n.min(PER_BLOCK)).into_vec();
        let mut worst: f64 = 0.0;
        for &k in &picks {
            let analytic = store.grad(id).data[k];
            let orig = store.value(id).data[k];
            store.value_mut(id).data[k] = orig + STEP;
            let up = eval(store);
            store.value_mut(id).data[k] = orig - STEP;
            let down = eval(store);
            store.value_mut(id).data[k] = orig;
            worst = worst.max(relative_error(analytic, (up - down) / (2.0 * STEP)));
        }
        out.push(BlockCheck {
            block: store.block(id).name.clone(),
            checked: picks.len(),
            max_relative_error: worst,
        });
    }
    store.zero_grads();
    out
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Small enough to keep the finite differences quick; every block type is
/// still present.
pub fn check_hyperparams(seed: u64) -> HyperParams {
    HyperParams {
        op_dim: 8,
        num_dim: 4,
        branch_samples: 6,
        trunk_samples: 12,
        hidden: 8,
        trunk_batch: 12,
        corpus_points: 5,
        seed,
        ..HyperParams::default()
    }
}

pub fn gradient_check(module: Module, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = match module {
        Module::Dense => {
            let mut store = ParamStore::new();
            let net = Dense::new(&mut store, "dense", NetSpec::alternating(5, 7, 3, Some(3)), Init::Glorot, &mut rng);
            let x = random_mat(&mut rng, 4, 5, -1.0, 1.0);
            let target = random_mat(&mut rng, 4, 3, -1.0, 1.0);
            check_store(
                &mut store,
                |s| {
                    let mut t = Tape::new();
                    let xv = t.input(x.clone());
                    let y = net.forward(&mut t, s, xv);
                    let l = t.mse(y, &target);
                    (t, l)
                },
                &mut rng,
            )
        }
        _ => {
            let mut model = Model::new(check_hyperparams(seed)).expect("check hyperparameters are valid");
            let hp = model.hp.clone();
            match module {
                Module::DeepOnet => {
                    model.train_only(&["encoder", "decoder", "trunk"]);
                    let samples = random_mat(&mut rng, 3, hp.branch_samples, -1.0, 1.0);
                    let positions = Mat::column(&grid(hp.trunk_samples));
                    let target = random_mat(&mut rng, hp.trunk_samples, 3, -1.0, 1.0);
                    let m = model.clone();
                    check_store(
                        &mut model.store,
                        |s| {
                            let mm = m.with_store(s);
                            let mut t = Tape::new();
                            let y = t.input(positions.clone());
                            let tr = mm.trunk_on(&mut t, y);
                            let sv = t.input(samples.clone());
                            let mut l = None;
                            for kind in OpKind::ALL {
                                let out = mm.deeponet(&mut t, kind, sv, tr);
                                let e = t.mse(out, &target);
                                l = Some(match l {
                                    Some(acc) => t.add(acc, e),
                                    None => e,
                                });
                            }
                            (t, l.expect("eleven kinds"))
                        },
                        &mut rng,
                    )
                }
                Module::SetEncoder | Module::Inverse => {
                    let group = if module == Module::SetEncoder { "setenc" } else { "inverse" };
                    model.train_only(&[group]);
                    let positions: Vec<[f64; 2]> = (0..7).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
                    let values: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    let elements = model.set_elements(&positions, &values);
                    let target = random_mat(&mut rng, 1, hp.op_dim, -1.0, 1.0);
                    let m = model.clone();
                    check_store(
                        &mut model.store,
                        |s| {
                            let mm = m.with_store(s);
                            let mut t = Tape::new();
                            let e = t.input(elements.clone());
                            let n = mm.numerical_on(&mut t, e);
                            let f = mm.invert_on(&mut t, n);
                            let l = t.mse(f, &target);
                            (t, l)
                        },
                        &mut rng,
                    )
                }
                _ => {
                    model.train_only(&["judge"]);
                    let basic = model.basic_features();
                    let target_feat = random_mat(&mut rng, 1, hp.op_dim, -1.0, 1.0);
                    let labels = random_mat(&mut rng, basic.rows, basic.rows, 0.0, 1.0).map(f64::round);
                    let m = model.clone();
                    check_store(
                        &mut model.store,
                        |s| {
                            let mm = m.with_store(s);
                            let mut t = Tape::new();
                            let b = t.input(basic.clone());
                            let x = t.input(target_feat.clone());
                            let logits = mm.judge_on(&mut t, b, x);
                            let l = t.bce_logits(logits, &labels);
                            (t, l)
                        },
                        &mut rng,
                    )
                }
            }
        }
    };
    CheckResult { module, blocks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_names_round_trip() {
        for m in Module::ALL {
            assert_eq!(m.name().parse::<Module>(), Ok(m));
        }
        assert!("lstm".parse::<Module>().is_err());
    }

    #[test]
    fn relative_error_floors_tiny_gradients() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-9, 2e-9) < 1e-4);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
