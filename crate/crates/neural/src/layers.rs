//! Dense stacks of single layers and residual blocks, self-attention and
//! attention pooling.

use rand_chacha::ChaCha8Rng;

use crate::params::{Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Mat, ShapeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// `tanh(x W + b)`.
    Single(usize),
    /// `x + tanh(x W1 + b1) W2 + b2`; keeps the width.
    Residual,
    /// `x W + b`, no activation.
    Linear(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// `singles` single layers of `width` with a residual block after each
    /// but the last, then an optional linear head.
    pub fn alternating(input: usize, width: usize, singles: usize, head: Option<usize>) -> NetSpec {
        let mut layers = Vec::new();
        for i in 0..singles {
            layers.push(LayerSpec::Single(width));
            if i + 1 < singles {
                layers.push(LayerSpec::Residual);
            }
        }
        layers.extend(head.map(LayerSpec::Linear));
        NetSpec { input, layers }
    }

    pub fn output(&self) -> usize {
        self.layers.iter().fold(self.input, |w, l| match l {
            LayerSpec::Single(n) | LayerSpec::Linear(n) => *n,
            LayerSpec::Residual => w,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.input == 0 {
            return Err("input width must be positive".into());
        }
        if self.layers.iter().any(|l| matches!(l, LayerSpec::Single(0) | LayerSpec::Linear(0))) {
            return Err("layer widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Affine { w: usize, b: usize, act: bool },
    Residual { w1: usize, b1: usize, w2: usize, b2: usize },
}

/// A [`NetSpec`] bound to parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub spec: NetSpec,
    layers: Vec<Layer>,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, spec: NetSpec, init: Init, rng: &mut ChaCha8Rng) -> Dense {
        let mut width = spec.input;
        let mut layers = Vec::new();
        for (i, l) in spec.layers.iter().enumerate() {
            let layer = match *l {
                LayerSpec::Single(n) | LayerSpec::Linear(n) => {
                    let w = store.add(format!("{name}.{i}.w"), width, n, init, rng);
                    let b = store.add(format!("{name}.{i}.b"), 1, n, Init::Zero, rng);
                    width = n;
                    Layer::Affine {
                        w,
                        b,
                        act: matches!(l, LayerSpec::Single(_)),
                    }
                }
                LayerSpec::Residual => Layer::Residual {
                    w1: store.add(format!("{name}.{i}.w1"), width, width, init, rng),
                    b1: store.add(format!("{name}.{i}.b1"), 1, width, Init::Zero, rng),
                    w2: store.add(format!("{name}.{i}.w2"), width, width, init, rng),
                    b2: store.add(format!("{name}.{i}.b2"), 1, width, Init::Zero, rng),
                },
            };
            layers.push(layer);
        }
        Dense { spec, layers }
    }

    /// Block ids in creation order.
    pub fn block_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| match *l {
                Layer::Affine { w, b, .. } => vec![w, b],
                Layer::Residual { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
            })
            .collect()
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for l in &self.layers {
            h = match *l {
                Layer::Affine { w, b, act } => {
                    let wv = t.param(store, w);
                    let bv = t.param(store, b);
                    let z = t.matmul(h, wv);
                    let z = t.add_row(z, bv);
                    if act {
                        t.tanh(z)
                    } else {
                        z
                    }
                }
                Layer::Residual { w1, b1, w2, b2 } => {
                    let (w1, b1, w2, b2) = (t.param(store, w1), t.param(store, b1), t.param(store, w2), t.param(store, b2));
                    let z = t.matmul(h, w1);
                    let z = t.add_row(z, b1);
                    let z = t.tanh(z);
                    let z = t.matmul(z, w2);
                    let z = t.add_row(z, b2);
                    t.add(h, z)
                }
            };
        }
        h
    }
}

/// Forward value of `net` on the rows of `input`.
pub fn dense_forward(net: &Dense, store: &ParamStore, input: &Mat) -> Result<Mat, ShapeError> {
    if input.cols != net.spec.input {
        return Err(ShapeError {
            op: "dense_forward",
            left: input.shape(),
            right: (input.rows, net.spec.input),
        });
    }
    let mut t = Tape::new();
    let x = t.input(input.clone());
    let y = net.forward(&mut t, store, x);
    Ok(t.value(y).clone())
}

/// Unmasked single-head self-attention with a residual feed-forward
/// sublayer.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    dim: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ffn: Dense,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Attention {
        Attention {
            dim,
            wq: store.add(format!("{name}.q"), dim, dim, Init::Glorot, rng),
            wk: store.add(format!("{name}.k"), dim, dim, Init::Glorot, rng),
            wv: store.add(format!("{name}.v"), dim, dim, Init::Glorot, rng),
            wo: store.add(format!("{name}.o"), dim, dim, Init::Glorot, rng),
            ffn: Dense::new(
                store,
                &format!("{name}.ffn"),
                NetSpec {
                    input: dim,
                    layers: vec![LayerSpec::Residual],
                },
                Init::Glorot,
                rng,
            ),
        }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let (wq, wk, wv, wo) = (t.param(store, self.wq), t.param(store, self.wk), t.param(store, self.wv), t.param(store, self.wo));
        let q = t.matmul(x, wq);
        let k = t.matmul(x, wk);
        let v = t.matmul(x, wv);
        let kt = t.transpose(k);
        let s = t.matmul(q, kt);
        let s = t.scale(s, 1.0 / (self.dim as f64).sqrt());
        let a = t.softmax_rows(s);
        let z = t.matmul(a, v);
        let z = t.matmul(z, wo);
        let h = t.add(x, z);
        self.ffn.forward(t, store, h)
    }
}

/// Pools a set of rows into one row by attending from a learned seed
/// query. The result does not depend on row order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPool {
    dim: usize,
    seed: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> AttentionPool {
        AttentionPool {
            dim,
            seed: store.add(format!("{name}.seed"), 1, dim, Init::Glorot, rng),
            wq: store.add(format!("{name}.q"), dim, dim, Init::Glorot, rng),
            wk: store.add(format!("{name}.k"), dim, dim, Init::Glorot, rng),
            wv: store.add(format!("{name}.v"), dim, dim, Init::Glorot, rng),
            wo: store.add(format!("{name}.o"), dim, dim, Init::Glorot, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, z: Var) -> Var {
        let s = t.param(store, self.seed);
        let (wq, wk, wv, wo) = (t.param(store, self.wq), t.param(store, self.wk), t.param(store, self.wv), t.param(store, self.wo));
        let q = t.matmul(s, wq);
        let k = t.matmul(z, wk);
        let v = t.matmul(z, wv);
        let kt = t.transpose(k);
        let a = t.matmul(q, kt);
        let a = t.scale(a, 1.0 / (self.dim as f64).sqrt());
        let a = t.softmax_rows(a);
        let p = t.matmul(a, v);
        let p = t.matmul(p, wo);
        t.add(s, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_single_layer_is_activation_of_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Dense::new(&mut store, "z", NetSpec { input: 3, layers: vec![LayerSpec::Single(4)] }, Init::Zero, &mut rng);
        let y = dense_forward(&net, &store, &Mat::row_vector(&[1.0, -2.0, 5.0])).unwrap();
        assert_eq!(y, Mat::zeros(1, 4));
        assert!(dense_forward(&net, &store, &Mat::row_vector(&[1.0])).is_err());
    }

    #[test]
    fn residual_adds_branch_to_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Dense::new(&mut store, "r", NetSpec { input: 2, layers: vec![LayerSpec::Residual] }, Init::Identity, &mut rng);
        let x = [0.3, -0.8];
        let y = dense_forward(&net, &store, &Mat::row_vector(&x)).unwrap();
        for i in 0..2 {
            assert_eq!(y.data[i], x[i] + x[i].tanh());
        }
    }

    #[test]
    fn alternating_layout() {
        let s = NetSpec::alternating(5, 8, 3, Some(2));
        use LayerSpec::*;
        assert_eq!(s.layers, vec![Single(8), Residual, Single(8), Residual, Single(8), Linear(2)]);
        assert_eq!(s.output(), 2);
        assert!(NetSpec::alternating(0, 8, 1, None).validate().is_err());
    }
}
