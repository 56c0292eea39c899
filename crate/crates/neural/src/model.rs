//! The operator networks: per-kind branch encoders with a shared decoder
//! and a trunk (forward path), and a set encoder, inverse decoder and
//! judgment head (backward path).

use opfeat_core::expr::OpKind;
use opfeat_core::graph::{AdjacencyMatrix, Node, NODE_COUNT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{Attention, AttentionPool, Dense, LayerSpec, NetSpec};
use crate::params::{Block, Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Mat, ShapeError};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Operator feature length.
    pub op_dim: usize,
    /// Numerical feature length.
    pub num_dim: usize,
    /// Function samples fed to a branch encoder.
    pub branch_samples: usize,
    /// Trunk evaluation positions per function.
    pub trunk_samples: usize,
    /// Hidden width of every dense stack.
    pub hidden: usize,
    /// Single layers per dense stack; residual blocks sit between them.
    pub depth: usize,
    /// Parallel maps in the shared decoder.
    pub decoder_maps: usize,
    pub attention_layers: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Gradient norm cap per update; 0 disables clipping.
    pub clip: f64,
    pub forward_steps: usize,
    /// Functions drawn per kind per forward step.
    pub batch: usize,
    /// Trunk positions drawn per forward step.
    pub trunk_batch: usize,
    pub inverse_steps: usize,
    pub inverse_learning_rate: f64,
    pub judgment_epochs: usize,
    pub judgment_learning_rate: f64,
    pub corpus_size: usize,
    pub corpus_points: usize,
    pub corpus_depth: usize,
    /// Edge probability strictly above this becomes an edge.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            op_dim: 32,
            num_dim: 16,
            branch_samples: 64,
            trunk_samples: 256,
            hidden: 32,
            depth: 2,
            decoder_maps: 4,
            attention_layers: 3,
            learning_rate: 0.01,
            momentum: 0.9,
            clip: 1.0,
            forward_steps: 6000,
            batch: 8,
            trunk_batch: 64,
            inverse_steps: 2000,
            inverse_learning_rate: 0.1,
            judgment_epochs: 1500,
            judgment_learning_rate: 0.01,
            corpus_size: 50,
            corpus_points: 64,
            corpus_depth: 4,
            threshold: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("empty sample set")]
    EmptySet,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("op_dim", self.op_dim),
            ("num_dim", self.num_dim),
            ("branch_samples", self.branch_samples),
            ("trunk_samples", self.trunk_samples),
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("decoder_maps", self.decoder_maps),
            ("attention_layers", self.attention_layers),
            ("trunk_batch", self.trunk_batch),
            ("batch", self.batch),
            ("corpus_points", self.corpus_points),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Hyper(format!("{name} must be positive")));
        }
        if self.trunk_batch > self.trunk_samples {
            return Err(ModelError::Hyper("trunk_batch exceeds trunk_samples".into()));
        }
        if !(self.learning_rate > 0.0 && self.inverse_learning_rate > 0.0 && self.judgment_learning_rate > 0.0) {
            return Err(ModelError::Hyper("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::Hyper("momentum must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ModelError::Hyper("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Input range and fixed constant each kind is trained on.
pub fn kind_range(kind: OpKind) -> (f64, f64) {
    match kind {
        OpKind::Inv => (0.5, 2.0),
        OpKind::Sin | OpKind::Cos => (-3.0, 3.0),
        OpKind::Exp => (-2.0, 1.5),
        OpKind::FracPow => (0.1, 2.0),
        OpKind::Log => (0.1, 3.0),
        _ => (-2.0, 2.0),
    }
}

/// The kind applied to input `u` at position `y`. Binary kinds take the
/// position itself as their second operand.
pub fn apply_kind(kind: OpKind, u: f64, y: f64) -> f64 {
    match kind {
        OpKind::Add => u + y,
        OpKind::Mul => u * y,
        OpKind::Inv => 1.0 / u,
        OpKind::Sin => u.sin(),
        OpKind::Cos => u.cos(),
        OpKind::Exp => u.exp(),
        OpKind::Pow => u * u,
        OpKind::FracPow => u.sqrt(),
        OpKind::Log => u.ln(),
        OpKind::AddConst => u + 1.0,
        OpKind::MulConst => 2.0 * u,
    }
}

/// `n` evenly spaced points on `[-1, 1]`.
pub fn grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

fn kind_slot(kind: OpKind) -> usize {
    kind as usize - 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepOnetTrace {
    pub branch: Vec<f64>,
    /// One positional feature row per position.
    pub trunk: Mat,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub hp: HyperParams,
    pub store: ParamStore,
    encoders: Vec<Dense>,
    decoder_maps: Vec<Dense>,
    decoder_head: Dense,
    trunk: Dense,
    element: Dense,
    pool: AttentionPool,
    pool_head: Dense,
    inverse: Dense,
    judge: Vec<Attention>,
    edge_q: usize,
    edge_k: usize,
    edge_bias: usize,
    var_features: [usize; 2],
}

impl Model {
    pub fn new(hp: HyperParams) -> Result<Model, ModelError> {
        Model::with_init(hp, Init::Glorot)
    }

    pub fn with_init(hp: HyperParams, init: Init) -> Result<Model, ModelError> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut store = ParamStore::new();
        let (d, w, p) = (hp.op_dim, hp.hidden, hp.op_dim);
        let encoders = OpKind::ALL
            .iter()
            .map(|k| {
                let spec = NetSpec::alternating(hp.branch_samples, w, hp.depth, None);
                let mut spec = spec;
                spec.layers.push(LayerSpec::Single(d));
                Dense::new(&mut store, &format!("encoder.{}", k.label()), spec, init, &mut rng)
            })
            .collect();
        let decoder_maps = (0..hp.decoder_maps)
            .map(|j| {
                let spec = NetSpec {
                    input: d,
                    layers: vec![LayerSpec::Single(w)],
                };
                Dense::new(&mut store, &format!("decoder.map{j}"), spec, init, &mut rng)
            })
            .collect();
        let decoder_head = Dense::new(
            &mut store,
            "decoder.head",
            NetSpec {
                input: w,
                layers: vec![LayerSpec::Residual, LayerSpec::Linear(p)],
            },
            init,
            &mut rng,
        );
        let trunk = Dense::new(&mut store, "trunk", NetSpec::alternating(1, w, hp.depth, Some(p)), init, &mut rng);
        let element = Dense::new(&mut store, "setenc.element", NetSpec::alternating(2 * p + 1, w, hp.depth, None), init, &mut rng);
        let pool = AttentionPool::new(&mut store, "setenc.pool", w, &mut rng);
        let pool_head = Dense::new(
            &mut store,
            "setenc.head",
            NetSpec {
                input: w,
                layers: vec![LayerSpec::Linear(hp.num_dim)],
            },
            init,
            &mut rng,
        );
        let mut inv_spec = NetSpec::alternating(hp.num_dim, w, hp.depth, None);
        inv_spec.layers.push(LayerSpec::Single(d));
        let inverse = Dense::new(&mut store, "inverse", inv_spec, init, &mut rng);
        let judge = (0..hp.attention_layers)
            .map(|i| Attention::new(&mut store, &format!("judge.att{i}"), d, &mut rng))
            .collect();
        let edge_q = store.add("judge.edge_q", d, d, Init::Glorot, &mut rng);
        let edge_k = store.add("judge.edge_k", d, d, Init::Glorot, &mut rng);
        let edge_bias = store.add("judge.edge_bias", NODE_COUNT, NODE_COUNT, Init::Zero, &mut rng);
        // fixed, distinct stand-ins for the two variable kinds
        let var_features = [0usize, 1].map(|v| {
            let data = (0..d).map(|i| 0.5 * ((i + 1) as f64 * (v as f64 + 1.3)).cos()).collect();
            store.push(Block {
                name: format!("basic.x_{}", v + 1),
                value: Mat::from_vec(1, d, data),
                trainable: false,
            })
        });
        Ok(Model {
            hp,
            store,
            encoders,
            decoder_maps,
            decoder_head,
            trunk,
            element,
            pool,
            pool_head,
            inverse,
            judge,
            edge_q,
            edge_k,
            edge_bias,
            var_features,
        })
    }

    /// Makes exactly the groups named in `groups` trainable.
    pub fn train_only(&mut self, groups: &[&str]) {
        self.store.set_all_trainable(false);
        for g in groups {
            self.store.set_trainable_prefix(g, true);
        }
    }

    pub(crate) fn encode_op(&self, t: &mut Tape, kind: OpKind, samples: Var) -> Var {
        self.encoders[kind_slot(kind)].forward(t, &self.store, samples)
    }

    /// Shared decoder: the parallel maps are summed, then a residual head.
    pub(crate) fn decode(&self, t: &mut Tape, feature: Var) -> Var {
        let mut acc = None;
        for m in &self.decoder_maps {
            let h = m.forward(t, &self.store, feature);
            acc = Some(match acc {
                None => h,
                Some(a) => t.add(a, h),
            });
        }
        self.decoder_head.forward(t, &self.store, acc.expect("decoder_maps > 0"))
    }

    /// Trunk features of a column of positions.
    pub(crate) fn trunk_on(&self, t: &mut Tape, positions: Var) -> Var {
        self.trunk.forward(t, &self.store, positions)
    }

    /// `<branch, trunk_i>` for every position row.
    pub(crate) fn deeponet(&self, t: &mut Tape, kind: OpKind, samples: Var, trunk: Var) -> Var {
        let f = self.encode_op(t, kind, samples);
        let b = self.decode(t, f);
        let bt = t.transpose(b);
        t.matmul(trunk, bt)
    }

    fn check_samples(&self, fn_samples: &[f64]) -> Result<(), ModelError> {
        if fn_samples.len() != self.hp.branch_samples {
            return Err(ShapeError {
                op: "branch samples",
                left: (1, fn_samples.len()),
                right: (1, self.hp.branch_samples),
            }
            .into());
        }
        Ok(())
    }

    pub fn deeponet_forward(&self, kind: OpKind, fn_samples: &[f64], positions: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.deeponet_trace(kind, fn_samples, positions)?.output)
    }

    /// [`Model::deeponet_forward`] together with the intermediate branch
    /// and trunk values.
    pub fn deeponet_trace(&self, kind: OpKind, fn_samples: &[f64], positions: &[f64]) -> Result<DeepOnetTrace, ModelError> {
        self.check_samples(fn_samples)?;
        let mut t = Tape::new();
        let s = t.input(Mat::row_vector(fn_samples));
        let y = t.input(Mat::column(positions));
        let tr = self.trunk_on(&mut t, y);
        let f = self.encode_op(&mut t, kind, s);
        let b = self.decode(&mut t, f);
        let bt = t.transpose(b);
        let out = t.matmul(tr, bt);
        Ok(DeepOnetTrace {
            branch: t.value(b).data.clone(),
            trunk: t.value(tr).clone(),
            output: t.value(out).data.clone(),
        })
    }

    /// Branch output after the shared decoder.
    pub fn branch_vector(&self, kind: OpKind, fn_samples: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_samples(fn_samples)?;
        let mut t = Tape::new();
        let s = t.input(Mat::row_vector(fn_samples));
        let f = self.encode_op(&mut t, kind, s);
        let b = self.decode(&mut t, f);
        Ok(t.value(b).data.clone())
    }

    /// Positional features, one row per position.
    pub fn trunk_features(&self, positions: &[f64]) -> Mat {
        let mut t = Tape::new();
        let y = t.input(Mat::column(positions));
        let tr = self.trunk_on(&mut t, y);
        t.value(tr).clone()
    }

    pub fn extract_operator_feature(&self, kind: OpKind, fn_samples: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_samples(fn_samples)?;
        let mut t = Tape::new();
        let s = t.input(Mat::row_vector(fn_samples));
        let f = self.encode_op(&mut t, kind, s);
        Ok(t.value(f).data.clone())
    }

    /// Samples of the identity ramp over `kind`'s range at the branch
    /// sensors; the input the basic features are read from.
    pub fn reference_samples(&self, kind: OpKind) -> Vec<f64> {
        let (lo, hi) = kind_range(kind);
        grid(self.hp.branch_samples)
            .into_iter()
            .map(|x| lo + (hi - lo) * (x + 1.0) / 2.0)
            .collect()
    }

    /// One feature row per graph node: operator kinds read through their
    /// encoders, variables from fixed vectors.
    pub fn basic_features(&self) -> Mat {
        let mut rows = Vec::with_capacity(NODE_COUNT * self.hp.op_dim);
        for node in Node::all() {
            match node {
                Node::Op(k) => rows.extend(
                    self.extract_operator_feature(k, &self.reference_samples(k))
                        .expect("reference samples have branch length"),
                ),
                Node::Var(v) => rows.extend_from_slice(&self.store.value(self.var_features[v as usize - 1]).data),
            }
        }
        Mat::from_vec(NODE_COUNT, self.hp.op_dim, rows)
    }

    /// Per-point set-encoder input: trunk features of both coordinates
    /// followed by the squashed value.
    pub fn set_elements(&self, positions: &[[f64; 2]], values: &[f64]) -> Mat {
        let x1: Vec<f64> = positions.iter().map(|p| p[0]).collect();
        let x2: Vec<f64> = positions.iter().map(|p| p[1]).collect();
        let (t1, t2) = (self.trunk_features(&x1), self.trunk_features(&x2));
        let p = self.hp.op_dim;
        let mut m = Mat::zeros(values.len(), 2 * p + 1);
        for i in 0..values.len() {
            let row = &mut m.data[i * (2 * p + 1)..(i + 1) * (2 * p + 1)];
            row[..p].copy_from_slice(t1.row(i));
            row[p..2 * p].copy_from_slice(t2.row(i));
            row[2 * p] = values[i].asinh();
        }
        m
    }

    pub(crate) fn numerical_on(&self, t: &mut Tape, elements: Var) -> Var {
        let z = self.element.forward(t, &self.store, elements);
        let pooled = self.pool.forward(t, &self.store, z);
        self.pool_head.forward(t, &self.store, pooled)
    }

    pub(crate) fn invert_on(&self, t: &mut Tape, numfeat: Var) -> Var {
        self.inverse.forward(t, &self.store, numfeat)
    }

    /// Edge logits for a target feature row against the basic features.
    pub(crate) fn judge_on(&self, t: &mut Tape, basic: Var, target: Var) -> Var {
        let mut h = t.concat_rows(&[basic, target]);
        for layer in &self.judge {
            h = layer.forward(t, &self.store, h);
        }
        let nodes = t.slice_rows(h, 0, NODE_COUNT);
        let (wq, wk, b) = (
            t.param(&self.store, self.edge_q),
            t.param(&self.store, self.edge_k),
            t.param(&self.store, self.edge_bias),
        );
        let q = t.matmul(nodes, wq);
        let k = t.matmul(nodes, wk);
        let kt = t.transpose(k);
        let s = t.matmul(q, kt);
        let s = t.scale(s, 1.0 / (self.hp.op_dim as f64).sqrt());
        t.add(s, b)
    }

    pub fn numerical_decode(&self, positions: &[[f64; 2]], values: &[f64]) -> Result<Vec<f64>, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptySet);
        }
        if positions.len() != values.len() {
            return Err(ShapeError {
                op: "numerical_decode",
                left: (positions.len(), 2),
                right: (values.len(), 1),
            }
            .into());
        }
        let mut t = Tape::new();
        let e = t.input(self.set_elements(positions, values));
        let n = self.numerical_on(&mut t, e);
        Ok(t.value(n).data.clone())
    }

    pub fn invert_feature(&self, numfeat: &[f64]) -> Result<Vec<f64>, ModelError> {
        if numfeat.len() != self.hp.num_dim {
            return Err(ShapeError {
                op: "invert_feature",
                left: (1, numfeat.len()),
                right: (1, self.hp.num_dim),
            }
            .into());
        }
        let mut t = Tape::new();
        let x = t.input(Mat::row_vector(numfeat));
        let y = self.invert_on(&mut t, x);
        Ok(t.value(y).data.clone())
    }

    /// Edge probabilities, `NODE_COUNT x NODE_COUNT`.
    pub fn judge_adjacency(&self, basic: &Mat, target: &[f64]) -> Result<Mat, ModelError> {
        let d = self.hp.op_dim;
        if basic.shape() != (NODE_COUNT, d) || target.len() != d {
            return Err(ShapeError {
                op: "judge_adjacency",
                left: basic.shape(),
                right: (1, target.len()),
            }
            .into());
        }
        let mut t = Tape::new();
        let b = t.input(basic.clone());
        let x = t.input(Mat::row_vector(target));
        let logits = self.judge_on(&mut t, b, x);
        let p = t.sigmoid(logits);
        Ok(t.value(p).clone())
    }

    /// Edges whose probability is strictly above the threshold.
    pub fn binarize(&self, probs: &Mat) -> AdjacencyMatrix {
        let mut m = AdjacencyMatrix::new();
        for r in 0..NODE_COUNT {
            for c in 0..NODE_COUNT {
                if probs.get(r, c) > self.hp.threshold {
                    m.set_index(r, c, true);
                }
            }
        }
        m
    }

    /// The whole backward path: data to predicted matrix.
    pub fn predict_matrix(&self, positions: &[[f64; 2]], values: &[f64]) -> Result<AdjacencyMatrix, ModelError> {
        let num = self.numerical_decode(positions, values)?;
        let target = self.invert_feature(&num)?;
        let probs = self.judge_adjacency(&self.basic_features(), &target)?;
        Ok(self.binarize(&probs))
    }

    pub(crate) fn with_store(&self, store: &ParamStore) -> Model {
        Model {
            store: store.clone(),
            ..self.clone()
        }
    }

    pub(crate) fn from_parts(hp: HyperParams, store: ParamStore) -> Result<Model, ModelError> {
        let mut m = Model::with_init(hp, Init::Zero)?;
        if m.store.len() != store.len()
            || m.store
                .blocks()
                .iter()
                .zip(store.blocks())
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(ModelError::Hyper("checkpoint blocks do not match the hyperparameters".into()));
        }
        m.store = store;
        Ok(m)
    }
}
