use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Mat;

/// One named weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub value: Mat,
    pub trainable: bool,
}

/// All parameters of a model plus their gradient and momentum buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<Block>,
    grads: Vec<Mat>,
    velocity: Vec<Mat>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zero,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    /// Identity on the leading square, zero elsewhere.
    Identity,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init, rng: &mut ChaCha8Rng) -> usize {
        let mut value = Mat::zeros(rows, cols);
        match init {
            Init::Zero => {}
            Init::Glorot => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                for v in &mut value.data {
                    *v = rng.gen_range(-a..a);
                }
            }
            Init::Identity => {
                for i in 0..rows.min(cols) {
                    value.data[i * cols + i] = 1.0;
                }
            }
        }
        self.push(Block {
            name: name.into(),
            value,
            trainable: true,
        })
    }

    pub fn push(&mut self, b: Block) -> usize {
        self.grads.push(Mat::zeros(b.value.rows, b.value.cols));
        self.velocity.push(Mat::zeros(b.value.rows, b.value.cols));
        self.blocks.push(b);
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    pub fn value(&self, id: usize) -> &Mat {
        &self.blocks[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.blocks[id].value
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn set_trainable(&mut self, id: usize, on: bool) {
        self.blocks[id].trainable = on;
    }

    /// Marks every block whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, on: bool) {
        for b in &mut self.blocks {
            if b.name.starts_with(prefix) {
                b.trainable = on;
            }
        }
    }

    pub fn set_all_trainable(&mut self, on: bool) {
        for b in &mut self.blocks {
            b.trainable = on;
        }
    }

    pub fn grad(&self, id: usize) -> &Mat {
        &self.grads[id]
    }

    pub(crate) fn add_grad(&mut self, id: usize, g: &Mat) {
        if self.blocks[id].trainable {
            self.grads[id].add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data.fill(0.0);
        }
    }

    /// Heavy-ball step `v = momentum v - lr g; w += v`, then clears the
    /// gradients. Frozen blocks keep their values.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        for ((b, g), v) in self.blocks.iter_mut().zip(&mut self.grads).zip(&mut self.velocity) {
            if b.trainable {
                for ((w, gi), vi) in b.value.data.iter_mut().zip(&g.data).zip(&mut v.data) {
                    *vi = momentum * *vi - lr * gi;
                    *w += *vi;
                }
            }
            g.data.fill(0.0);
        }
    }

    /// Rescales the trainable gradients so their joint norm is at most
    /// `max`. Returns the norm before scaling.
    pub fn clip_grad_norm(&mut self, max: f64) -> f64 {
        let norm = self
            .blocks
            .iter()
            .zip(&self.grads)
            .filter(|(b, _)| b.trainable)
            .flat_map(|(_, g)| &g.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if max > 0.0 && norm > max {
            let s = max / norm;
            for g in &mut self.grads {
                for v in &mut g.data {
                    *v *= s;
                }
            }
        }
        norm
    }

    /// Clears momentum, as at the start of a new training stage.
    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.data.fill(0.0);
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.trainable).map(|b| b.value.data.len()).sum()
    }
}
