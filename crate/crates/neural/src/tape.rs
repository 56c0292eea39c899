//! Reverse-mode differentiation over whole matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and returns the adjoint of each one.

use crate::params::ParamStore;
use crate::tensor::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    /// `n x c` plus a `1 x c` row broadcast down the rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    Sum(Var),
    Mse(Var, Mat),
    BceLogits(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints from one backward pass, indexed by [`Var`].
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).data.clone();
        let mut v = self.value(a).clone();
        for chunk in v.data.chunks_mut(r.len()) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for row in v.data.chunks_mut(v.cols.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let m = self.value(p);
                debug_assert_eq!(m.rows, rows);
                v.data[r * cols + c0..r * cols + c0 + m.cols].copy_from_slice(m.row(r));
                c0 += m.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            debug_assert_eq!(self.value(p).cols, cols);
            data.extend_from_slice(&self.value(p).data);
        }
        let v = Mat::from_vec(data.len() / cols.max(1), cols, data);
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        let v = Mat::from_vec(len, m.cols, m.data[start * m.cols..(start + len) * m.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = Mat::zeros(1, m.cols);
        for r in 0..m.rows {
            for (o, x) in v.data.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let n = m.rows as f64;
        let v = v.map(|x| x / n);
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push(v, Op::Sum(a))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: &Mat) -> Var {
        let m = self.value(a);
        assert_eq!(m.shape(), target.shape(), "mse target shape");
        let n = m.data.len() as f64;
        let l = m.data.iter().zip(&target.data).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        self.push(Mat::from_vec(1, 1, vec![l]), Op::Mse(a, target.clone()))
    }

    /// Mean binary cross-entropy of logits against 0/1 targets.
    pub fn bce_logits(&mut self, a: Var, target: &Mat) -> Var {
        let m = self.value(a);
        assert_eq!(m.shape(), target.shape(), "bce target shape");
        let n = m.data.len() as f64;
        // log(1 + e^x) - t x, written to stay finite for large |x|
        let l = m
            .data
            .iter()
            .zip(&target.data)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Mat::from_vec(1, 1, vec![l]), Op::BceLogits(a, target.clone()))
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut g: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let seed = self.value(loss);
        assert_eq!(seed.shape(), (1, 1), "backward needs a scalar");
        g[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(up) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = up.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&up);
                    accumulate(&mut g[a.0], ga);
                    accumulate(&mut g[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[a.0], up.clone());
                    accumulate(&mut g[b.0], up.clone());
                }
                Op::AddRow(a, r) => {
                    let mut gr = Mat::zeros(1, up.cols);
                    for row in up.data.chunks(up.cols) {
                        for (o, x) in gr.data.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(&mut g[a.0], up.clone());
                    accumulate(&mut g[r.0], gr);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = Mat::from_vec(up.rows, up.cols, up.data.iter().zip(&y.data).map(|(u, q)| u * q).collect());
                    let gb = Mat::from_vec(up.rows, up.cols, up.data.iter().zip(&x.data).map(|(u, p)| u * p).collect());
                    accumulate(&mut g[a.0], ga);
                    accumulate(&mut g[b.0], gb);
                }
                Op::Tanh(a) => {
                    let data = up.data.iter().zip(&node.value.data).map(|(u, y)| u * (1.0 - y * y)).collect();
                    accumulate(&mut g[a.0], Mat::from_vec(up.rows, up.cols, data));
                }
                Op::Sigmoid(a) => {
                    let data = up.data.iter().zip(&node.value.data).map(|(u, y)| u * y * (1.0 - y)).collect();
                    accumulate(&mut g[a.0], Mat::from_vec(up.rows, up.cols, data));
                }
                Op::Scale(a, s) => accumulate(&mut g[a.0], up.map(|x| x * s)),
                Op::Transpose(a) => accumulate(&mut g[a.0], up.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, ur) = (y.row(r), up.row(r));
                        let dot: f64 = yr.iter().zip(ur).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols {
                            ga.data[r * y.cols + c] = yr[c] * (ur[c] - dot);
                        }
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let mut gp = Mat::zeros(up.rows, cols);
                        for r in 0..up.rows {
                            gp.data[r * cols..(r + 1) * cols].copy_from_slice(&up.row(r)[c0..c0 + cols]);
                        }
                        accumulate(&mut g[p.0], gp);
                        c0 += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let gp = Mat::from_vec(rows, up.cols, up.data[r0 * up.cols..(r0 + rows) * up.cols].to_vec());
                        accumulate(&mut g[p.0], gp);
                        r0 += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    ga.data[start * src.cols..start * src.cols + up.data.len()].copy_from_slice(&up.data);
                    accumulate(&mut g[a.0], ga);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let n = src.rows as f64;
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    for row in ga.data.chunks_mut(src.cols) {
                        for (o, u) in row.iter_mut().zip(&up.data) {
                            *o = u / n;
                        }
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    let u = up.data[0];
                    accumulate(&mut g[a.0], Mat::from_vec(src.rows, src.cols, vec![u; src.data.len()]));
                }
                Op::Mse(a, t) => {
                    let p = self.value(*a);
                    let k = 2.0 * up.data[0] / p.data.len() as f64;
                    let data = p.data.iter().zip(&t.data).map(|(x, y)| k * (x - y)).collect();
                    accumulate(&mut g[a.0], Mat::from_vec(p.rows, p.cols, data));
                }
                Op::BceLogits(a, t) => {
                    let p = self.value(*a);
                    let k = up.data[0] / p.data.len() as f64;
                    let data = p.data.iter().zip(&t.data).map(|(&x, y)| k * (sigmoid(x) - y)).collect();
                    accumulate(&mut g[a.0], Mat::from_vec(p.rows, p.cols, data));
                }
            }
            g[i] = Some(up);
        }
        Grads(g)
    }

    /// Adds the adjoint of every trainable parameter node into `store`'s
    /// gradient buffers. Frozen blocks are left untouched.
    pub fn accumulate_param_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.0[i]) {
                store.add_grad(*id, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` at `x` against the tape adjoint.
    fn check(x: Mat, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let out = f(&mut t, xv);
        let grads = t.backward(out);
        let g = grads.get(xv).cloned().unwrap_or(Mat::zeros(x.rows, x.cols));
        let h = 1e-6;
        for i in 0..x.data.len() {
            let eval = |d: f64| {
                let mut y = x.clone();
                y.data[i] += d;
                let mut t = Tape::new();
                let v = t.input(y);
                let o = f(&mut t, v);
                t.value(o).data[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g.data[i]).abs() < 1e-6 * (1.0 + fd.abs()), "entry {i}: {fd} vs {}", g.data[i]);
        }
    }

    fn sample() -> Mat {
        Mat::from_vec(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9])
    }

    #[test]
    fn elementwise_ops() {
        check(sample(), |t, x| {
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.mul(a, b);
            let d = t.scale(c, 1.7);
            t.sum(d)
        });
    }

    #[test]
    fn products_and_broadcast() {
        check(sample(), |t, x| {
            let xt = t.transpose(x);
            let p = t.matmul(x, xt);
            let s = t.softmax_rows(p);
            let r = t.mean_rows(x);
            let q = t.matmul(s, x);
            let q = t.add_row(q, r);
            let q = t.add(q, x);
            t.sum(q)
        });
    }

    #[test]
    fn structural_ops_and_losses() {
        let target = Mat::from_vec(2, 4, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        check(sample(), |t, x| {
            let a = t.slice_rows(x, 1, 2);
            let b = t.tanh(a);
            let c = t.concat_cols(&[a, b]);
            let l1 = t.bce_logits(c, &target);
            let d = t.concat_rows(&[x, a]);
            let l2 = t.mse(d, &Mat::zeros(5, 2));
            let l = t.concat_cols(&[l1, l2]);
            t.sum(l)
        });
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let mut t = Tape::new();
        let x = t.input(Mat::from_vec(1, 2, vec![800.0, -800.0]));
        let l = t.bce_logits(x, &Mat::from_vec(1, 2, vec![1.0, 0.0]));
        assert_eq!(t.value(l).data[0], 0.0);
    }
}
