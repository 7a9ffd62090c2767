//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] then walks
//! the record in reverse accumulating gradients. All training objectives are
//! built from these primitives so analytic gradients can be validated against
//! central finite differences.

use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Node(pub usize);

enum Op {
    Leaf,
    Add(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    /// a [m x n] + b [1 x n], b added to every row
    AddRowBroadcast(Node, Node),
    /// a [m x n] * b [1 x n], b multiplied into every row
    MulRowBroadcast(Node, Node),
    Scale(Node, f64),
    AddScalar(Node),
    Matmul(Node, Node),
    Transpose(Node),
    Tanh(Node),
    Gelu(Node),
    LeakyRelu(Node, f64),
    Sigmoid(Node),
    Ln(Node),
    Sqrt(Node),
    Clamp(Node, f64, f64),
    SoftmaxRows(Node),
    LayerNormRows(Node, f64),
    L2NormalizeRows(Node),
    MeanRows(Node),
    SumAll(Node),
    ConcatCols(Vec<Node>),
    ConcatRows(Vec<Node>),
    GatherCols(Node, Vec<usize>),
    LogSumExpRows(Node),
    MulScalarNode(Node, Node),
    DivScalarNode(Node, Node),
    RepeatRows(Node, usize),
    Im2ColSame(Node, usize, usize),
    /// elementwise product with a constant mask (dropout)
    MaskMul(Node, Tensor),
    /// zero-pad or truncate columns to a fixed width
    ResizeCols(Node, usize),
    /// same data, new shape
    Reshape(Node),
    /// a [m x n] * b [m x 1], b multiplied into every column
    MulColBroadcast(Node, Node),
}

struct NodeData {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<NodeData>,
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: Node) -> &Tensor {
        &self.nodes[n.0].value
    }

    pub fn grad(&self, n: Node) -> &Tensor {
        &self.nodes[n.0].grad
    }

    pub fn scalar_value(&self, n: Node) -> f64 {
        debug_assert_eq!(self.nodes[n.0].value.len(), 1);
        self.nodes[n.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Node {
        let grad = Tensor::zeros(value.rows, value.cols);
        self.nodes.push(NodeData { value, grad, op });
        Node(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Node {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Node {
        // identical to leaf; named for call-site clarity
        self.push(t, Op::Leaf)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape());
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape());
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::Mul(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: Node, b: Node) -> Node {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(vb.rows, 1);
        assert_eq!(va.cols, vb.cols);
        let mut out = va.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] += vb.data[j];
            }
        }
        self.push(out, Op::AddRowBroadcast(a, b))
    }

    pub fn mul_row_broadcast(&mut self, a: Node, b: Node) -> Node {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(vb.rows, 1);
        assert_eq!(va.cols, vb.cols);
        let mut out = va.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] *= vb.data[j];
            }
        }
        self.push(out, Op::MulRowBroadcast(a, b))
    }

    pub fn scale(&mut self, a: Node, c: f64) -> Node {
        let va = self.value(a);
        let data = va.data.iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Node, c: f64) -> Node {
        let va = self.value(a);
        let data = va.data.iter().map(|x| x + c).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Node, b: Node) -> Node {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: Node) -> Node {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, a: Node, f: F, op: Op) -> Node {
        let va = self.value(a);
        let data = va.data.iter().map(|&x| f(x)).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, op)
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Node) -> Node {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn leaky_relu(&mut self, a: Node, slope: f64) -> Node {
        self.unary(a, |x| if x >= 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Node) -> Node {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn ln(&mut self, a: Node) -> Node {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Node) -> Node {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: Node, lo: f64, hi: f64) -> Node {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Node) -> Node {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows, va.cols);
        for i in 0..va.rows {
            let row = va.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..va.cols {
                let e = (row[j] - m).exp();
                out.data[i * va.cols + j] = e;
                s += e;
            }
            for j in 0..va.cols {
                out.data[i * va.cols + j] /= s;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn layer_norm_rows(&mut self, a: Node, eps: f64) -> Node {
        let va = self.value(a);
        let n = va.cols as f64;
        let mut out = Tensor::zeros(va.rows, va.cols);
        for i in 0..va.rows {
            let row = va.row(i);
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..va.cols {
                out.data[i * va.cols + j] = (row[j] - mu) * inv;
            }
        }
        self.push(out, Op::LayerNormRows(a, eps))
    }

    pub fn l2_normalize_rows(&mut self, a: Node) -> Node {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows, va.cols);
        for i in 0..va.rows {
            let row = va.row(i);
            let r = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            for j in 0..va.cols {
                out.data[i * va.cols + j] = row[j] / r;
            }
        }
        self.push(out, Op::L2NormalizeRows(a))
    }

    pub fn mean_rows(&mut self, a: Node) -> Node {
        let va = self.value(a);
        let m = va.rows as f64;
        let mut out = Tensor::zeros(1, va.cols);
        for i in 0..va.rows {
            for j in 0..va.cols {
                out.data[j] += va.data[i * va.cols + j] / m;
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Node) -> Node {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn concat_cols(&mut self, parts: &[Node]) -> Node {
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows, rows);
            for i in 0..rows {
                for j in 0..v.cols {
                    out.data[i * total + off + j] = v.data[i * v.cols + j];
                }
            }
            off += v.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Node]) -> Node {
        let cols = self.value(parts[0]).cols;
        let total: usize = parts.iter().map(|&p| self.value(p).rows).sum();
        let mut out = Tensor::zeros(total, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols);
            out.data[off * cols..(off + v.rows) * cols].copy_from_slice(&v.data);
            off += v.rows;
        }
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// out[i, 0] = a[i, idx[i]]
    pub fn gather_cols(&mut self, a: Node, idx: &[usize]) -> Node {
        let va = self.value(a);
        assert_eq!(idx.len(), va.rows);
        let mut out = Tensor::zeros(va.rows, 1);
        for (i, &j) in idx.iter().enumerate() {
            out.data[i] = va.at(i, j);
        }
        self.push(out, Op::GatherCols(a, idx.to_vec()))
    }

    pub fn logsumexp_rows(&mut self, a: Node) -> Node {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows, 1);
        for i in 0..va.rows {
            let row = va.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
            out.data[i] = m + s.ln();
        }
        self.push(out, Op::LogSumExpRows(a))
    }

    pub fn mul_scalar_node(&mut self, a: Node, s: Node) -> Node {
        let sv = self.scalar_value(s);
        let va = self.value(a);
        let data = va.data.iter().map(|x| x * sv).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::MulScalarNode(a, s))
    }

    pub fn div_scalar_node(&mut self, a: Node, s: Node) -> Node {
        let sv = self.scalar_value(s);
        let va = self.value(a);
        let data = va.data.iter().map(|x| x / sv).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::DivScalarNode(a, s))
    }

    pub fn repeat_rows(&mut self, a: Node, times: usize) -> Node {
        let va = self.value(a);
        assert_eq!(va.rows, 1);
        let mut out = Tensor::zeros(times, va.cols);
        for t in 0..times {
            out.data[t * va.cols..(t + 1) * va.cols].copy_from_slice(&va.data);
        }
        self.push(out, Op::RepeatRows(a, times))
    }

    /// "same"-padded sliding windows over rows: input [T x C] becomes
    /// [T_out x k*C] with pad (k-1)/2 and the given stride.
    pub fn im2col_same(&mut self, a: Node, k: usize, stride: usize) -> Node {
        assert!(k % 2 == 1, "odd kernel only");
        let va = self.value(a);
        let (t_in, c) = va.shape();
        let pad = (k - 1) / 2;
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(t_out, k * c);
        for t in 0..t_out {
            for tap in 0..k {
                let src = (t * stride + tap) as isize - pad as isize;
                if src < 0 || src as usize >= t_in {
                    continue;
                }
                let src = src as usize;
                out.data[t * k * c + tap * c..t * k * c + (tap + 1) * c]
                    .copy_from_slice(va.row(src));
            }
        }
        self.push(out, Op::Im2ColSame(a, k, stride))
    }

    pub fn mask_mul(&mut self, a: Node, mask: Tensor) -> Node {
        let va = self.value(a);
        assert_eq!(va.shape(), mask.shape());
        let data = va.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        self.push(t, Op::MaskMul(a, mask))
    }

    pub fn resize_cols(&mut self, a: Node, new_cols: usize) -> Node {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows, new_cols);
        let copy = va.cols.min(new_cols);
        for i in 0..va.rows {
            for j in 0..copy {
                out.data[i * new_cols + j] = va.at(i, j);
            }
        }
        self.push(out, Op::ResizeCols(a, new_cols))
    }

    pub fn reshape(&mut self, a: Node, rows: usize, cols: usize) -> Node {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape size");
        let t = Tensor::from_vec(rows, cols, va.data.clone());
        self.push(t, Op::Reshape(a))
    }

    pub fn mul_col_broadcast(&mut self, a: Node, b: Node) -> Node {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(vb.cols, 1);
        assert_eq!(va.rows, vb.rows);
        let mut out = va.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] *= vb.data[i];
            }
        }
        self.push(out, Op::MulColBroadcast(a, b))
    }

    /// Backpropagate from a scalar node, seeding its gradient with 1.
    pub fn backward(&mut self, root: Node) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        for nd in self.nodes.iter_mut() {
            nd.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad.data[0] = 1.0;
        for i in (0..=root.0).rev() {
            self.backward_node(i);
        }
    }

    fn backward_node(&mut self, i: usize) {
        // take the grad out to appease the borrow checker
        let g = std::mem::replace(&mut self.nodes[i].grad, Tensor::zeros(0, 0));
        if g.data.iter().all(|&x| x == 0.0) {
            self.nodes[i].grad = g;
            return;
        }
        // moving the op out temporarily avoids aliasing self.nodes
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(*a, &g.data, |_, d| d);
                self.accum(*b, &g.data, |_, d| d);
            }
            Op::Sub(a, b) => {
                self.accum(*a, &g.data, |_, d| d);
                self.accum(*b, &g.data, |_, d| -d);
            }
            Op::Mul(a, b) => {
                let vb = self.nodes[b.0].value.data.clone();
                let va = self.nodes[a.0].value.data.clone();
                self.accum_idx(*a, |k| g.data[k] * vb[k]);
                self.accum_idx(*b, |k| g.data[k] * va[k]);
            }
            Op::AddRowBroadcast(a, b) => {
                self.accum(*a, &g.data, |_, d| d);
                let cols = self.nodes[b.0].grad.cols;
                for (k, &d) in g.data.iter().enumerate() {
                    self.nodes[b.0].grad.data[k % cols] += d;
                }
            }
            Op::MulRowBroadcast(a, b) => {
                let vb = self.nodes[b.0].value.data.clone();
                let va = self.nodes[a.0].value.data.clone();
                let cols = vb.len();
                self.accum_idx(*a, |k| g.data[k] * vb[k % cols]);
                for (k, &d) in g.data.iter().enumerate() {
                    self.nodes[b.0].grad.data[k % cols] += d * va[k];
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accum(*a, &g.data, move |_, d| d * c);
            }
            Op::AddScalar(a) => self.accum(*a, &g.data, |_, d| d),
            Op::Matmul(a, b) => {
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let da = g.matmul(&vb.transpose());
                let db = va.transpose().matmul(&g);
                self.nodes[a.0].grad.add_assign(&da);
                self.nodes[b.0].grad.add_assign(&db);
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.nodes[a.0].grad.add_assign(&gt);
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data.clone();
                self.accum_idx(*a, |k| g.data[k] * (1.0 - y[k] * y[k]));
            }
            Op::Gelu(a) => {
                let x = self.nodes[a.0].value.data.clone();
                self.accum_idx(*a, |k| g.data[k] * gelu_grad(x[k]));
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let x = self.nodes[a.0].value.data.clone();
                let gd = &g.data;
                self.accum_idx(*a, move |k| gd[k] * if x[k] >= 0.0 { 1.0 } else { slope });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data.clone();
                self.accum_idx(*a, |k| g.data[k] * y[k] * (1.0 - y[k]));
            }
            Op::Ln(a) => {
                let x = self.nodes[a.0].value.data.clone();
                self.accum_idx(*a, |k| g.data[k] / x[k]);
            }
            Op::Sqrt(a) => {
                let y = self.nodes[i].value.data.clone();
                self.accum_idx(*a, |k| g.data[k] / (2.0 * y[k]));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let x = self.nodes[a.0].value.data.clone();
                let gd = &g.data;
                self.accum_idx(*a, move |k| if x[k] > lo && x[k] < hi { gd[k] } else { 0.0 });
            }
            Op::SoftmaxRows(a) => {
                let y = self.nodes[i].value.clone();
                let cols = y.cols;
                let mut da = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let dot: f64 = (0..cols).map(|j| g.data[r * cols + j] * y.data[r * cols + j]).sum();
                    for j in 0..cols {
                        da.data[r * cols + j] = y.data[r * cols + j] * (g.data[r * cols + j] - dot);
                    }
                }
                self.nodes[a.0].grad.add_assign(&da);
            }
            Op::LayerNormRows(a, eps) => {
                let eps = *eps;
                let x = self.nodes[a.0].value.clone();
                let y = self.nodes[i].value.clone();
                let n = x.cols as f64;
                let cols = x.cols;
                let mut da = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let row = x.row(r);
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mean_g: f64 = (0..cols).map(|j| g.data[r * cols + j]).sum::<f64>() / n;
                    let mean_gy: f64 =
                        (0..cols).map(|j| g.data[r * cols + j] * y.data[r * cols + j]).sum::<f64>() / n;
                    for j in 0..cols {
                        da.data[r * cols + j] =
                            inv * (g.data[r * cols + j] - mean_g - y.data[r * cols + j] * mean_gy);
                    }
                }
                self.nodes[a.0].grad.add_assign(&da);
            }
            Op::L2NormalizeRows(a) => {
                let x = self.nodes[a.0].value.clone();
                let cols = x.cols;
                let mut da = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let row = x.row(r);
                    let rr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = (0..cols).map(|j| row[j] * g.data[r * cols + j]).sum();
                    for j in 0..cols {
                        da.data[r * cols + j] = g.data[r * cols + j] / rr - row[j] * dot / (rr * rr * rr);
                    }
                }
                self.nodes[a.0].grad.add_assign(&da);
            }
            Op::MeanRows(a) => {
                let rows = self.nodes[a.0].grad.rows;
                let cols = self.nodes[a.0].grad.cols;
                let m = rows as f64;
                for r in 0..rows {
                    for j in 0..cols {
                        self.nodes[a.0].grad.data[r * cols + j] += g.data[j] / m;
                    }
                }
            }
            Op::SumAll(a) => {
                let d = g.data[0];
                self.accum_idx(*a, move |_| d);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols;
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.nodes[p.0].grad.shape();
                    for r in 0..pr {
                        for j in 0..pc {
                            self.nodes[p.0].grad.data[r * pc + j] += g.data[r * total + off + j];
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols;
                let mut off = 0;
                for &p in parts {
                    let pr = self.nodes[p.0].grad.rows;
                    for r in 0..pr {
                        for j in 0..cols {
                            self.nodes[p.0].grad.data[r * cols + j] += g.data[(off + r) * cols + j];
                        }
                    }
                    off += pr;
                }
            }
            Op::GatherCols(a, idx) => {
                let cols = self.nodes[a.0].grad.cols;
                for (r, &j) in idx.iter().enumerate() {
                    self.nodes[a.0].grad.data[r * cols + j] += g.data[r];
                }
            }
            Op::LogSumExpRows(a) => {
                let x = self.nodes[a.0].value.clone();
                let cols = x.cols;
                let mut da = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let row = x.row(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for j in 0..cols {
                        da.data[r * cols + j] = g.data[r] * (row[j] - m).exp() / s;
                    }
                }
                self.nodes[a.0].grad.add_assign(&da);
            }
            Op::MulScalarNode(a, s) => {
                let sv = self.nodes[s.0].value.data[0];
                let va = self.nodes[a.0].value.data.clone();
                let gd = &g.data;
                self.accum_idx(*a, move |k| gd[k] * sv);
                let ds: f64 = g.data.iter().zip(&va).map(|(d, v)| d * v).sum();
                self.nodes[s.0].grad.data[0] += ds;
            }
            Op::DivScalarNode(a, s) => {
                let sv = self.nodes[s.0].value.data[0];
                let va = self.nodes[a.0].value.data.clone();
                let gd = &g.data;
                self.accum_idx(*a, move |k| gd[k] / sv);
                let ds: f64 = g.data.iter().zip(&va).map(|(d, v)| -d * v / (sv * sv)).sum();
                self.nodes[s.0].grad.data[0] += ds;
            }
            Op::RepeatRows(a, times) => {
                let cols = self.nodes[a.0].grad.cols;
                for t in 0..*times {
                    for j in 0..cols {
                        self.nodes[a.0].grad.data[j] += g.data[t * cols + j];
                    }
                }
            }
            Op::Im2ColSame(a, k, stride) => {
                let (t_in, c) = self.nodes[a.0].grad.shape();
                let pad = (k - 1) / 2;
                let kc = k * c;
                for t in 0..g.rows {
                    for tap in 0..*k {
                        let src = (t * stride + tap) as isize - pad as isize;
                        if src < 0 || src as usize >= t_in {
                            continue;
                        }
                        let src = src as usize;
                        for j in 0..c {
                            self.nodes[a.0].grad.data[src * c + j] += g.data[t * kc + tap * c + j];
                        }
                    }
                }
            }
            Op::MaskMul(a, mask) => {
                let m = mask.data.clone();
                let gd = &g.data;
                self.accum_idx(*a, move |k| gd[k] * m[k]);
            }
            Op::Reshape(a) => {
                let t = &mut self.nodes[a.0].grad;
                for (k, &d) in g.data.iter().enumerate() {
                    t.data[k] += d;
                }
            }
            Op::MulColBroadcast(a, b) => {
                let vb = self.nodes[b.0].value.data.clone();
                let va = self.nodes[a.0].value.data.clone();
                let cols = self.nodes[a.0].grad.cols;
                self.accum_idx(*a, |k| g.data[k] * vb[k / cols]);
                for (k, &d) in g.data.iter().enumerate() {
                    self.nodes[b.0].grad.data[k / cols] += d * va[k];
                }
            }
            Op::ResizeCols(a, new_cols) => {
                let (rows, cols) = self.nodes[a.0].grad.shape();
                let copy = cols.min(*new_cols);
                for r in 0..rows {
                    for j in 0..copy {
                        self.nodes[a.0].grad.data[r * cols + j] += g.data[r * new_cols + j];
                    }
                }
            }
        }
        self.nodes[i].op = op;
        self.nodes[i].grad = g;
    }

    fn accum<F: Fn(usize, f64) -> f64>(&mut self, target: Node, g: &[f64], f: F) {
        let t = &mut self.nodes[target.0].grad;
        for (k, &d) in g.iter().enumerate() {
            t.data[k] += f(k, d);
        }
    }

    fn accum_idx<F: Fn(usize) -> f64>(&mut self, target: Node, f: F) {
        let t = &mut self.nodes[target.0].grad;
        for k in 0..t.data.len() {
            t.data[k] += f(k);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// tanh-approximation GELU
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Central finite-difference gradient of `f` at `x`, used as the independent
/// oracle for every analytic-gradient check in the suite.
pub fn finite_difference<F: FnMut(&Tensor) -> f64>(x: &Tensor, step: f64, mut f: F) -> Tensor {
    let mut grad = Tensor::zeros(x.rows, x.cols);
    let mut probe = x.clone();
    for k in 0..x.data.len() {
        let orig = probe.data[k];
        probe.data[k] = orig + step;
        let fp = f(&probe);
        probe.data[k] = orig - step;
        let fm = f(&probe);
        probe.data[k] = orig;
        grad.data[k] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Max relative error between analytic and reference gradients, with an
/// absolute floor so near-zero entries do not blow up the ratio.
pub fn max_relative_error(analytic: &Tensor, reference: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), reference.shape());
    analytic
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, r)| (a - r).abs() / a.abs().max(r.abs()).max(1e-4))
        .fold(0.0, f64::max)
}
