//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so every parent has a smaller
//! index than its child and a single reverse sweep is a valid topological
//! traversal. Each op owns its backward rule in [`Tape::backward`].

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax(Var),
    GatherRows { src: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { src: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L1Mean(Var, Var),
    L2Sq(Var, Var),
    Attention { q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize, probs: Vec<f64> },
    Focal { logits: Var, targets: Vec<usize>, gamma: f64, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation and replays it backward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYERNORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad;
        self.push_raw(t, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push_raw(t, Op::Leaf, false)
    }

    /// Stop-gradient: the value passes through, the gradient does not.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        let mut t = Tensor::new(self.nodes[v.0].value.shape(), g.clone()).ok()?;
        t.requires_grad = false;
        Some(t)
    }

    /// Clears gradients so the same graph can be differentiated again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let value = Tensor::new(shape, data)?;
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // ---- forward ops -------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", &[m, n], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        self.push("add", &shape, out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        self.push("sub", &shape, out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        self.push("mul", &shape, out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`n` row vector to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).numel() != n {
            return Err(Error::shape("add_row", format!("row of {} vs {n} columns", self.value(row).numel())));
        }
        let r = self.value(row).data();
        let out: Vec<f64> = self.value(a).data().iter().enumerate().map(|(i, x)| x + r[i % n]).collect();
        self.push("add_row", &[m, n], out, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push("scale", &shape, out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push("relu", &shape, out, Op::Relu(a), &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).data().iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())).collect();
        let shape = self.value(a).shape().to_vec();
        self.push("gelu", &shape, out, Op::Gelu(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// the per-column affine `gamma`, `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "layernorm")?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::shape("layernorm", "affine width differs from row width"));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        self.push("layernorm", &[m, n], out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let shape = self.value(x).shape().to_vec();
        self.push("softmax", &shape, out, Op::Softmax(x), &[x])
    }

    /// Selects rows of an `[r,c]` matrix; the embedding lookup.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(src, "gather_rows")?;
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} out of {r}")));
        }
        let s = self.value(src).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&s[i * c..(i + 1) * c]);
        }
        self.push("gather_rows", &[idx.len(), c], out, Op::GatherRows { src, idx: idx.to_vec() }, &[src])
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::shape("concat_cols", format!("row counts {pm} vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push("concat_cols", &[m, total], out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let (_, n) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(Error::shape("concat_rows", format!("column counts {pn} vs {n}")));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        self.push("concat_rows", &[rows, n], out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(src, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", format!("{start}..{} of {n}", start + len)));
        }
        let s = self.value(src).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&s[i * n + start..i * n + start + len]);
        }
        self.push("slice_cols", &[m, len], out, Op::SliceCols { src, start }, &[src])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let data = self.value(x).data().to_vec();
        self.push("reshape", shape, data, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push("sum", &[1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", &[1], vec![s], Op::Mean(x), &[x])
    }

    /// Mean absolute difference over all elements.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1")?;
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y).abs()).sum();
        self.push("l1", &[1], vec![s / n], Op::L1Mean(a, b), &[a, b])
    }

    /// Squared Euclidean distance per row, averaged over rows.
    pub fn l2sq(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l2sq")?;
        let (m, _) = self.value(a).matrix_dims();
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push("l2sq", &[1], vec![s / m as f64], Op::L2Sq(a, b), &[a, b])
    }

    /// Multi-head causal self-attention over `batch` sequences of length
    /// `seq`. `q`, `k`, `v` are `[batch*seq, c]` with rows grouped by
    /// sequence; position `t` attends to positions `0..=t` only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, c) = self.dims2(q, "attention")?;
        if self.value(k).shape() != [rows, c] || self.value(v).shape() != [rows, c] {
            return Err(Error::shape("attention", "q, k, v shapes differ"));
        }
        if rows != batch * seq || heads == 0 || c % heads != 0 {
            return Err(Error::shape("attention", format!("rows {rows}, batch {batch}, seq {seq}, c {c}, heads {heads}")));
        }
        let hd = c / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * c];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * c + h * hd..(b * seq + i) * c + (h + 1) * hd];
                    let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    for j in 0..=i {
                        let kj = &kd[(b * seq + j) * c + h * hd..(b * seq + j) * c + (h + 1) * hd];
                        prow[j] = dot(qi, kj) * scale;
                    }
                    softmax_in_place(&mut prow[..=i]);
                    let orow = &mut out[(b * seq + i) * c + h * hd..(b * seq + i) * c + (h + 1) * hd];
                    for j in 0..=i {
                        let p = prow[j];
                        let vj = &vd[(b * seq + j) * c + h * hd..(b * seq + j) * c + (h + 1) * hd];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        self.push("attention", &[rows, c], out, Op::Attention { q, k, v, batch, seq, heads, probs }, &[q, k, v])
    }

    /// Focal loss `-(1-p_t)^gamma * ln p_t` averaged over rows of
    /// `[rows, classes]` logits. `gamma = 0` is cross-entropy.
    pub fn focal_loss(&mut self, logits: Var, targets: &[usize], gamma: f64) -> Result<Var> {
        let (m, n) = self.dims2(logits, "focal_loss")?;
        if targets.len() != m {
            return Err(Error::shape("focal_loss", format!("{} targets for {m} rows", targets.len())));
        }
        if targets.iter().any(|&t| t >= n) {
            return Err(Error::Invalid(format!("focal_loss target out of range 0..{n}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Invalid(format!("focal gamma must be >= 0, got {gamma}")));
        }
        let z = self.value(logits).data();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("focal_loss logits".into()));
        }
        let mut probs = z.to_vec();
        let mut total = 0.0;
        for i in 0..m {
            let row = &z[i * n..(i + 1) * n];
            let lse = log_sum_exp(row);
            let t = targets[i];
            let log_pt = row[t] - lse;
            let p = &mut probs[i * n..(i + 1) * n];
            softmax_in_place(p);
            let one_minus = one_minus_pt(p, t);
            total += -focal_weight(one_minus, gamma) * log_pt;
        }
        self.push("focal_loss", &[1], vec![total / m as f64], Op::Focal { logits, targets: targets.to_vec(), gamma, probs }, &[logits])
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    // ---- backward ----------------------------------------------------

    /// Accumulates d(loss)/d(node) for every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).matrix_dims();
                let n = self.value(*b).shape()[1];
                if needs(*a) {
                    accumulate(grads, *a, &mm_nt(g, self.value(*b).data(), m, n, k));
                }
                if needs(*b) {
                    accumulate(grads, *b, &mm_tn(self.value(*a).data(), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                accumulate_if(grads, *a, needs(*a), g);
                accumulate_if(grads, *b, needs(*b), g);
            }
            Op::Sub(a, b) => {
                accumulate_if(grads, *a, needs(*a), g);
                if needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, &zip_map(g, self.value(*b).data(), |x, y| x * y));
                }
                if needs(*b) {
                    accumulate(grads, *b, &zip_map(g, self.value(*a).data(), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                accumulate_if(grads, *a, needs(*a), g);
                if needs(*row) {
                    let n = self.value(*row).numel();
                    let mut gr = vec![0.0; n];
                    for (i, x) in g.iter().enumerate() {
                        gr[i % n] += x;
                    }
                    accumulate(grads, *row, &gr);
                }
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(*a).data(), |x, v| if v > 0.0 { x } else { 0.0 });
                accumulate(grads, *a, &ga);
            }
            Op::Gelu(a) => {
                let ga = zip_map(g, self.value(*a).data(), |x, v| {
                    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                    let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    x * d
                });
                accumulate(grads, *a, &ga);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (m, n) = self.value(*x).matrix_dims();
                let gm = self.value(*gamma).data();
                if needs(*gamma) {
                    let mut gg = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                    accumulate(grads, *gamma, &gg);
                }
                if needs(*beta) {
                    let mut gb = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g[i * n + j];
                        }
                    }
                    accumulate(grads, *beta, &gb);
                }
                if needs(*x) {
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dh = g[i * n + j] * gm[j];
                            s1 += dh;
                            s2 += dh * xhat[i * n + j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dh = g[i * n + j] * gm[j];
                            gx[i * n + j] = inv_std[i] / nf * (nf * dh - s1 - xhat[i * n + j] * s2);
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (m, n) = node.value.matrix_dims();
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let d = dot(&g[r.clone()], &y[r.clone()]);
                    for j in r {
                        gx[j] = y[j] * (g[j] - d);
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::GatherRows { src, idx } => {
                let (r, c) = self.value(*src).matrix_dims();
                let mut gs = vec![0.0; r * c];
                for (o, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gs[i * c + j] += g[o * c + j];
                    }
                }
                accumulate(grads, *src, &gs);
            }
            Op::ConcatCols(parts) => {
                let m = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if needs(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        accumulate(grads, p, &gp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    accumulate_if(grads, p, needs(p), &g[off..off + len]);
                    off += len;
                }
            }
            Op::SliceCols { src, start } => {
                let (m, n) = self.value(*src).matrix_dims();
                let len = node.value.shape()[1];
                let mut gs = vec![0.0; m * n];
                for i in 0..m {
                    gs[i * n + start..i * n + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                accumulate(grads, *src, &gs);
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, &vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, &vec![g[0] / n as f64; n]);
            }
            Op::L1Mean(a, b) => {
                let n = self.value(*a).numel() as f64;
                let ga = zip_map(self.value(*a).data(), self.value(*b).data(), |x, y| g[0] * sign(x - y) / n);
                if needs(*a) {
                    accumulate(grads, *a, &ga);
                }
                if needs(*b) {
                    let gb: Vec<f64> = ga.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::L2Sq(a, b) => {
                let (m, _) = self.value(*a).matrix_dims();
                let ga = zip_map(self.value(*a).data(), self.value(*b).data(), |x, y| g[0] * 2.0 * (x - y) / m as f64);
                if needs(*a) {
                    accumulate(grads, *a, &ga);
                }
                if needs(*b) {
                    let gb: Vec<f64> = ga.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Attention { q, k, v, batch, seq, heads, probs } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let c = node.value.shape()[1];
                let hd = c / heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut dp = vec![0.0; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let pbase = (b * heads + h) * seq * seq;
                        let cols = h * hd..(h + 1) * hd;
                        let at = |t: usize| (b * seq + t) * c;
                        for i in 0..seq {
                            let p = &probs[pbase + i * seq..pbase + i * seq + i + 1];
                            let go = &g[at(i) + cols.start..at(i) + cols.end];
                            // dP = dO V^T and dV += P^T dO
                            for j in 0..=i {
                                let vj = &vd[at(j) + cols.start..at(j) + cols.end];
                                dp[j] = dot(go, vj);
                                let gvj = &mut gv[at(j) + cols.start..at(j) + cols.end];
                                for (x, o) in gvj.iter_mut().zip(go) {
                                    *x += p[j] * o;
                                }
                            }
                            let s: f64 = (0..=i).map(|j| dp[j] * p[j]).sum();
                            for j in 0..=i {
                                let ds = p[j] * (dp[j] - s) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for t in cols.clone() {
                                    gq[at(i) + t] += ds * kd[at(j) + t];
                                    gk[at(j) + t] += ds * qd[at(i) + t];
                                }
                            }
                        }
                    }
                }
                accumulate_if(grads, *q, needs(*q), &gq);
                accumulate_if(grads, *k, needs(*k), &gk);
                accumulate_if(grads, *v, needs(*v), &gv);
            }
            Op::Focal { logits, targets, gamma, probs } => {
                let (m, n) = self.value(*logits).matrix_dims();
                let mut gz = vec![0.0; m * n];
                for (i, &t) in targets.iter().enumerate() {
                    let p = &probs[i * n..(i + 1) * n];
                    let one_minus = one_minus_pt(p, t);
                    let pt = p[t];
                    // d(loss_row)/d(p_t) * p_t
                    let mut coef = -focal_weight(one_minus, *gamma);
                    if *gamma > 0.0 && one_minus > 0.0 {
                        coef += gamma * one_minus.powf(gamma - 1.0) * pt * pt.ln();
                    }
                    let w = g[0] * coef / m as f64;
                    for j in 0..n {
                        let delta = if j == t { 1.0 } else { 0.0 };
                        gz[i * n + j] = w * (delta - p[j]);
                    }
                }
                accumulate(grads, *logits, &gz);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_if(grads: &mut [Option<Vec<f64>>], v: Var, needed: bool, g: &[f64]) {
    if needed {
        accumulate(grads, v, g);
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - p[t]` computed as the sum of the other probabilities, which keeps
/// precision when `p[t]` is close to 1.
fn one_minus_pt(p: &[f64], t: usize) -> f64 {
    p.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, v)| v).sum()
}

fn focal_weight(one_minus: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        one_minus.powf(gamma)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// `[m,k] x [k,n]`
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `[m,k] x [n,k]^T -> [m,n]`
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `[k,m]^T x [k,n] -> [m,n]`
fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let br = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let x = a[p * m + i];
            if x == 0.0 {
                continue;
            }
            for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_hand_computed() {
        let mut t = Tape::new();
        let a = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(mat(&[&[1.0], &[1.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 1]);
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_bad_contraction() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 4]));
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn layernorm_constant_row_maps_to_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 3], 2.0));
        let g = t.constant(Tensor::full(&[3], 1.0));
        let b = t.constant(Tensor::zeros(&[3]));
        let y = t.layernorm(x, g, b).unwrap();
        assert_eq!(t.value(y).data(), &[0.0; 3]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[1.0, 2.0]).tracked());
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0).tracked());
        let y = t.leaf(Tensor::scalar(5.0).tracked());
        let p = t.mul(x, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 5.0);
        assert_eq!(t.grad(y).unwrap().item(), 3.0);
    }

    #[test]
    fn backward_twice_requires_reset() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[1.0, -2.0]).tracked());
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss).unwrap();
        let first = t.grad(x).unwrap();
        assert!(matches!(t.backward(loss), Err(Error::BackwardTwice)));
        t.reset();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), first);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[1.0, 2.0]).tracked());
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(&[1e300]));
        assert!(matches!(t.scale(x, 1e300), Err(Error::NonFinite(_))));
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[2.0]).tracked());
        let s = t.stop_gradient(x);
        let p = t.mul(x, s).unwrap();
        let loss = t.sum(p).unwrap();
        t.backward(loss).unwrap();
        // d/dx (x * sg(x)) = sg(x)
        assert_eq!(t.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn focal_matches_cross_entropy_at_gamma_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[1, 4]));
        let l = t.focal_loss(z, &[2], 0.0).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_single_position_returns_value() {
        let mut t = Tape::new();
        let q = t.constant(mat(&[&[1.0, -1.0]]));
        let k = t.constant(mat(&[&[0.5, 2.0]]));
        let v = t.constant(mat(&[&[3.0, 4.0]]));
        let o = t.causal_attention(q, k, v, 1, 1, 2).unwrap();
        assert_eq!(t.value(o).data(), &[3.0, 4.0]);
    }
}
