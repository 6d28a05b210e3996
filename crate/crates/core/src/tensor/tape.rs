//! Wengert tape: operations are appended in execution order, so the node list
//! is already topologically sorted and backward is a single reverse sweep.

use super::kernels::{self, axpy, dot};
use super::{Precision, Tensor};
use crate::error::{ensure, Error, Result};

/// Handle to a node on a [`Tape`].
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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

impl Node {
    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    fn rows(&self) -> usize {
        self.value.len() / self.cols()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, mut value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.precision.round(&mut value);
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a copy of `t` as a leaf. Gradients flow to it iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        super::check_shape(shape)?;
        ensure!(
            shape.iter().product::<usize>() == data.len(),
            Dimension,
            "constant of {} values for shape {:?}",
            data.len(),
            shape
        );
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf))
    }

    /// A leaf that receives a gradient, for inputs whose sensitivity is wanted.
    pub fn variable(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let v = self.constant(shape, data)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        let s = &self.node(v).shape;
        ensure!(s.len() == 2, Dimension, "expected a matrix, got shape {:?}", s);
        Ok((s[0], s[1]))
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        ensure!(k == k2, Dimension, "matmul inner dimensions {k} and {k2}");
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let src = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, rg, Op::Transpose(a)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            Dimension,
            "{what}: shapes {:?} and {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_op(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a length-`n` vector to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.node(x).cols();
        ensure!(
            self.node(bias).value.len() == n,
            Dimension,
            "bias of {} entries for rows of width {n}",
            self.node(bias).value.len()
        );
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            axpy(row, 1.0, b);
        }
        let rg = self.rg(&[x, bias]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::gelu_scalar(x)).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Gelu(a))
    }

    /// `x / sqrt(mean(x²) + eps) ⊙ gain` over each last-dimension slice.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        ensure!(eps >= 0.0, Contract, "rmsnorm eps must be non-negative, got {eps}");
        let d = self.node(x).cols();
        ensure!(
            self.node(gain).value.len() == d,
            Dimension,
            "rmsnorm gain of {} entries for width {d}",
            self.node(gain).value.len()
        );
        let g = self.value(gain);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        let mut inv_rms = Vec::with_capacity(xv.len() / d);
        for (row, orow) in xv.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let ms = dot(row, row) / d as f64;
            let denom = (ms + eps).sqrt();
            let r = if denom > 0.0 { 1.0 / denom } else { 0.0 };
            inv_rms.push(r);
            for ((o, &xi), &gi) in orow.iter_mut().zip(row).zip(g) {
                *o = xi * r * gi;
            }
        }
        let rg = self.rg(&[x, gain]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::RmsNorm { x, gain, inv_rms }))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let d = self.node(a).cols();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(d) {
            kernels::softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Softmax(a))
    }

    /// `Σ_{i: mask_i} −log softmax(logits_i)[targets_i]` as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (l, v) = self.dims2(logits)?;
        ensure!(
            targets.len() == l && mask.len() == l,
            Dimension,
            "{} targets and {} mask entries for {l} logit rows",
            targets.len(),
            mask.len()
        );
        if let Some((i, &t)) = targets.iter().enumerate().find(|(i, &t)| mask[*i] && t >= v) {
            return Err(Error::Index(format!("target {t} at position {i} outside vocabulary of {v}")));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; l * v];
        let mut loss = 0.0;
        for i in 0..l {
            if !mask[i] {
                continue;
            }
            let row = &lv[i * v..(i + 1) * v];
            loss += kernels::log_sum_exp(row) - row[targets[i]];
            let p = &mut probs[i * v..(i + 1) * v];
            p.copy_from_slice(row);
            kernels::softmax_in_place(p);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
        ))
    }

    /// Gathers rows `ids` of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.dims2(table)?;
        ensure!(!ids.is_empty(), Dimension, "embedding lookup of zero ids");
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Dimension, "concat of zero parts");
        let d = self.node(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            ensure!(
                self.node(p).cols() == d,
                Dimension,
                "concat rows of width {} and {d}",
                self.node(p).cols()
            );
            out.extend_from_slice(self.value(p));
        }
        let rows = out.len() / d;
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, d], out, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let d = self.node(x).cols();
        let rows = self.node(x).rows();
        ensure!(len > 0 && start + len <= rows, Index, "rows {start}..{} of {rows}", start + len);
        let out = self.value(x)[start * d..(start + len) * d].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![len, d], out, rg, Op::SliceRows { x, start }))
    }

    /// Multi-head scaled dot-product attention over `[L×d]` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (l, d) = self.dims2(q)?;
        ensure!(
            self.shape(k) == [l, d] && self.shape(v) == [l, d],
            Dimension,
            "attention q {:?}, k {:?}, v {:?}",
            self.shape(q),
            self.shape(k),
            self.shape(v)
        );
        ensure!(heads > 0 && d % heads == 0, Dimension, "{heads} heads for width {d}");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * l * l];
        let mut out = vec![0.0; l * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..l {
                let qi = &qv[i * d + off..i * d + off + dh];
                let span = if causal { i + 1 } else { l };
                let p = &mut probs[(h * l + i) * l..(h * l + i) * l + span];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = dot(qi, &kv[j * d + off..j * d + off + dh]) * scale;
                }
                kernels::softmax_in_place(p);
                let orow = &mut out[i * d + off..i * d + off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    axpy(orow, pj, &vv[j * d + off..j * d + off + dh]);
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            vec![l, d],
            out,
            rg,
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.value(a).iter().sum::<f64>() / n;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], rg, Op::Mean(a))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Every node that requires a gradient
    /// ends up with a buffer (possibly all zeros); other nodes get none.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.node(loss);
        ensure!(
            n.value.len() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            n.shape
        );
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.backprop_node(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    /// Adds `contribution` into the gradient of `target` if it wants one.
    fn acc(&mut self, target: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let len = self.nodes[target.0].value.len();
        let mut buf = self.nodes[target.0].grad.take().unwrap_or_else(|| vec![0.0; len]);
        f(&mut buf, &self.nodes);
        self.precision.round(&mut buf);
        self.nodes[target.0].grad = Some(buf);
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64]) {
        // Temporarily move the op out so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let (a, b) = (*a, *b);
                self.acc(a, |da, nodes| kernels::matmul_grad_a(da, g, &nodes[b.0].value, m, k, n));
                self.acc(b, |db, nodes| kernels::matmul_grad_b(db, &nodes[a.0].value, g, m, k, n));
            }
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                self.acc(*a, |da, _| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, |da, _| axpy(da, 1.0, g));
                self.acc(*b, |db, _| axpy(db, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |da, _| axpy(da, 1.0, g));
                self.acc(*b, |db, _| axpy(db, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |da, nodes| {
                    for ((d, &gi), &bv) in da.iter_mut().zip(g).zip(&nodes[b.0].value) {
                        *d += gi * bv;
                    }
                });
                self.acc(b, |db, nodes| {
                    for ((d, &gi), &av) in db.iter_mut().zip(g).zip(&nodes[a.0].value) {
                        *d += gi * av;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                self.acc(*x, |dx, _| axpy(dx, 1.0, g));
                let n = self.nodes[bias.0].value.len();
                self.acc(*bias, |db, _| {
                    for row in g.chunks_exact(n) {
                        axpy(db, 1.0, row);
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(*a, |da, _| axpy(da, s, g));
            }
            Op::Gelu(a) => {
                let a = *a;
                self.acc(a, |da, nodes| {
                    for ((d, &gi), &x) in da.iter_mut().zip(g).zip(&nodes[a.0].value) {
                        *d += gi * kernels::gelu_derivative(x);
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (x, gain) = (*x, *gain);
                let d = self.nodes[gain.0].value.len();
                self.acc(gain, |dg, nodes| {
                    let xv = &nodes[x.0].value;
                    for (r, (grow, xrow)) in g.chunks_exact(d).zip(xv.chunks_exact(d)).enumerate() {
                        let ir = inv_rms[r];
                        for ((dgi, &gi), &xi) in dg.iter_mut().zip(grow).zip(xrow) {
                            *dgi += gi * xi * ir;
                        }
                    }
                });
                self.acc(x, |dx, nodes| {
                    let xv = &nodes[x.0].value;
                    let gv = &nodes[gain.0].value;
                    for (r, ((dxrow, grow), xrow)) in dx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(xv.chunks_exact(d))
                        .enumerate()
                    {
                        let ir = inv_rms[r];
                        let mut proj = 0.0;
                        for i in 0..d {
                            proj += grow[i] * gv[i] * xrow[i];
                        }
                        let coef = ir * ir * ir * proj / d as f64;
                        for i in 0..d {
                            dxrow[i] += ir * gv[i] * grow[i] - xrow[i] * coef;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let d = self.nodes[a.0].cols();
                let y = std::mem::take(&mut self.nodes[idx].value);
                self.acc(*a, |da, _| {
                    for ((darow, grow), yrow) in da.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(y.chunks_exact(d)) {
                        let s = dot(grow, yrow);
                        for i in 0..d {
                            darow[i] += yrow[i] * (grow[i] - s);
                        }
                    }
                });
                self.nodes[idx].value = y;
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
            } => {
                let v = self.nodes[logits.0].shape[1];
                let scale = g[0];
                self.acc(*logits, |dl, _| {
                    for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let row = &mut dl[i * v..(i + 1) * v];
                        axpy(row, scale, &probs[i * v..(i + 1) * v]);
                        row[t] -= scale;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.nodes[table.0].shape[1];
                self.acc(*table, |dt, _| {
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(&mut dt[i * d..(i + 1) * d], 1.0, &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    self.acc(p, |dp, _| axpy(dp, 1.0, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let d = self.nodes[x.0].cols();
                let off = start * d;
                self.acc(*x, |dx, _| axpy(&mut dx[off..off + g.len()], 1.0, g));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, *causal, probs, g),
            Op::Sum(a) => {
                let s = g[0];
                self.acc(*a, |da, _| da.iter_mut().for_each(|d| *d += s));
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                let s = g[0] / n;
                self.acc(*a, |da, _| da.iter_mut().for_each(|d| *d += s));
            }
        }
        self.nodes[idx].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool, probs: &[f64], g: &[f64]) {
        let (l, d) = (self.nodes[q.0].shape[0], self.nodes[q.0].shape[1]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let want = [q, k, v].map(|x| self.nodes[x.0].requires_grad);
        let mut dq = vec![0.0; l * d];
        let mut dk = vec![0.0; l * d];
        let mut dv = vec![0.0; l * d];
        {
            let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
            let mut ds = vec![0.0; l];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..l {
                    let span = if causal { i + 1 } else { l };
                    let p = &probs[(h * l + i) * l..(h * l + i) * l + span];
                    let gi = &g[i * d + off..i * d + off + dh];
                    let mut weighted = 0.0;
                    for j in 0..span {
                        let dp = dot(gi, &vv[j * d + off..j * d + off + dh]);
                        ds[j] = dp;
                        weighted += p[j] * dp;
                    }
                    for j in 0..span {
                        let dsj = p[j] * (ds[j] - weighted) * scale;
                        if want[0] {
                            axpy(&mut dq[i * d + off..i * d + off + dh], dsj, &kv[j * d + off..j * d + off + dh]);
                        }
                        if want[1] {
                            axpy(&mut dk[j * d + off..j * d + off + dh], dsj, &qv[i * d + off..i * d + off + dh]);
                        }
                        if want[2] {
                            axpy(&mut dv[j * d + off..j * d + off + dh], p[j], gi);
                        }
                    }
                }
            }
        }
        self.acc(q, |b, _| axpy(b, 1.0, &dq));
        self.acc(k, |b, _| axpy(b, 1.0, &dk));
        self.acc(v, |b, _| axpy(b, 1.0, &dv));
    }
}
