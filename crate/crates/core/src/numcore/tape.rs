//! Reverse-mode automatic differentiation over an explicitly recorded
//! operation tape. Every node is a 2D matrix; the forward value is computed
//! eagerly, the backward sweep walks the tape in reverse.

use crate::error::{Error, Result};
use crate::numcore::params::ParamStore;
use crate::numcore::scalar::Scalar;
use crate::numcore::tensor::Tensor;

pub type NodeId = usize;

enum Op<S: Scalar> {
    /// Constant input; receives no gradient.
    Leaf,
    /// Leaf bound to a parameter in a [`ParamStore`].
    Param { param: usize },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: S },
    /// Broadcast-add a 1 x d row over every row of `a`.
    AddRow { a: NodeId, row: NodeId },
    Transpose { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: S },
    /// Train-mode batch norm: statistics over rows, per column.
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: S },
    Gelu { a: NodeId },
    Relu { a: NodeId },
    /// Inverted dropout; the mask already carries the 1/(1-p) scaling.
    Dropout { a: NodeId, mask: Vec<S> },
    GatherRows { a: NodeId, idx: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    MeanRows { a: NodeId },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
    /// Stable binary cross-entropy with logits, mean over all elements.
    BceWithLogits { logits: NodeId, targets: Vec<S> },
}

struct Node<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    op: Op<S>,
}

/// Recorded computation graph. Build forward ops, call [`Tape::backward`]
/// once on a scalar node, then collect parameter gradients. The tape must be
/// explicitly reset (or dropped) before it can run backward again.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Vec<S>>,
    backward_done: bool,
}

/// Cache-friendly (i,k,j) matmul; inner loop is contiguous on both the
/// output row and the right-hand row.
pub fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aik = a[i * k + p];
            if aik == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + aik * brow[j];
            }
        }
    }
    c
}

/// Tanh-approximation GELU, used everywhere so derivative and oracles agree.
pub fn gelu_scalar<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad_scalar<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    let three = S::of(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = S::one() - t * t;
    let d_inner = c * (S::one() + three * k * x * x);
    half * (S::one() + t) + half * x * sech2 * d_inner
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<S>, op: Op<S>) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn rows(&self, id: NodeId) -> usize {
        self.nodes[id].rows
    }

    pub fn cols(&self, id: NodeId) -> usize {
        self.nodes[id].cols
    }

    pub fn data(&self, id: NodeId) -> &[S] {
        &self.nodes[id].data
    }

    pub fn value(&self, id: NodeId) -> Tensor<S> {
        Tensor::matrix(
            self.nodes[id].rows,
            self.nodes[id].cols,
            self.nodes[id].data.clone(),
        )
        .expect("node data consistent")
    }

    /// Gradient of a node after `backward`; zeros if the node was unreachable.
    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.grads.get(id).map(|g| g.as_slice())
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::Shape {
            op,
            left: vec![self.nodes[a].rows, self.nodes[a].cols],
            right: vec![self.nodes[b].rows, self.nodes[b].cols],
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn input(&mut self, t: &Tensor<S>) -> NodeId {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf)
    }

    pub fn input_matrix(&mut self, rows: usize, cols: usize, data: Vec<S>) -> NodeId {
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Insert the current value of a store parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<S>, param: usize) -> NodeId {
        let p = store.value(param);
        self.push(p.rows(), p.cols(), p.data().to_vec(), Op::Param { param })
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = (self.nodes[a].rows, self.nodes[a].cols);
        let (k2, n) = (self.nodes[b].rows, self.nodes[b].cols);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let data = matmul_raw(&self.nodes[a].data, &self.nodes[b].data, m, k, n);
        Ok(self.push(m, n, data, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].rows != self.nodes[b].rows || self.nodes[a].cols != self.nodes[b].cols {
            return Err(self.shape_err("add", a, b));
        }
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(r, c, data, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].rows != self.nodes[b].rows || self.nodes[a].cols != self.nodes[b].cols {
            return Err(self.shape_err("sub", a, b));
        }
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(r, c, data, Op::Sub { a, b }))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].rows != self.nodes[b].rows || self.nodes[a].cols != self.nodes[b].cols {
            return Err(self.shape_err("mul_elem", a, b));
        }
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(r, c, data, Op::MulElem { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let data: Vec<S> = self.nodes[a].data.iter().map(|&x| x * factor).collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(r, c, data, Op::Scale { a, factor })
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        if self.nodes[row].rows != 1 || self.nodes[row].cols != self.nodes[a].cols {
            return Err(self.shape_err("add_row", a, row));
        }
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        let mut data = self.nodes[a].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + self.nodes[row].data[j];
            }
        }
        Ok(self.push(r, c, data, Op::AddRow { a, row }))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        let src = &self.nodes[a].data;
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(c, r, data, Op::Transpose { a })
    }

    /// Row-wise softmax, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        let src = &self.nodes[a].data;
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut mx = S::neg_infinity();
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Numeric {
                        context: "softmax_rows",
                        message: format!("non-finite input {} in row {}", v, i),
                    });
                }
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = S::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                data[i * c + j] = e;
                sum = sum + e;
            }
            for j in 0..c {
                data[i * c + j] = data[i * c + j] / sum;
            }
        }
        Ok(self.push(r, c, data, Op::SoftmaxRows { a }))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: S) -> Result<NodeId> {
        let (r, c) = (self.nodes[x].rows, self.nodes[x].cols);
        if self.nodes[gamma].cols != c || self.nodes[beta].cols != c {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        let src = &self.nodes[x].data;
        let g = &self.nodes[gamma].data;
        let b = &self.nodes[beta].data;
        let cf = S::of(c as f64);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut mean = S::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / cf;
            let mut var = S::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var / cf;
            let inv = S::one() / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        Ok(self.push(r, c, data, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Batch norm in train mode: per-column statistics over the batch rows.
    /// Returns (node, batch_mean, batch_var) so the caller can maintain
    /// running statistics.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: S,
    ) -> Result<(NodeId, Vec<S>, Vec<S>)> {
        let (r, c) = (self.nodes[x].rows, self.nodes[x].cols);
        if self.nodes[gamma].cols != c || self.nodes[beta].cols != c {
            return Err(self.shape_err("batch_norm", x, gamma));
        }
        let src = &self.nodes[x].data;
        let g = &self.nodes[gamma].data;
        let b = &self.nodes[beta].data;
        let rf = S::of(r as f64);
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for i in 0..r {
            for j in 0..c {
                mean[j] = mean[j] + src[i * c + j];
            }
        }
        for m in mean.iter_mut() {
            *m = *m / rf;
        }
        for i in 0..r {
            for j in 0..c {
                let d = src[i * c + j] - mean[j];
                var[j] = var[j] + d * d;
            }
        }
        for v in var.iter_mut() {
            *v = *v / rf;
        }
        let mut data = vec![S::zero(); r * c];
        for j in 0..c {
            let inv = S::one() / (var[j] + eps).sqrt();
            for i in 0..r {
                data[i * c + j] = (src[i * c + j] - mean[j]) * inv * g[j] + b[j];
            }
        }
        let id = self.push(r, c, data, Op::BatchNorm { x, gamma, beta, eps });
        Ok((id, mean, var))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<S> = self.nodes[a].data.iter().map(|&x| gelu_scalar(x)).collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(r, c, data, Op::Gelu { a })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(r, c, data, Op::Relu { a })
    }

    /// Inverted dropout with a caller-supplied uniform draw per element.
    /// `p` must lie in [0, 1); `p == 0` records nothing and returns `a`.
    pub fn dropout(
        &mut self,
        a: NodeId,
        p: f64,
        draws: impl FnMut() -> f64,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p must be in [0,1), got {}", p)));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let mut draws = draws;
        let keep = S::of(1.0 / (1.0 - p));
        let mask: Vec<S> = self.nodes[a]
            .data
            .iter()
            .map(|_| if draws() < p { S::zero() } else { keep })
            .collect();
        let data: Vec<S> = self.nodes[a]
            .data
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(r, c, data, Op::Dropout { a, mask }))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        for &i in idx {
            if i >= r {
                return Err(Error::Internal(format!(
                    "gather_rows index {} out of range for {} rows",
                    i, r
                )));
            }
        }
        let src = &self.nodes[a].data;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            idx.len(),
            c,
            data,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_rows needs at least one part".into()));
        }
        let c = self.nodes[parts[0]].cols;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            if self.nodes[p].cols != c {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += self.nodes[p].rows;
            data.extend_from_slice(&self.nodes[p].data);
        }
        Ok(self.push(
            rows,
            c,
            data,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_cols needs at least one part".into()));
        }
        let r = self.nodes[parts[0]].rows;
        let mut cols = 0;
        for &p in parts {
            if self.nodes[p].rows != r {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            cols += self.nodes[p].cols;
        }
        let mut data = vec![S::zero(); r * cols];
        let mut off = 0;
        for &p in parts {
            let pc = self.nodes[p].cols;
            for i in 0..r {
                let dst = &mut data[i * cols + off..i * cols + off + pc];
                dst.copy_from_slice(&self.nodes[p].data[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        Ok(self.push(
            r,
            cols,
            data,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Mean over rows -> 1 x cols.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        let rf = S::of(r as f64);
        let mut data = vec![S::zero(); c];
        for i in 0..r {
            for j in 0..c {
                data[j] = data[j] + self.nodes[a].data[i * c + j];
            }
        }
        for v in data.iter_mut() {
            *v = *v / rf;
        }
        self.push(1, c, data, Op::MeanRows { a })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let mut s = S::zero();
        for &v in &self.nodes[a].data {
            s = s + v;
        }
        self.push(1, 1, vec![s], Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = S::of(self.nodes[a].data.len() as f64);
        let mut s = S::zero();
        for &v in &self.nodes[a].data {
            s = s + v;
        }
        self.push(1, 1, vec![s / n], Op::MeanAll { a })
    }

    /// Mean over all elements of the stable elementwise BCE
    /// `max(z,0) - z*o + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &Tensor<S>) -> Result<NodeId> {
        let (r, c) = (self.nodes[logits].rows, self.nodes[logits].cols);
        if targets.rows() != r || targets.cols() != c {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: vec![r, c],
                right: targets.shape().to_vec(),
            });
        }
        for &o in targets.data() {
            if o != S::zero() && o != S::one() {
                return Err(Error::Input(format!(
                    "bce targets must be 0 or 1, got {}",
                    o
                )));
            }
        }
        let n = S::of((r * c) as f64);
        let mut total = S::zero();
        for (&z, &o) in self.nodes[logits].data.iter().zip(targets.data()) {
            let pos = if z > S::zero() { z } else { S::zero() };
            total = total + pos - z * o + (S::one() + (-z.abs()).exp()).ln();
        }
        Ok(self.push(
            1,
            1,
            vec![total / n],
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradients for every node reachable from `loss`, which must
    /// be 1 x 1. A second backward on the same tape is a usage error until
    /// [`Tape::reset_grads`] runs.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].rows != 1 || self.nodes[loss].cols != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar node, got {}x{}",
                self.nodes[loss].rows, self.nodes[loss].cols
            )));
        }
        if self.backward_done {
            return Err(Error::Usage(
                "tape already ran backward; call reset_grads first".into(),
            ));
        }
        self.backward_done = true;
        self.grads = self
            .nodes
            .iter()
            .map(|n| vec![S::zero(); n.data.len()])
            .collect();
        self.grads[loss][0] = S::one();

        for id in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut self.grads[id]);
            self.propagate(id, &g);
            self.grads[id] = g;
        }
        Ok(())
    }

    /// Clear gradients so the same tape values can run backward again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Accumulate leaf gradients into the parameter store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) -> Result<()> {
        if !self.backward_done {
            return Err(Error::Usage(
                "accumulate_param_grads before backward".into(),
            ));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param { param } = node.op {
                store.add_grad(param, &self.grads[id]);
            }
        }
        Ok(())
    }

    fn propagate(&mut self, id: NodeId, g: &[S]) {
        let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
        match &self.nodes[id].op {
            Op::Leaf | Op::Param { .. } => {}

            &Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[a].rows, self.nodes[a].cols);
                let n = self.nodes[b].cols;
                // dA = G * B^T
                let bdat = &self.nodes[b].data;
                let mut bt = vec![S::zero(); k * n];
                for i in 0..k {
                    for j in 0..n {
                        bt[j * k + i] = bdat[i * n + j];
                    }
                }
                let da = matmul_raw(g, &bt, m, n, k);
                // dB = A^T * G
                let adat = &self.nodes[a].data;
                let mut at = vec![S::zero(); m * k];
                for i in 0..m {
                    for j in 0..k {
                        at[j * m + i] = adat[i * k + j];
                    }
                }
                let db = matmul_raw(&at, g, k, m, n);
                axpy(&mut self.grads[a], &da);
                axpy(&mut self.grads[b], &db);
            }

            &Op::Add { a, b } => {
                axpy(&mut self.grads[a], g);
                axpy(&mut self.grads[b], g);
            }

            &Op::Sub { a, b } => {
                axpy(&mut self.grads[a], g);
                for (t, &gv) in self.grads[b].iter_mut().zip(g) {
                    *t = *t - gv;
                }
            }

            &Op::MulElem { a, b } => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[b].data)
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a].data)
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                axpy(&mut self.grads[a], &da);
                axpy(&mut self.grads[b], &db);
            }

            &Op::Scale { a, factor } => {
                let da: Vec<S> = g.iter().map(|&gv| gv * factor).collect();
                axpy(&mut self.grads[a], &da);
            }

            &Op::AddRow { a, row } => {
                axpy(&mut self.grads[a], g);
                let ga = &mut self.grads[row];
                for i in 0..rows {
                    for j in 0..cols {
                        ga[j] = ga[j] + g[i * cols + j];
                    }
                }
            }

            &Op::Transpose { a } => {
                let ga = &mut self.grads[a];
                // output is cols x rows of the input
                for i in 0..rows {
                    for j in 0..cols {
                        ga[j * rows + i] = ga[j * rows + i] + g[i * cols + j];
                    }
                }
            }

            &Op::SoftmaxRows { a } => {
                let out = &self.nodes[id].data;
                let mut da = vec![S::zero(); rows * cols];
                for i in 0..rows {
                    let s = &out[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let mut dot = S::zero();
                    for j in 0..cols {
                        dot = dot + gr[j] * s[j];
                    }
                    for j in 0..cols {
                        da[i * cols + j] = s[j] * (gr[j] - dot);
                    }
                }
                axpy(&mut self.grads[a], &da);
            }

            &Op::LayerNorm { x, gamma, beta, eps } => {
                let src = self.nodes[x].data.clone();
                let gdat = self.nodes[gamma].data.clone();
                let cf = S::of(cols as f64);
                let mut dx = vec![S::zero(); rows * cols];
                let mut dgamma = vec![S::zero(); cols];
                let mut dbeta = vec![S::zero(); cols];
                for i in 0..rows {
                    let row = &src[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let mut mean = S::zero();
                    for &v in row {
                        mean = mean + v;
                    }
                    mean = mean / cf;
                    let mut var = S::zero();
                    for &v in row {
                        let d = v - mean;
                        var = var + d * d;
                    }
                    var = var / cf;
                    let inv = S::one() / (var + eps).sqrt();
                    let xhat: Vec<S> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let mut dxh_sum = S::zero();
                    let mut dxh_xh = S::zero();
                    let mut dxh = vec![S::zero(); cols];
                    for j in 0..cols {
                        dgamma[j] = dgamma[j] + gr[j] * xhat[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        dxh[j] = gr[j] * gdat[j];
                        dxh_sum = dxh_sum + dxh[j];
                        dxh_xh = dxh_xh + dxh[j] * xhat[j];
                    }
                    for j in 0..cols {
                        dx[i * cols + j] =
                            inv / cf * (cf * dxh[j] - dxh_sum - xhat[j] * dxh_xh);
                    }
                }
                axpy(&mut self.grads[x], &dx);
                axpy(&mut self.grads[gamma], &dgamma);
                axpy(&mut self.grads[beta], &dbeta);
            }

            &Op::BatchNorm { x, gamma, beta, eps } => {
                let src = self.nodes[x].data.clone();
                let gdat = self.nodes[gamma].data.clone();
                let rf = S::of(rows as f64);
                let mut dx = vec![S::zero(); rows * cols];
                let mut dgamma = vec![S::zero(); cols];
                let mut dbeta = vec![S::zero(); cols];
                for j in 0..cols {
                    let mut mean = S::zero();
                    for i in 0..rows {
                        mean = mean + src[i * cols + j];
                    }
                    mean = mean / rf;
                    let mut var = S::zero();
                    for i in 0..rows {
                        let d = src[i * cols + j] - mean;
                        var = var + d * d;
                    }
                    var = var / rf;
                    let inv = S::one() / (var + eps).sqrt();
                    let mut dxh_sum = S::zero();
                    let mut dxh_xh = S::zero();
                    let mut xhat = vec![S::zero(); rows];
                    let mut dxh = vec![S::zero(); rows];
                    for i in 0..rows {
                        xhat[i] = (src[i * cols + j] - mean) * inv;
                        let gij = g[i * cols + j];
                        dgamma[j] = dgamma[j] + gij * xhat[i];
                        dbeta[j] = dbeta[j] + gij;
                        dxh[i] = gij * gdat[j];
                        dxh_sum = dxh_sum + dxh[i];
                        dxh_xh = dxh_xh + dxh[i] * xhat[i];
                    }
                    for i in 0..rows {
                        dx[i * cols + j] =
                            inv / rf * (rf * dxh[i] - dxh_sum - xhat[i] * dxh_xh);
                    }
                }
                axpy(&mut self.grads[x], &dx);
                axpy(&mut self.grads[gamma], &dgamma);
                axpy(&mut self.grads[beta], &dbeta);
            }

            &Op::Gelu { a } => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a].data)
                    .map(|(&gv, &x)| gv * gelu_grad_scalar(x))
                    .collect();
                axpy(&mut self.grads[a], &da);
            }

            &Op::Relu { a } => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a].data)
                    .map(|(&gv, &x)| if x > S::zero() { gv } else { S::zero() })
                    .collect();
                axpy(&mut self.grads[a], &da);
            }

            Op::Dropout { a, mask } => {
                let a = *a;
                let da: Vec<S> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                axpy(&mut self.grads[a], &da);
            }

            Op::GatherRows { a, idx } => {
                let a = *a;
                let idx = idx.clone();
                let ga = &mut self.grads[a];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        ga[i * cols + j] = ga[i * cols + j] + g[k * cols + j];
                    }
                }
            }

            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let pr = self.nodes[p].rows;
                    let chunk = &g[off * cols..(off + pr) * cols];
                    axpy(&mut self.grads[p], chunk);
                    off += pr;
                }
            }

            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let pc = self.nodes[p].cols;
                    let gp = &mut self.grads[p];
                    for i in 0..rows {
                        for j in 0..pc {
                            gp[i * pc + j] = gp[i * pc + j] + g[i * cols + off + j];
                        }
                    }
                    off += pc;
                }
            }

            &Op::MeanRows { a } => {
                let n = self.nodes[a].rows;
                let nf = S::of(n as f64);
                let ga = &mut self.grads[a];
                for i in 0..n {
                    for j in 0..cols {
                        ga[i * cols + j] = ga[i * cols + j] + g[j] / nf;
                    }
                }
            }

            &Op::SumAll { a } => {
                let gv = g[0];
                for t in self.grads[a].iter_mut() {
                    *t = *t + gv;
                }
            }

            &Op::MeanAll { a } => {
                let n = S::of(self.nodes[a].data.len() as f64);
                let gv = g[0] / n;
                for t in self.grads[a].iter_mut() {
                    *t = *t + gv;
                }
            }

            Op::BceWithLogits { logits, targets } => {
                let logits = *logits;
                let targets = targets.clone();
                let n = S::of(targets.len() as f64);
                let gv = g[0] / n;
                let zdat = self.nodes[logits].data.clone();
                let ga = &mut self.grads[logits];
                for (i, (&z, &o)) in zdat.iter().zip(&targets).enumerate() {
                    let sig = S::one() / (S::one() + (-z).exp());
                    ga[i] = ga[i] + gv * (sig - o);
                }
            }
        }
    }
}

fn axpy<S: Scalar>(target: &mut [S], src: &[S]) {
    for (t, &s) in target.iter_mut().zip(src) {
        *t = *t + s;
    }
}
