//! Reverse-mode gradient tape over dense matrices.
//!
//! Every builder method computes its forward value immediately and records
//! the operation; `backward` replays the recorded operations in exact
//! reverse order. Only leaves registered through [`GradTape::param`] get
//! gradient accumulators — constants (frozen parameters, cached
//! activations) never materialize a gradient, which is what keeps patch
//! training structurally isolated from the base model.

use super::activation::Activation;
use super::matrix::Matrix;

/// Handle to a value on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId(usize);

/// Handle to a registered trainable parameter.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    /// `(m x n) + broadcast(1 x n)`
    AddRowBroadcast(VarId, VarId),
    /// `(m x n) + scalar(1 x 1)` added to every entry
    AddScalarVar(VarId, VarId),
    /// `(m x n) * scalar(1 x 1)`
    MulScalarVar(VarId, VarId),
    MulElem(VarId, VarId),
    Scale(VarId, f64),
    AddConst(VarId),
    Transpose(VarId),
    Activation(VarId, Activation),
    SoftmaxRows(VarId),
    LayerNormRows {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f64,
    },
    EmbeddingGather {
        table: VarId,
        ids: Vec<usize>,
    },
    RowSlice(VarId, usize),
    ColSlice {
        x: VarId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<VarId>),
    MeanAll(VarId),
    /// Max over all entries; ties resolve to the first entry in row-major
    /// order, recorded at forward time.
    MaxAll {
        x: VarId,
        arg: (usize, usize),
    },
    /// Cross-entropy of a `1 x C` logits row against a class label, with
    /// the softmax probabilities saved for the backward pass.
    CrossEntropy {
        logits: VarId,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients for registered parameters, indexed by [`ParamId`].
///
/// A registered parameter the loss does not depend on gets an exact zero
/// matrix, not an absent entry.
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, p: ParamId) -> &Matrix {
        &self.grads[p.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_vec(self) -> Vec<Matrix> {
        self.grads
    }
}

/// The tape itself. One tape per scalar loss evaluation.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<VarId>,
}

impl GradTape {
    pub fn new() -> Self {
        GradTape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, v: VarId) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A frozen input: participates in the forward pass, never receives a
    /// gradient accumulator.
    pub fn constant(&mut self, value: Matrix) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf; returns its registry handle alongside the value id.
    pub fn param(&mut self, value: Matrix) -> (ParamId, VarId) {
        let var = self.push(value, Op::Leaf, true);
        let pid = ParamId(self.params.len());
        self.params.push(var);
        (pid, var)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: VarId) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let value = self.value(a).add(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn add_row_broadcast(&mut self, a: VarId, bias: VarId) -> VarId {
        let value = self.value(a).add_row_broadcast(self.value(bias));
        let ng = self.needs(a) || self.needs(bias);
        self.push(value, Op::AddRowBroadcast(a, bias), ng)
    }

    pub fn add_scalar_var(&mut self, a: VarId, s: VarId) -> VarId {
        let sv = self.value(s).item();
        let value = self.value(a).map(|v| v + sv);
        let ng = self.needs(a) || self.needs(s);
        self.push(value, Op::AddScalarVar(a, s), ng)
    }

    pub fn mul_scalar_var(&mut self, a: VarId, s: VarId) -> VarId {
        let sv = self.value(s).item();
        let value = self.value(a).scale(sv);
        let ng = self.needs(a) || self.needs(s);
        self.push(value, Op::MulScalarVar(a, s), ng)
    }

    pub fn mul_elem(&mut self, a: VarId, b: VarId) -> VarId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mul_elem shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let value = Matrix::from_vec(av.rows(), av.cols(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MulElem(a, b), ng)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let value = self.value(a).scale(c);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn add_const(&mut self, a: VarId, c: f64) -> VarId {
        let value = self.value(a).map(|v| v + c);
        let ng = self.needs(a);
        self.push(value, Op::AddConst(a), ng)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn activation(&mut self, a: VarId, act: Activation) -> VarId {
        let value = act.apply_matrix(self.value(a));
        let ng = self.needs(a);
        self.push(value, Op::Activation(a, act), ng)
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn layer_norm_rows(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: f64) -> VarId {
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        assert_eq!(g.shape(), (1, xv.cols()), "layer_norm gamma shape");
        assert_eq!(b.shape(), (1, xv.cols()), "layer_norm beta shape");
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            layer_norm_row(xv.row(r), g.row(0), b.row(0), eps, out.row_mut(r));
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                eps,
            },
            ng,
        )
    }

    pub fn embedding_gather(&mut self, table: VarId, ids: &[usize]) -> VarId {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        let ng = self.needs(table);
        self.push(
            out,
            Op::EmbeddingGather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn row_slice(&mut self, a: VarId, r: usize) -> VarId {
        let value = Matrix::row_vector(self.value(a).row(r).to_vec());
        let ng = self.needs(a);
        self.push(value, Op::RowSlice(a, r), ng)
    }

    pub fn col_slice(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        self.push(out, Op::ColSlice { x: a, start, len }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let mean = x.data().iter().sum::<f64>() / x.len() as f64;
        let ng = self.needs(a);
        self.push(Matrix::scalar(mean), Op::MeanAll(a), ng)
    }

    pub fn max_all(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let mut best = f64::NEG_INFINITY;
        let mut arg = (0, 0);
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v > best {
                    best = v;
                    arg = (r, c);
                }
            }
        }
        let ng = self.needs(a);
        self.push(Matrix::scalar(best), Op::MaxAll { x: a, arg }, ng)
    }

    /// Numerically stable cross-entropy of `1 x C` logits against `label`.
    pub fn cross_entropy(&mut self, logits: VarId, label: usize) -> VarId {
        let l = self.value(logits);
        assert_eq!(l.rows(), 1, "cross_entropy expects a 1 x C logits row");
        assert!(label < l.cols(), "label {} out of range", label);
        let row = l.row(0);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let loss = lse - row[label];
        let probs: Vec<f64> = row.iter().map(|v| (v - lse).exp()).collect();
        let ng = self.needs(logits);
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            ng,
        )
    }

    /// Convenience: mean of a list of `1 x 1` values.
    pub fn mean_of_scalars(&mut self, parts: &[VarId]) -> VarId {
        let cat = self.concat_cols(parts);
        self.mean_all(cat)
    }

    /// Runs the backward pass from a `1 x 1` loss node and returns the
    /// gradients of every registered parameter.
    pub fn backward(&mut self, loss: VarId) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Matrix::scalar(1.0));
        }

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            // Re-store so parameter leaves keep their accumulated gradient.
            grads[i] = Some(g);
        }

        let collected = self
            .params
            .iter()
            .map(|v| match grads[v.0].take() {
                Some(g) => g,
                None => {
                    let (r, c) = self.value(*v).shape();
                    Matrix::zeros(r, c)
                }
            })
            .collect();
        Gradients { grads: collected }
    }

    fn propagate(&self, node: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let accumulate = |grads: &mut [Option<Matrix>], target: VarId, delta: Matrix, me: &Self| {
            if !me.needs(target) {
                return;
            }
            match &mut grads[target.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let delta = g.matmul(&self.value(*b).transpose());
                    accumulate(grads, *a, delta, self);
                }
                if self.needs(*b) {
                    let delta = self.value(*a).transpose().matmul(g);
                    accumulate(grads, *b, delta, self);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone(), self);
                accumulate(grads, *b, g.clone(), self);
            }
            Op::AddRowBroadcast(a, bias) => {
                accumulate(grads, *a, g.clone(), self);
                if self.needs(*bias) {
                    let mut col_sum = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in col_sum.row_mut(0).iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, *bias, col_sum, self);
                }
            }
            Op::AddScalarVar(a, s) => {
                accumulate(grads, *a, g.clone(), self);
                if self.needs(*s) {
                    let total: f64 = g.data().iter().sum();
                    accumulate(grads, *s, Matrix::scalar(total), self);
                }
            }
            Op::MulScalarVar(a, s) => {
                let sv = self.value(*s).item();
                if self.needs(*a) {
                    accumulate(grads, *a, g.scale(sv), self);
                }
                if self.needs(*s) {
                    let total: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data().iter())
                        .map(|(x, y)| x * y)
                        .sum();
                    accumulate(grads, *s, Matrix::scalar(total), self);
                }
            }
            Op::MulElem(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let delta = elementwise_product(g, bv);
                    accumulate(grads, *a, delta, self);
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let delta = elementwise_product(g, av);
                    accumulate(grads, *b, delta, self);
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c), self),
            Op::AddConst(a) => accumulate(grads, *a, g.clone(), self),
            Op::Transpose(a) => accumulate(grads, *a, g.transpose(), self),
            Op::Activation(a, act) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data().iter())
                        .map(|(gv, xv)| gv * act.derivative(*xv))
                        .collect();
                    accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data), self);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[node].value;
                    let mut delta = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for (d, (yv, gv)) in
                            delta.row_mut(r).iter_mut().zip(yr.iter().zip(gr.iter()))
                        {
                            *d = yv * (gv - inner);
                        }
                    }
                    accumulate(grads, *a, delta, self);
                }
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                eps,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let n = xv.cols() as f64;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                let mut dgamma = Matrix::zeros(1, xv.cols());
                let mut dbeta = Matrix::zeros(1, xv.cols());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let grow = g.row(r);
                    let (mean, sigma) = row_mean_sigma(row, *eps);
                    // x-hat and gamma-weighted gradient for this row
                    let mut sum_gg = 0.0;
                    let mut sum_ggx = 0.0;
                    for j in 0..row.len() {
                        let xhat = (row[j] - mean) / sigma;
                        let gg = grow[j] * gv.get(0, j);
                        sum_gg += gg;
                        sum_ggx += gg * xhat;
                        dgamma.row_mut(0)[j] += grow[j] * xhat;
                        dbeta.row_mut(0)[j] += grow[j];
                    }
                    let mean_gg = sum_gg / n;
                    let mean_ggx = sum_ggx / n;
                    for j in 0..row.len() {
                        let xhat = (row[j] - mean) / sigma;
                        let gg = grow[j] * gv.get(0, j);
                        dx.row_mut(r)[j] = (gg - mean_gg - xhat * mean_ggx) / sigma;
                    }
                }
                accumulate(grads, *x, dx, self);
                accumulate(grads, *gamma, dgamma, self);
                accumulate(grads, *beta, dbeta, self);
            }
            Op::EmbeddingGather { table, ids } => {
                if self.needs(*table) {
                    let t = self.value(*table);
                    let mut delta = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, v) in delta.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *table, delta, self);
                }
            }
            Op::RowSlice(a, r) => {
                if self.needs(*a) {
                    let av = self.value(*a);
                    let mut delta = Matrix::zeros(av.rows(), av.cols());
                    delta.row_mut(*r).copy_from_slice(g.row(0));
                    accumulate(grads, *a, delta, self);
                }
            }
            Op::ColSlice { x, start, len } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut delta = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        delta.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                    }
                    accumulate(grads, *x, delta, self);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut delta = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            delta.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(grads, *p, delta, self);
                    }
                    offset += w;
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let av = self.value(*a);
                    let c = g.item() / av.len() as f64;
                    accumulate(
                        grads,
                        *a,
                        Matrix::from_vec(av.rows(), av.cols(), vec![c; av.len()]),
                        self,
                    );
                }
            }
            Op::MaxAll { x, arg } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut delta = Matrix::zeros(xv.rows(), xv.cols());
                    delta.set(arg.0, arg.1, g.item());
                    accumulate(grads, *x, delta, self);
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                if self.needs(*logits) {
                    let scale = g.item();
                    let mut delta = Matrix::zeros(1, probs.len());
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *label { 1.0 } else { 0.0 };
                        delta.set(0, j, scale * (p - onehot));
                    }
                    accumulate(grads, *logits, delta, self);
                }
            }
        }
    }
}

fn elementwise_product(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// In-place stable softmax over a slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn row_mean_sigma(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, (var + eps).sqrt())
}

/// Layer normalization of one row with learned gain/bias; shared by the
/// tape and the plain (no-tape) forward so both paths agree bit-for-bit.
pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64, out: &mut [f64]) {
    let (mean, sigma) = row_mean_sigma(x, eps);
    for j in 0..x.len() {
        out[j] = gamma[j] * ((x[j] - mean) / sigma) + beta[j];
    }
}

/// Stable scalar cross-entropy used by loss reporting outside the tape.
pub fn cross_entropy_scalar(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut tape = GradTape::new();
        let logits = tape.constant(Matrix::row_vector(vec![0.0, 0.0]));
        let loss = tape.cross_entropy(logits, 0);
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn unregistered_leaves_have_no_grad_slot() {
        let mut tape = GradTape::new();
        let frozen = tape.constant(Matrix::row_vector(vec![2.0, 3.0]));
        let (wid, w) = tape.param(Matrix::row_vector(vec![1.0, -1.0]));
        let prod = tape.mul_elem(frozen, w);
        let loss = tape.mean_all(prod);
        let grads = tape.backward(loss);
        // only the registered parameter appears in the registry
        assert_eq!(grads.len(), 1);
        // d/dw mean(frozen .* w) = frozen / 2
        assert_eq!(grads.get(wid).data(), &[1.0, 1.5]);
    }

    #[test]
    fn loss_independent_param_gets_exact_zero() {
        let mut tape = GradTape::new();
        let (unused, _) = tape.param(Matrix::row_vector(vec![5.0]));
        let (used, w) = tape.param(Matrix::scalar(3.0));
        let sq = tape.mul_elem(w, w);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(unused).data(), &[0.0]);
        assert_eq!(grads.get(used).data(), &[6.0]);
    }

    #[test]
    fn max_all_ties_break_to_first() {
        let mut tape = GradTape::new();
        let (pid, x) = tape.param(Matrix::from_vec(1, 3, vec![0.5, 0.5, 0.1]));
        let m = tape.max_all(x);
        let grads = tape.backward(m);
        assert_eq!(grads.get(pid).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = GradTape::new();
        let x = tape.constant(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let y = tape.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
