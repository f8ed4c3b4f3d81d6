//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value plus whatever it
//! needs for the backward sweep. Nodes whose inputs never reach a leaf that
//! requires a gradient are skipped during [`Tape::backward`], so forward
//! passes through frozen parameters cost nothing extra.

use super::tensor::{log_softmax_row, softmax_row, Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One supervised row for the semantic pull/push terms: the hidden-state row
/// and the selected candidate vectors it is compared against.
#[derive(Clone, Debug)]
pub struct SemTarget<S> {
    pub row: usize,
    pub vectors: Matrix<S>,
}

enum Op<S> {
    Leaf,
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<S>,
        inv_std: Vec<S>,
    },
    Gelu {
        x: Var,
    },
    CausalAttention {
        qkv: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<S>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix<S>,
        count: usize,
    },
    KlDistill {
        logits: Var,
        rows: Vec<usize>,
        teacher_probs: Matrix<S>,
        student_probs: Matrix<S>,
        temperature: S,
    },
    SemPull {
        hidden: Var,
        targets: Vec<SemTarget<S>>,
        scale: S,
    },
    SemPush {
        hidden: Var,
        targets: Vec<SemTarget<S>>,
        scale: S,
        margin: S,
    },
    Combine {
        terms: Vec<(Var, S)>,
    },
}

struct Node<S> {
    value: Matrix<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node of the tape that needed one.
pub struct Gradients<S> {
    grads: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&Matrix<S>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix<S>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

const LN_EPS: f64 = 1e-5;

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix<S> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let cols = t.cols();
        let mut out = Matrix::zeros(ids.len(), cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(out, Op::MatMul { a, b }, &[a, b])
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        let b = &self.nodes[bias.0].value;
        assert_eq!(b.rows(), 1);
        assert_eq!(b.cols(), out.cols());
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias { x, bias }, &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        out.add_assign(&self.nodes[b.0].value);
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let (rows, cols) = xv.shape();
        let n = S::of(cols as f64);
        let eps = S::of(LN_EPS);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xh[c] * g.data()[c] + b.data()[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut() {
            *v = gelu(*v);
        }
        self.push(out, Op::Gelu { x }, &[x])
    }

    /// Multi-head causal self-attention over `qkv = [q | k | v]` with rows laid
    /// out as consecutive sequences of `seq_len` positions.
    pub fn causal_attention(&mut self, qkv: Var, seq_len: usize, heads: usize) -> Var {
        let qv = &self.nodes[qkv.0].value;
        let (rows, three_d) = qv.shape();
        assert_eq!(three_d % 3, 0);
        let d = three_d / 3;
        assert_eq!(d % heads, 0);
        assert_eq!(rows % seq_len, 0);
        let dh = d / heads;
        let n_seq = rows / seq_len;
        let scale = S::one() / S::of(dh as f64).sqrt();
        let mut out = Matrix::zeros(rows, d);
        let mut probs = vec![S::zero(); n_seq * heads * seq_len * seq_len];
        let mut scores = vec![S::zero(); seq_len];
        for s in 0..n_seq {
            for h in 0..heads {
                let pbase = (s * heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let qi = &qv.row(s * seq_len + i)[h * dh..(h + 1) * dh];
                    for j in 0..=i {
                        let kj = &qv.row(s * seq_len + j)[d + h * dh..d + (h + 1) * dh];
                        scores[j] = dot(qi, kj) * scale;
                    }
                    let p = &mut probs[pbase + i * seq_len..pbase + i * seq_len + i + 1];
                    softmax_row(&scores[..=i], S::one(), p);
                    let o = &mut out.row_mut(s * seq_len + i)[h * dh..(h + 1) * dh];
                    for j in 0..=i {
                        let vj = &qv.row(s * seq_len + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        let pij = p[j];
                        for (ov, &vv) in o.iter_mut().zip(vj) {
                            *ov += pij * vv;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::CausalAttention {
                qkv,
                seq_len,
                heads,
                probs,
            },
            &[qkv],
        )
    }

    /// Mean negative log-likelihood over rows that carry a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.rows(), targets.len());
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut logp = vec![S::zero(); lv.cols()];
        let mut total = S::zero();
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            softmax_row(lv.row(r), S::one(), probs.row_mut(r));
            if let Some(t) = *t {
                log_softmax_row(lv.row(r), S::one(), &mut logp);
                total -= logp[t];
                count += 1;
            }
        }
        let value = if count == 0 {
            S::zero()
        } else {
            total / S::of(count as f64)
        };
        self.push(
            Matrix::scalar(value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// `T² · mean_r KL(teacher_T ‖ student_T)` over the listed rows.
    pub fn kl_distill(
        &mut self,
        logits: Var,
        teacher_logits: &Matrix<S>,
        rows: &[usize],
        temperature: S,
    ) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.shape(), teacher_logits.shape());
        let v = lv.cols();
        let mut teacher_probs = Matrix::zeros(lv.rows(), v);
        let mut student_probs = Matrix::zeros(lv.rows(), v);
        let mut lp = vec![S::zero(); v];
        let mut lq = vec![S::zero(); v];
        let mut total = S::zero();
        for &r in rows {
            log_softmax_row(teacher_logits.row(r), temperature, &mut lp);
            log_softmax_row(lv.row(r), temperature, &mut lq);
            softmax_row(teacher_logits.row(r), temperature, teacher_probs.row_mut(r));
            softmax_row(lv.row(r), temperature, student_probs.row_mut(r));
            let p = teacher_probs.row(r);
            let mut kl = S::zero();
            for c in 0..v {
                if p[c] > S::zero() {
                    kl += p[c] * (lp[c] - lq[c]);
                }
            }
            total += kl;
        }
        let value = if rows.is_empty() {
            S::zero()
        } else {
            temperature * temperature * total / S::of(rows.len() as f64)
        };
        self.push(
            Matrix::scalar(value),
            Op::KlDistill {
                logits,
                rows: rows.to_vec(),
                teacher_probs,
                student_probs,
                temperature,
            },
            &[logits],
        )
    }

    /// `scale · Σ_targets mean_p MSE(hidden[row], p)`.
    pub fn sem_pull(&mut self, hidden: Var, targets: Vec<SemTarget<S>>, scale: S) -> Var {
        let hv = &self.nodes[hidden.0].value;
        let mut total = S::zero();
        for t in &targets {
            total += mean_mse(hv.row(t.row), &t.vectors);
        }
        self.push(
            Matrix::scalar(scale * total),
            Op::SemPull {
                hidden,
                targets,
                scale,
            },
            &[hidden],
        )
    }

    /// `scale · Σ_targets mean_a [margin − MSE(hidden[row], a)]₊`.
    pub fn sem_push(
        &mut self,
        hidden: Var,
        targets: Vec<SemTarget<S>>,
        scale: S,
        margin: S,
    ) -> Var {
        let hv = &self.nodes[hidden.0].value;
        let mut total = S::zero();
        for t in &targets {
            total += mean_hinge(hv.row(t.row), &t.vectors, margin);
        }
        self.push(
            Matrix::scalar(scale * total),
            Op::SemPush {
                hidden,
                targets,
                scale,
                margin,
            },
            &[hidden],
        )
    }

    /// Weighted sum of scalar nodes, accumulated left to right.
    pub fn combine(&mut self, terms: &[(Var, S)]) -> Var {
        let mut total = S::zero();
        for &(v, w) in terms {
            total += w * self.nodes[v.0].value.item();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            Matrix::scalar(total),
            Op::Combine {
                terms: terms.to_vec(),
            },
            &inputs,
        )
    }

    /// Back-propagate from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(S::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(&self, node: &Node<S>, g: &Matrix<S>, grads: &mut [Option<Matrix<S>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Gather { table, ids } => {
                let shape = self.value(*table).shape();
                let acc = slot(grads, *table, shape);
                for (r, &id) in ids.iter().enumerate() {
                    for (a, &gv) in acc.row_mut(id).iter_mut().zip(g.row(r)) {
                        *a += gv;
                    }
                }
            }
            Op::MatMul { a, b } => {
                if self.wants(*a) {
                    let shape = self.value(*a).shape();
                    g.matmul_nt_into(self.value(*b), slot(grads, *a, shape));
                }
                if self.wants(*b) {
                    let shape = self.value(*b).shape();
                    self.value(*a).matmul_tn_into(g, slot(grads, *b, shape));
                }
            }
            Op::AddBias { x, bias } => {
                if self.wants(*x) {
                    slot(grads, *x, g.shape()).add_assign(g);
                }
                if self.wants(*bias) {
                    let acc = slot(grads, *bias, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (a, &gv) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *a += gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    slot(grads, *b, g.shape()).add_assign(g);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                let gv = self.value(*gain).data().to_vec();
                if self.wants(*gain) {
                    let acc = slot(grads, *gain, (1, cols));
                    for r in 0..rows {
                        for ((a, &gr), &xh) in
                            acc.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r))
                        {
                            *a += gr * xh;
                        }
                    }
                }
                if self.wants(*bias) {
                    let acc = slot(grads, *bias, (1, cols));
                    for r in 0..rows {
                        for (a, &gr) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *a += gr;
                        }
                    }
                }
                if self.wants(*x) {
                    let n = S::of(cols as f64);
                    let acc = slot(grads, *x, (rows, cols));
                    let mut dxhat = vec![S::zero(); cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let mut mean_d = S::zero();
                        let mut mean_dx = S::zero();
                        for c in 0..cols {
                            dxhat[c] = gr[c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xh[c];
                        }
                        mean_d = mean_d / n;
                        mean_dx = mean_dx / n;
                        let is = inv_std[r];
                        for (c, a) in acc.row_mut(r).iter_mut().enumerate() {
                            *a += is * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                let acc = slot(grads, *x, xv.shape());
                for ((a, &gv), &v) in acc.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *a += gv * gelu_grad(v);
                }
            }
            Op::CausalAttention {
                qkv,
                seq_len,
                heads,
                probs,
            } => {
                let qv = self.value(*qkv);
                let seq_len = *seq_len;
                let heads = *heads;
                let (rows, three_d) = qv.shape();
                let d = three_d / 3;
                let dh = d / heads;
                let n_seq = rows / seq_len;
                let scale = S::one() / S::of(dh as f64).sqrt();
                let acc = slot(grads, *qkv, (rows, three_d));
                let mut dp = vec![S::zero(); seq_len];
                for s in 0..n_seq {
                    for h in 0..heads {
                        let pbase = (s * heads + h) * seq_len * seq_len;
                        for i in 0..seq_len {
                            let ri = s * seq_len + i;
                            let gi = &g.row(ri)[h * dh..(h + 1) * dh];
                            let p = &probs[pbase + i * seq_len..pbase + i * seq_len + i + 1];
                            let mut weighted = S::zero();
                            for j in 0..=i {
                                let rj = s * seq_len + j;
                                let vj = &qv.row(rj)[2 * d + h * dh..2 * d + (h + 1) * dh];
                                dp[j] = dot(gi, vj);
                                weighted += p[j] * dp[j];
                                let dv = &mut acc.row_mut(rj)[2 * d + h * dh..2 * d + (h + 1) * dh];
                                for (a, &gv) in dv.iter_mut().zip(gi) {
                                    *a += p[j] * gv;
                                }
                            }
                            for j in 0..=i {
                                let ds = p[j] * (dp[j] - weighted) * scale;
                                if ds == S::zero() {
                                    continue;
                                }
                                let rj = s * seq_len + j;
                                // dq_i += ds · k_j
                                for c in 0..dh {
                                    let kjc = qv.row(rj)[d + h * dh + c];
                                    acc.row_mut(ri)[h * dh + c] += ds * kjc;
                                }
                                // dk_j += ds · q_i
                                for c in 0..dh {
                                    let qic = qv.row(ri)[h * dh + c];
                                    acc.row_mut(rj)[d + h * dh + c] += ds * qic;
                                }
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let scale = g.item() / S::of(*count as f64);
                let acc = slot(grads, *logits, probs.shape());
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let a = acc.row_mut(r);
                    for (c, &p) in probs.row(r).iter().enumerate() {
                        a[c] += scale * p;
                    }
                    a[t] -= scale;
                }
            }
            Op::KlDistill {
                logits,
                rows,
                teacher_probs,
                student_probs,
                temperature,
            } => {
                if rows.is_empty() {
                    return;
                }
                let scale = g.item() * *temperature / S::of(rows.len() as f64);
                let acc = slot(grads, *logits, student_probs.shape());
                for &r in rows {
                    let a = acc.row_mut(r);
                    for ((av, &q), &p) in a
                        .iter_mut()
                        .zip(student_probs.row(r))
                        .zip(teacher_probs.row(r))
                    {
                        *av += scale * (q - p);
                    }
                }
            }
            Op::SemPull {
                hidden,
                targets,
                scale,
            } => {
                let hv = self.value(*hidden);
                let d = hv.cols();
                let acc = slot(grads, *hidden, hv.shape());
                let outer = g.item() * *scale;
                for t in targets {
                    let c = t.vectors.rows();
                    let coef = outer * S::of(2.0) / (S::of(d as f64) * S::of(c as f64));
                    let h = hv.row(t.row);
                    let a = acc.row_mut(t.row);
                    for k in 0..c {
                        for ((av, &hx), &px) in a.iter_mut().zip(h).zip(t.vectors.row(k)) {
                            *av += coef * (hx - px);
                        }
                    }
                }
            }
            Op::SemPush {
                hidden,
                targets,
                scale,
                margin,
            } => {
                let hv = self.value(*hidden);
                let d = hv.cols();
                let acc = slot(grads, *hidden, hv.shape());
                let outer = g.item() * *scale;
                for t in targets {
                    let c = t.vectors.rows();
                    let coef = outer * S::of(2.0) / (S::of(d as f64) * S::of(c as f64));
                    let h = hv.row(t.row);
                    let a = acc.row_mut(t.row);
                    for k in 0..c {
                        let av_row = t.vectors.row(k);
                        if *margin - mse(h, av_row) <= S::zero() {
                            continue;
                        }
                        for ((av, &hx), &ax) in a.iter_mut().zip(h).zip(av_row) {
                            *av -= coef * (hx - ax);
                        }
                    }
                }
            }
            Op::Combine { terms } => {
                for &(v, w) in terms {
                    if self.wants(v) {
                        slot(grads, v, (1, 1)).data_mut()[0] += w * g.item();
                    }
                }
            }
        }
    }
}

fn slot<S: Scalar>(
    grads: &mut [Option<Matrix<S>>],
    var: Var,
    shape: (usize, usize),
) -> &mut Matrix<S> {
    grads[var.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `(1/d)·‖x − y‖²`.
#[inline]
pub fn mse<S: Scalar>(x: &[S], y: &[S]) -> S {
    let d = S::of(x.len() as f64);
    x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>() / d
}

fn mean_mse<S: Scalar>(h: &[S], vectors: &Matrix<S>) -> S {
    let c = vectors.rows();
    if c == 0 {
        return S::zero();
    }
    (0..c).map(|k| mse(h, vectors.row(k))).sum::<S>() / S::of(c as f64)
}

fn mean_hinge<S: Scalar>(h: &[S], vectors: &Matrix<S>, margin: S) -> S {
    let c = vectors.rows();
    if c == 0 {
        return S::zero();
    }
    (0..c)
        .map(|k| (margin - mse(h, vectors.row(k))).max(S::zero()))
        .sum::<S>()
        / S::of(c as f64)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

#[inline]
fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let inner = c * (x + S::of(0.044715) * x * x * x);
    S::of(0.5) * x * (S::one() + inner.tanh())
}

#[inline]
fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let inner = c * (x + S::of(0.044715) * x * x * x);
    let t = inner.tanh();
    S::of(0.5) * (S::one() + t)
        + S::of(0.5) * x * (S::one() - t * t) * c * (S::one() + S::of(3.0 * 0.044715) * x * x)
}
