use std::collections::HashMap;

use super::{matmul_acc, split_axis, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
struct TripletTerm<S> {
    anchor: usize,
    pos: usize,
    neg: usize,
    d_pos: S,
    d_neg: S,
}

#[derive(Debug)]
enum Op<S> {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, S),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    IndexSelect {
        x: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
    Triplet {
        emb: Var,
        terms: Vec<TripletTerm<S>>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate<S> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub batch_mean: Vec<S>,
    /// Unbiased batch variance (equal to the biased one when N = 1).
    pub batch_var: Vec<S>,
}

/// Tape of operations in recording order.
///
/// Backward visits nodes in exact reverse recording order, so a fixed graph
/// always produces bit-identical gradients.
#[derive(Debug)]
pub struct Graph<S = f32> {
    nodes: Vec<Node<S>>,
    digest: u64,
    stat_updates: Vec<StatUpdate<S>>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            digest: FNV_OFFSET,
            stat_updates: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn mix(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.digest ^= b as u64;
            self.digest = self.digest.wrapping_mul(FNV_PRIME);
        }
    }

    /// Hash of every branch decision taken so far (ReLU gates, max/argmin
    /// selections, hinge activity). Two evaluations with equal digests took
    /// the same piecewise-smooth branch.
    pub fn branch_digest(&self) -> u64 {
        self.digest
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn stat_updates(&self) -> &[StatUpdate<S>] {
        &self.stat_updates
    }

    pub fn push_stat_update(&mut self, update: StatUpdate<S>) {
        self.stat_updates.push(update);
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// `x · W + b` for `x: [N, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape("linear", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(Error::shape("linear bias", ws, bs));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(bv);
        }
        matmul_acc((n, din, dout), xv, false, wv, false, &mut out);
        let t = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    fn check_bn_operands(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::invalid("batch_norm", format!("expected [N, d], got {xs:?}")));
        }
        let d = xs[1];
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::shape("batch_norm", xs, self.shape(p)));
            }
        }
        Ok((xs[0], d))
    }

    /// Training-mode batch norm over the batch axis of `x: [N, d]`.
    ///
    /// Returns the output plus the batch mean and unbiased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<S>, Vec<S>)> {
        let (n, d) = self.check_bn_operands(x, gamma, beta)?;
        if n == 1 {
            log::warn!("batch norm in training mode with a single sample; output equals beta");
        }
        let xv = self.value(x).data();
        let nn = S::from_f64(n as f64);
        let mut mean = vec![S::zero(); d];
        for row in xv.chunks_exact(d) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nn);
        let mut var = vec![S::zero(); d];
        for row in xv.chunks_exact(d) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let unbiased: Vec<S> = if n > 1 {
            var.iter().map(|&s| s / S::from_f64((n - 1) as f64)).collect()
        } else {
            var.clone()
        };
        var.iter_mut().for_each(|s| *s = *s / nn);
        let e = S::from_f64(eps);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + e).sqrt()).collect();
        let out = self.normalize(x, gamma, beta, &mean, &inv_std, true);
        Ok((out, mean, unbiased))
    }

    /// Inference-mode batch norm using fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[S],
        var: &[S],
        eps: f64,
    ) -> Result<Var> {
        let (_, d) = self.check_bn_operands(x, gamma, beta)?;
        if mean.len() != d || var.len() != d {
            return Err(Error::shape("batch_norm stats", &[d], &[mean.len(), var.len()]));
        }
        let e = S::from_f64(eps);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + e).sqrt()).collect();
        Ok(self.normalize(x, gamma, beta, mean, &inv_std, false))
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[S], inv_std: &[S], batch_stats: bool) -> Var {
        let shape = self.shape(x).to_vec();
        let d = shape[1];
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(self.value(x).len());
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks_exact(d) {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::raw(shape, out);
        self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                batch_stats,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let t = Tensor::raw(
            src.shape().to_vec(),
            src.data().iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect(),
        );
        let mut word = 0u64;
        let mut bits = 0;
        let mask: Vec<bool> = src.data().iter().map(|&v| v > S::zero()).collect();
        for on in mask {
            word = (word << 1) | on as u64;
            bits += 1;
            if bits == 64 {
                self.mix(word);
                word = 0;
                bits = 0;
            }
        }
        self.mix(word);
        self.push(t, Op::Relu(x))
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        Ok(Tensor::raw(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: S) -> Var {
        let src = self.value(x);
        let t = Tensor::raw(
            src.shape().to_vec(),
            src.data().iter().map(|&v| v * k).collect(),
        );
        self.push(t, Op::Scale(x, k))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "empty operand list"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::raw(shape, data);
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Gathers `indices` along `axis`.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid("index_select", format!("axis {axis} out of range for {shape:?}")));
        }
        if indices.is_empty() {
            return Err(Error::invalid("index_select", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(Error::invalid("index_select", format!("index {bad} >= {}", shape[axis])));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * len + i) * inner;
                data.extend_from_slice(&src.data()[start..start + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        let t = Tensor::raw(out_shape, data);
        Ok(self.push(
            t,
            Op::IndexSelect {
                x,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    fn reduced_shape(&self, x: Var, axis: usize, op: &'static str) -> Result<Vec<usize>> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::invalid(op, format!("axis {axis} out of range for {shape:?}")));
        }
        let mut out = shape.to_vec();
        out.remove(axis);
        Ok(out)
    }

    /// Mean over `axis`. The result is clamped into the slice's [min, max]
    /// range so a slice of identical values reduces to exactly that value.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out_shape = self.reduced_shape(x, axis, "mean")?;
        let src = self.value(x);
        let (outer, len, inner) = split_axis(src.shape(), axis);
        let n = S::from_f64(len as f64);
        let d = src.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut sum = vec![S::zero(); inner];
        let mut lo = vec![S::zero(); inner];
        let mut hi = vec![S::zero(); inner];
        for block in d.chunks_exact(len * inner) {
            sum.fill(S::zero());
            lo.fill(S::infinity());
            hi.fill(S::neg_infinity());
            for row in block.chunks_exact(inner) {
                for (((&v, s), l), h) in row.iter().zip(&mut sum).zip(&mut lo).zip(&mut hi) {
                    *s = *s + v;
                    *l = if v < *l { v } else { *l };
                    *h = if v > *h { v } else { *h };
                }
            }
            data.extend((0..inner).map(|k| (sum[k] / n).max(lo[k]).min(hi[k])));
        }
        let t = Tensor::raw(out_shape, data);
        Ok(self.push(t, Op::Mean { x, axis }))
    }

    /// Max over `axis`; ties resolve to the lowest index, which alone
    /// receives the gradient.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out_shape = self.reduced_shape(x, axis, "max")?;
        let src = self.value(x);
        let (outer, len, inner) = split_axis(src.shape(), axis);
        let d = src.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * len * inner;
            let mut best: Vec<S> = d[base..base + inner].to_vec();
            let mut at: Vec<usize> = (base..base + inner).collect();
            for i in 1..len {
                let start = base + i * inner;
                for (k, &v) in d[start..start + inner].iter().enumerate() {
                    if v > best[k] {
                        best[k] = v;
                        at[k] = start + k;
                    }
                }
            }
            data.extend(best);
            argmax.extend(at);
        }
        for &a in &argmax {
            self.mix(a as u64);
        }
        let t = Tensor::raw(out_shape, data);
        Ok(self.push(t, Op::Max { x, argmax }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Summed softmax cross-entropy: `Σ_n −log softmax(logits[n])[labels[n]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let mut loss = S::zero();
        let mut probs = Vec::with_capacity(labels.len() * k);
        for (row, &y) in self.value(logits).data().chunks_exact(k).zip(labels) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let z: S = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss = loss + (lse - row[y]);
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Batch-hard triplet loss with unsquared Euclidean distances:
    /// `Σ_a [alpha + max_{p~a} d(a,p) − min_{n≁a} d(a,n)]_+`.
    ///
    /// The positive set of an anchor includes the anchor itself.
    pub fn batch_hard_triplet(&mut self, emb: Var, labels: &[usize], alpha: S) -> Result<Var> {
        let shape = self.shape(emb).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("batch_hard_triplet", &shape, &[labels.len()]));
        }
        if labels.iter().all(|&l| l == labels[0]) {
            return Err(Error::invalid(
                "batch_hard_triplet",
                "batch holds a single identity, no negatives to mine",
            ));
        }
        let (n, d) = (shape[0], shape[1]);
        let e = self.value(emb).data();
        let dist = |a: usize, b: usize| -> S {
            e[a * d..(a + 1) * d]
                .iter()
                .zip(&e[b * d..(b + 1) * d])
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<S>()
                .sqrt()
        };
        let mut loss = S::zero();
        let mut terms = Vec::new();
        let mut decisions = Vec::with_capacity(n * 3);
        for a in 0..n {
            let mut pos: Option<(usize, S)> = None;
            let mut neg: Option<(usize, S)> = None;
            for b in 0..n {
                let dab = dist(a, b);
                if labels[b] == labels[a] {
                    if pos.map_or(true, |(_, best)| dab > best) {
                        pos = Some((b, dab));
                    }
                } else if neg.map_or(true, |(_, best)| dab < best) {
                    neg = Some((b, dab));
                }
            }
            let (p, dp) = pos.expect("anchor is its own positive");
            let (q, dn) = neg.expect("at least two identities present");
            let margin = alpha + dp - dn;
            let active = margin > S::zero();
            decisions.extend([p as u64, q as u64, active as u64]);
            if active {
                loss = loss + margin;
                terms.push(TripletTerm {
                    anchor: a,
                    pos: p,
                    neg: q,
                    d_pos: dp,
                    d_neg: dn,
                });
            }
        }
        for v in decisions {
            self.mix(v);
        }
        Ok(self.push(Tensor::scalar(loss), Op::Triplet { emb, terms }))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        fn acc<S: Real>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut Vec<S> {
            grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
        }

        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    out.leaves.insert(Var(idx), Tensor::raw(node.value.shape().to_vec(), g));
                }
                Op::Param(id) => {
                    let entry = out
                        .params
                        .entry(*id)
                        .or_insert_with(|| Tensor::zeros(node.value.shape()));
                    for (a, &v) in entry.data_mut().iter_mut().zip(&g) {
                        *a = *a + v;
                    }
                    out.leaves.insert(Var(idx), Tensor::raw(node.value.shape().to_vec(), g));
                }
                Op::Linear { x, w, b } => {
                    let xs = self.shape(*x);
                    let (n, din) = (xs[0], xs[1]);
                    let dout = self.shape(*w)[1];
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    // dx += g·Wᵀ, dW += xᵀ·g
                    matmul_acc((n, dout, din), &g, false, wv, true, acc(&mut grads, *x, n * din));
                    matmul_acc((din, n, dout), xv, true, &g, false, acc(&mut grads, *w, din * dout));
                    let db = acc(&mut grads, *b, dout);
                    for row in g.chunks_exact(dout) {
                        for (d, &gj) in db.iter_mut().zip(row) {
                            *d = *d + gj;
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let shape = node.value.shape();
                    let (n, d) = (shape[0], shape[1]);
                    let gm = self.value(*gamma).data();
                    let mut sum_dy = vec![S::zero(); d];
                    let mut sum_dy_xhat = vec![S::zero(); d];
                    for r in 0..n {
                        for j in 0..d {
                            let dy = g[r * d + j];
                            sum_dy[j] = sum_dy[j] + dy;
                            sum_dy_xhat[j] = sum_dy_xhat[j] + dy * xhat[r * d + j];
                        }
                    }
                    {
                        let dx = acc(&mut grads, *x, n * d);
                        let nn = S::from_f64(n as f64);
                        for r in 0..n {
                            for j in 0..d {
                                let k = r * d + j;
                                let v = if *batch_stats {
                                    gm[j] * inv_std[j] / nn
                                        * (nn * g[k] - sum_dy[j] - xhat[k] * sum_dy_xhat[j])
                                } else {
                                    g[k] * gm[j] * inv_std[j]
                                };
                                dx[k] = dx[k] + v;
                            }
                        }
                    }
                    {
                        let dg = acc(&mut grads, *gamma, d);
                        for (a, &v) in dg.iter_mut().zip(&sum_dy_xhat) {
                            *a = *a + v;
                        }
                    }
                    let db = acc(&mut grads, *beta, d);
                    for (a, &v) in db.iter_mut().zip(&sum_dy) {
                        *a = *a + v;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx = acc(&mut grads, *x, xv.len());
                    for ((a, &gv), &v) in dx.iter_mut().zip(&g).zip(xv) {
                        if v > S::zero() {
                            *a = *a + gv;
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                    {
                        let da = acc(&mut grads, *a, g.len());
                        for (t, &v) in da.iter_mut().zip(&g) {
                            *t = *t + v;
                        }
                    }
                    let db = acc(&mut grads, *b, g.len());
                    for (t, &v) in db.iter_mut().zip(&g) {
                        *t = *t + sign * v;
                    }
                }
                Op::Scale(x, k) => {
                    let dx = acc(&mut grads, *x, g.len());
                    for (t, &v) in dx.iter_mut().zip(&g) {
                        *t = *t + *k * v;
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let plen = self.shape(p)[*axis];
                        let dp = acc(&mut grads, p, outer * plen * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + plen) * inner];
                            for (t, &v) in dp[o * plen * inner..(o + 1) * plen * inner].iter_mut().zip(src) {
                                *t = *t + v;
                            }
                        }
                        offset += plen;
                    }
                }
                Op::Reshape(x) => {
                    let dx = acc(&mut grads, *x, g.len());
                    for (t, &v) in dx.iter_mut().zip(&g) {
                        *t = *t + v;
                    }
                }
                Op::IndexSelect { x, axis, indices } => {
                    let xs = self.shape(*x);
                    let (outer, len, inner) = split_axis(xs, *axis);
                    let dx = acc(&mut grads, *x, outer * len * inner);
                    for o in 0..outer {
                        for (j, &i) in indices.iter().enumerate() {
                            let src = &g[(o * indices.len() + j) * inner..][..inner];
                            for (t, &v) in dx[(o * len + i) * inner..][..inner].iter_mut().zip(src) {
                                *t = *t + v;
                            }
                        }
                    }
                }
                Op::Mean { x, axis } => {
                    let xs = self.shape(*x);
                    let (outer, len, inner) = split_axis(xs, *axis);
                    let n = S::from_f64(len as f64);
                    let dx = acc(&mut grads, *x, outer * len * inner);
                    for o in 0..outer {
                        for i in 0..len {
                            for k in 0..inner {
                                let t = &mut dx[(o * len + i) * inner + k];
                                *t = *t + g[o * inner + k] / n;
                            }
                        }
                    }
                }
                Op::Max { x, argmax } => {
                    let len = self.value(*x).len();
                    let dx = acc(&mut grads, *x, len);
                    for (&src, &v) in argmax.iter().zip(&g) {
                        dx[src] = dx[src] + v;
                    }
                }
                Op::SumAll(x) => {
                    let len = self.value(*x).len();
                    let dx = acc(&mut grads, *x, len);
                    for t in dx.iter_mut() {
                        *t = *t + g[0];
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let k = self.shape(*logits)[1];
                    let dl = acc(&mut grads, *logits, probs.len());
                    for (r, &y) in labels.iter().enumerate() {
                        for c in 0..k {
                            let onehot = if c == y { S::one() } else { S::zero() };
                            dl[r * k + c] = dl[r * k + c] + g[0] * (probs[r * k + c] - onehot);
                        }
                    }
                }
                Op::Triplet { emb, terms } => {
                    let d = self.shape(*emb)[1];
                    let e = self.value(*emb).data();
                    let de = acc(&mut grads, *emb, e.len());
                    for t in terms {
                        for (other, dist, sign) in [(t.pos, t.d_pos, S::one()), (t.neg, t.d_neg, -S::one())] {
                            if dist <= S::zero() {
                                continue;
                            }
                            let k = sign * g[0] / dist;
                            for j in 0..d {
                                let diff = e[t.anchor * d + j] - e[other * d + j];
                                de[t.anchor * d + j] = de[t.anchor * d + j] + k * diff;
                                de[other * d + j] = de[other * d + j] - k * diff;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of a scalar with respect to every leaf reached by backward.
#[derive(Debug)]
pub struct Gradients<S> {
    params: HashMap<ParamId, Tensor<S>>,
    leaves: HashMap<Var, Tensor<S>>,
}

impl<S: Real> Gradients<S> {
    /// Gradient for a parameter, summed over every leaf that loaded it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.get(&id)
    }

    /// Gradient for an individual leaf node (input or parameter).
    pub fn leaf(&self, v: Var) -> Option<&Tensor<S>> {
        self.leaves.get(&v)
    }
}
