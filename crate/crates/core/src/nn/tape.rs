//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records one forward pass. Parameters are borrowed from a
//! [`ParamSet`] rather than copied; [`Tape::backward`] returns gradients for
//! every parameter that took part in the pass.

use std::rc::Rc;

use super::params::{ParamId, ParamSet};
use super::tensor::{gemm, MatRef, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A contiguous run of rows belonging to one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

const LN_EPS: f32 = 1e-5;
const COS_EPS: f32 = 1e-8;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, rstd: Vec<f32> },
    Gelu { x: Var, slope: Vec<f32> },
    Attention { q: Var, k: Var, v: Var, segs: Rc<Vec<Segment>>, heads: usize, probs: Vec<Vec<f32>> },
    Embedding { table: Var, ids: Vec<u32> },
    GatherRows { x: Var, idx: Vec<usize> },
    MeanPool { x: Var, segs: Rc<Vec<Segment>> },
    CrossEntropy { logits: Var, targets: Vec<u32>, probs: Tensor },
    SquaredError { x: Var, target: Tensor },
    CosineError { x: Var, target: Tensor },
    BceWithLogits { z: Var, labels: Vec<f32> },
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self { params, nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f32 {
        self.value(v).data[0]
    }

    pub fn into_value(mut self, v: Var) -> Tensor {
        match std::mem::replace(&mut self.nodes[v.0].value, Value::Owned(Tensor::zeros(0, 0))) {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(id).clone(),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(av.rows, bv.cols);
        gemm(1.0, MatRef::of(av), MatRef::of(bv), 0.0, &mut out.data, bv.cols);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut out = self.value(x).clone();
        let bias = self.value(b);
        assert_eq!(bias.data.len(), out.cols, "bias width mismatch");
        for row in out.data.chunks_mut(bias.data.len()) {
            for (o, bb) in row.iter_mut().zip(&bias.data) {
                *o += *bb;
            }
        }
        self.push(out, Op::AddBias(x, b))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Var {
        let mut out = self.value(x).clone();
        out.add_assign(self.value(y));
        self.push(out, Op::Add(x, y))
    }

    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let gamma = self.param(gamma);
        let beta = self.param(beta);
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Tensor::zeros(rows, cols);
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = &mut out.data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                o[c] = xhat.data[r * cols + c] * g[c] + b[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut slope = Vec::with_capacity(out.data.len());
        for v in &mut out.data {
            let (y, dy) = gelu_with_grad(*v);
            *v = y;
            slope.push(dy);
        }
        self.push(out, Op::Gelu { x, slope })
    }

    /// Multi-head scaled dot-product attention restricted to each segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segs: Rc<Vec<Segment>>, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        assert_eq!(d % heads, 0, "hidden width must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut out = Tensor::zeros(n, d);
        let mut probs = Vec::with_capacity(segs.len() * heads);
        for seg in segs.iter() {
            let l = seg.len;
            for h in 0..heads {
                let qs = MatRef::block(&qv.data, d, seg.start, l, h * dh, dh);
                let ks = MatRef::block(&kv.data, d, seg.start, l, h * dh, dh);
                let vs = MatRef::block(&vv.data, d, seg.start, l, h * dh, dh);
                let mut p = vec![0.0f32; l * l];
                gemm(scale, qs, ks.t(), 0.0, &mut p, l);
                for row in p.chunks_mut(l) {
                    softmax_in_place(row);
                }
                let pm = MatRef { data: &p, rows: l, cols: l, row_stride: l as isize, col_stride: 1 };
                gemm(1.0, pm, vs, 0.0, &mut out.data[seg.start * d + h * dh..], d);
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, segs, heads, probs })
    }

    pub fn embedding(&mut self, table: ParamId, ids: &[u32]) -> Var {
        let table = self.param(table);
        let tv = self.value(table);
        let mut out = Tensor::zeros(ids.len(), tv.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tv.row(id as usize));
        }
        self.push(out, Op::Embedding { table, ids: ids.to_vec() })
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(idx.len(), xv.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn mean_pool(&mut self, x: Var, segs: Rc<Vec<Segment>>) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(segs.len(), xv.cols);
        for (s, seg) in segs.iter().enumerate() {
            let o = out.row_mut(s);
            for r in seg.start..seg.start + seg.len {
                for (a, b) in o.iter_mut().zip(xv.row(r)) {
                    *a += *b;
                }
            }
            let inv = 1.0 / seg.len as f32;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        self.push(out, Op::MeanPool { x, segs })
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let mut probs = lv.clone();
        let mut loss = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            softmax_in_place(row);
            let p = row[t as usize];
            // f32::max would swallow a NaN here and hide divergence.
            loss -= (if p.is_nan() { p } else { p.max(1e-30) } as f64).ln();
        }
        let out = Tensor::from_vec(1, 1, vec![(loss / targets.len().max(1) as f64) as f32]);
        self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Mean over rows of the squared L2 distance to a fixed target.
    pub fn squared_error(&mut self, x: Var, target: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape());
        let total: f64 = xv.data.iter().zip(&target.data).map(|(a, b)| ((a - b) * (a - b)) as f64).sum();
        let out = Tensor::from_vec(1, 1, vec![(total / xv.rows.max(1) as f64) as f32]);
        self.push(out, Op::SquaredError { x, target })
    }

    /// Mean over rows of `1 - cos(x_row, target_row)`.
    pub fn cosine_error(&mut self, x: Var, target: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape());
        let mut total = 0.0f64;
        for r in 0..xv.rows {
            total += (1.0 - cosine(xv.row(r), target.row(r))) as f64;
        }
        let out = Tensor::from_vec(1, 1, vec![(total / xv.rows.max(1) as f64) as f32]);
        self.push(out, Op::CosineError { x, target })
    }

    /// Mean binary cross-entropy of a column of logits.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[f32]) -> Var {
        let zv = self.value(z);
        assert_eq!(zv.data.len(), labels.len());
        let total: f64 = zv.data.iter().zip(labels).map(|(&x, &y)| (softplus(x) - y * x) as f64).sum();
        let out = Tensor::from_vec(1, 1, vec![(total / labels.len().max(1) as f64) as f32]);
        self.push(out, Op::BceWithLogits { z, labels: labels.to_vec() })
    }

    /// Back-propagates from the scalar `loss`; returns one gradient slot per parameter.
    pub fn backward(&self, loss: Var) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut param_grads: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut param_grads[id.0], g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    gemm(1.0, MatRef::of(&g), MatRef::of(bv).t(), 0.0, &mut da.data, av.cols);
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    gemm(1.0, MatRef::of(av).t(), MatRef::of(&g), 0.0, &mut db.data, bv.cols);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::AddBias(x, b) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols) {
                        for (d, v) in db.data.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    accumulate(&mut grads[b.0], db);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Add(x, y) => {
                    accumulate(&mut grads[y.0], g.clone());
                    accumulate(&mut grads[x.0], g);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let gv = &self.value(*gamma).data;
                    let (rows, cols) = g.shape();
                    let mut dgamma = Tensor::zeros(1, cols);
                    let mut dbeta = Tensor::zeros(1, cols);
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dxhat = vec![0.0f32; cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            dgamma.data[c] += gr[c] * xh[c];
                            dbeta.data[c] += gr[c];
                            dxhat[c] = gr[c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xh[c];
                        }
                        mean_d /= cols as f32;
                        mean_dx /= cols as f32;
                        let out = dx.row_mut(r);
                        for c in 0..cols {
                            out[c] = rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    accumulate(&mut grads[gamma.0], dgamma);
                    accumulate(&mut grads[beta.0], dbeta);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Gelu { x, slope } => {
                    let mut dx = g;
                    for (d, &s) in dx.data.iter_mut().zip(slope) {
                        *d *= s;
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Attention { q, k, v, segs, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = qv.shape();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f32).sqrt();
                    let mut dq = Tensor::zeros(n, d);
                    let mut dk = Tensor::zeros(n, d);
                    let mut dv = Tensor::zeros(n, d);
                    let mut pi = 0;
                    for seg in segs.iter() {
                        let l = seg.len;
                        for h in 0..*heads {
                            let p = &probs[pi];
                            pi += 1;
                            let pm = MatRef { data: p, rows: l, cols: l, row_stride: l as isize, col_stride: 1 };
                            let go = MatRef::block(&g.data, d, seg.start, l, h * dh, dh);
                            let qs = MatRef::block(&qv.data, d, seg.start, l, h * dh, dh);
                            let ks = MatRef::block(&kv.data, d, seg.start, l, h * dh, dh);
                            let vs = MatRef::block(&vv.data, d, seg.start, l, h * dh, dh);
                            // dV = Pᵀ dO
                            gemm(1.0, pm.t(), go, 1.0, &mut dv.data[seg.start * d + h * dh..], d);
                            // dP = dO Vᵀ
                            let mut dp = vec![0.0f32; l * l];
                            gemm(1.0, go, vs.t(), 0.0, &mut dp, l);
                            // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                            for (prow, dprow) in p.chunks(l).zip(dp.chunks_mut(l)) {
                                let dot: f32 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                                for (dpv, pv) in dprow.iter_mut().zip(prow) {
                                    *dpv = pv * (*dpv - dot);
                                }
                            }
                            let ds = MatRef { data: &dp, rows: l, cols: l, row_stride: l as isize, col_stride: 1 };
                            gemm(scale, ds, ks, 1.0, &mut dq.data[seg.start * d + h * dh..], d);
                            gemm(scale, ds.t(), qs, 1.0, &mut dk.data[seg.start * d + h * dh..], d);
                        }
                    }
                    accumulate(&mut grads[q.0], dq);
                    accumulate(&mut grads[k.0], dk);
                    accumulate(&mut grads[v.0], dv);
                }
                Op::Embedding { table, ids } => {
                    let tv = self.value(*table);
                    let mut dt = Tensor::zeros(tv.rows, tv.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, b) in dt.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                            *a += *b;
                        }
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::GatherRows { x, idx } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (a, b) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *a += *b;
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::MeanPool { x, segs } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for (s, seg) in segs.iter().enumerate() {
                        let inv = 1.0 / seg.len as f32;
                        for r in seg.start..seg.start + seg.len {
                            for (a, b) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                                *a += *b * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.data[0] / targets.len().max(1) as f32;
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl.row_mut(r)[t as usize] -= 1.0;
                    }
                    dl.data.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads[logits.0], dl);
                }
                Op::SquaredError { x, target } => {
                    let xv = self.value(*x);
                    let scale = 2.0 * g.data[0] / xv.rows.max(1) as f32;
                    let data = xv.data.iter().zip(&target.data).map(|(a, b)| scale * (a - b)).collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.rows, xv.cols, data));
                }
                Op::CosineError { x, target } => {
                    let xv = self.value(*x);
                    let scale = -g.data[0] / xv.rows.max(1) as f32;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let (a, b) = (xv.row(r), target.row(r));
                        let na = norm(a).max(COS_EPS);
                        let nb = norm(b).max(COS_EPS);
                        let cos = dot(a, b) / (na * nb);
                        for (o, (&av, &bv)) in dx.row_mut(r).iter_mut().zip(a.iter().zip(b)) {
                            *o = scale * (bv / (na * nb) - cos * av / (na * na));
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::BceWithLogits { z, labels } => {
                    let zv = self.value(*z);
                    let scale = g.data[0] / labels.len().max(1) as f32;
                    let data = zv.data.iter().zip(labels).map(|(&x, &y)| scale * (sigmoid(x) - y)).collect();
                    accumulate(&mut grads[z.0], Tensor::from_vec(zv.rows, zv.cols, data));
                }
            }
        }
        param_grads
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

// tanh through a single exp; libm's tanhf dominated training profiles.
fn fast_tanh(u: f32) -> f32 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

fn gelu_with_grad(x: f32) -> (f32, f32) {
    let t = fast_tanh(GELU_C * (x + 0.044715 * x * x * x));
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f32 {
    dot(a, b) / (norm(a).max(COS_EPS) * norm(b).max(COS_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::init_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `loss_fn` against every scalar of every parameter.
    fn check_grads(params: &mut ParamSet, loss_fn: &dyn Fn(&mut Tape<'_>) -> Var, tol: f32) {
        let analytic = {
            let mut tape = Tape::new(params);
            let loss = loss_fn(&mut tape);
            tape.backward(loss)
        };
        let h = 1e-2f32;
        for pid in 0..params.len() {
            let id = ParamId(pid);
            let n = params.get(id).data.len();
            for i in 0..n {
                let orig = params.get(id).data[i];
                params.get_mut(id).data[i] = orig + h;
                let up = {
                    let mut tape = Tape::new(params);
                    let l = loss_fn(&mut tape);
                    tape.scalar(l) as f64
                };
                params.get_mut(id).data[i] = orig - h;
                let down = {
                    let mut tape = Tape::new(params);
                    let l = loss_fn(&mut tape);
                    tape.scalar(l) as f64
                };
                params.get_mut(id).data[i] = orig;
                let numeric = ((up - down) / (2.0 * h as f64)) as f32;
                let got = analytic[pid].as_ref().map_or(0.0, |g| g.data[i]);
                let err = (numeric - got).abs() / (1.0 + numeric.abs());
                assert!(err < tol, "param {} [{i}]: numeric {numeric} analytic {got}", params.name(id));
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn linear_layernorm_gelu_gradients() {
        let mut r = rng();
        let mut ps = ParamSet::new();
        let x = ps.add("x", init_normal(&mut r, 3, 4, 1.0), false);
        let w = ps.add("w", init_normal(&mut r, 4, 5, 0.5), true);
        let b = ps.add("b", init_normal(&mut r, 1, 5, 0.1), false);
        let g = ps.add("g", init_normal(&mut r, 1, 5, 1.0), false);
        let be = ps.add("be", init_normal(&mut r, 1, 5, 0.1), false);
        let target = init_normal(&mut r, 3, 5, 1.0);
        check_grads(
            &mut ps,
            &|t| {
                let xv = t.param(x);
                let h = t.linear(xv, w, b);
                let h = t.gelu(h);
                let h = t.layer_norm(h, g, be);
                t.squared_error(h, target.clone())
            },
            2e-2,
        );
    }

    #[test]
    fn attention_gradients_with_two_segments() {
        let mut r = rng();
        let mut ps = ParamSet::new();
        let x = ps.add("x", init_normal(&mut r, 5, 4, 1.0), false);
        let wq = ps.add("wq", init_normal(&mut r, 4, 4, 0.7), true);
        let wk = ps.add("wk", init_normal(&mut r, 4, 4, 0.7), true);
        let target = init_normal(&mut r, 5, 4, 1.0);
        let segs = Rc::new(vec![Segment { start: 0, len: 2 }, Segment { start: 2, len: 3 }]);
        check_grads(
            &mut ps,
            &|t| {
                let xv = t.param(x);
                let wqv = t.param(wq);
                let wkv = t.param(wk);
                let q = t.matmul(xv, wqv);
                let k = t.matmul(xv, wkv);
                let a = t.attention(q, k, xv, segs.clone(), 2);
                t.cosine_error(a, target.clone())
            },
            2e-2,
        );
    }

    #[test]
    fn pooling_embedding_and_losses_gradients() {
        let mut r = rng();
        let mut ps = ParamSet::new();
        let table = ps.add("table", init_normal(&mut r, 6, 3, 1.0), true);
        let w = ps.add("w", init_normal(&mut r, 3, 6, 0.5), true);
        let v = ps.add("v", init_normal(&mut r, 3, 1, 0.5), true);
        let segs = Rc::new(vec![Segment { start: 0, len: 3 }, Segment { start: 3, len: 2 }]);
        check_grads(
            &mut ps,
            &|t| {
                let e = t.embedding(table, &[1, 4, 4, 0, 5]);
                let rows = t.gather_rows(e, &[0, 2, 3]);
                let wv = t.param(w);
                let logits = t.matmul(rows, wv);
                let ce = t.cross_entropy(logits, &[2, 5, 1]);
                let pooled = t.mean_pool(e, segs.clone());
                let vv = t.param(v);
                let z = t.matmul(pooled, vv);
                let bce = t.bce_with_logits(z, &[1.0, 0.0]);
                t.add(ce, bce)
            },
            2e-2,
        );
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut ps = ParamSet::new();
        let _ = ps.add("unused", Tensor::zeros(1, 1), false);
        let mut t = Tape::new(&ps);
        let q = t.input(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let v = t.input(Tensor::from_vec(2, 2, vec![3.0, 3.0, 5.0, 5.0]));
        let out = t.attention(q, q, v, Rc::new(vec![Segment { start: 0, len: 2 }]), 1);
        for val in &t.value(out).data {
            assert!(*val > 3.0 && *val < 5.0);
        }
    }
}
