//! Reverse-mode differentiation over a dynamically recorded operation graph.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Parameter values are read in place; [`Graph::backward`] consumes the graph
//! and returns [`Gradients`], which are then folded into the store with
//! [`ParamStore::accumulate`].

use super::rng::RngStream;
use super::tensor::{gemm, gemm_at, gemm_bt, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Adds a backward pass's gradients into the stored `grad` slots.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (id, g) in &grads.dense {
            self.params[id.0].grad.add_assign(g);
        }
        for (id, row, g) in &grads.rows {
            let p = &mut self.params[id.0];
            let dim = g.len();
            for (a, &b) in p.grad.data_mut()[row * dim..(row + 1) * dim].iter_mut().zip(g) {
                *a = *a + b;
            }
        }
    }

    /// Same parameters with another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

/// Gradients produced by one backward pass: dense per-parameter tensors plus
/// row-sparse contributions from embedding lookups.
#[derive(Debug, Clone, Default)]
pub struct Gradients<F> {
    dense: Vec<(ParamId, Tensor<F>)>,
    rows: Vec<(ParamId, usize, Vec<F>)>,
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Sum(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Embedding {
        table: ParamId,
        indices: Vec<usize>,
        frozen_row: Option<usize>,
    },
    Dropout { input: Var, mask: Vec<F> },
    Softmax { input: Var, axis: usize },
    Conv1d { input: Var, weight: Var },
    MaxOverTime { input: Var, argmax: Vec<usize> },
    Blend { new: Var, old: Var, keep_new: Vec<bool> },
    WeightedCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor<F>>,
    op: Op<F>,
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<F: Real>(x: F) -> F {
    // Branch-stable for large |x|.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub struct Graph<'p, F> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            (None, _) => unreachable!("only parameter leaves borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Result<Var> {
        self.push("constant", t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = match ta.shape() {
            [m, k] => (*m, *k),
            _ => return Err(Error::shape("matmul", ta.shape(), tb.shape())),
        };
        let n = match tb.shape() {
            [k2, n] if *k2 == k => *n,
            _ => return Err(Error::shape("matmul", ta.shape(), tb.shape())),
        };
        let mut out = vec![F::zero(); m * n];
        gemm(ta.data(), tb.data(), &mut out, m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out), Op::MatMul(a, b))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[n]` bias to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = match (ta.dims2(), tb.shape()) {
            (Some((_, n)), [nb]) if *nb == n => n,
            _ => return Err(Error::shape("add_bias", ta.shape(), tb.shape())),
        };
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(tb.data()) {
                *x = *x + b;
            }
        }
        self.push("add_bias", out, Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Result<Var> {
        let out = self.value(a).map(|x| x * k);
        self.push("scale", out, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(F::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(F::zero()));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*inputs.first().ok_or(Error::EmptyInput)?).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        self.push(
            "concat",
            Tensor::new(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape().len() || start + len > t.shape()[axis] {
            return Err(Error::shape("narrow", t.shape(), &[axis, start, len]));
        }
        let (outer, alen, inner) = axis_split(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        self.push(
            "narrow",
            Tensor::new(shape, data),
            Op::Narrow {
                input: a,
                axis,
                start,
            },
        )
    }

    /// Gathers rows of a `[V,D]` table into `[len(indices), D]`. Gradients
    /// for `frozen_row` are dropped, so a padding row stays fixed.
    pub fn embedding(&mut self, table: ParamId, indices: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let t = self.params.value(table);
        let (v, d) = match t.shape() {
            [v, d] => (*v, *d),
            s => return Err(Error::shape("embedding", s, &[indices.len()])),
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embedding", t.shape(), &[bad]));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        self.push(
            "embedding",
            Tensor::new(vec![indices.len(), d], data),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
                frozen_row,
            },
        )
    }

    /// Inverted dropout. Identity (the same node) outside training.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut RngStream) -> Result<Var> {
        if !training || p == 0.0 {
            return Ok(a);
        }
        assert!((0.0..1.0).contains(&p), "dropout probability must lie in [0, 1)");
        let keep = F::lit(1.0 / (1.0 - p));
        let t = self.value(a);
        let mask: Vec<F> = (0..t.numel())
            .map(|_| if rng.uniform() < p { F::zero() } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data);
        self.push("dropout", out, Op::Dropout { input: a, mask })
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape().len() {
            return Err(Error::shape("softmax", t.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = t.clone();
        let x = t.data();
        let y = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| x[at(k)]).fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for k in 0..len {
                    let e = (x[at(k)] - max).exp();
                    y[at(k)] = e;
                    z = z + e;
                }
                for k in 0..len {
                    y[at(k)] = y[at(k)] / z;
                }
            }
        }
        self.push("softmax", out, Op::Softmax { input: a, axis })
    }

    /// Valid 1-D convolution of a `[T, C_in]` sequence with a
    /// `[width, C_in, C_out]` filter bank, giving `[T - width + 1, C_out]`.
    pub fn conv1d(&mut self, input: Var, weight: Var) -> Result<Var> {
        let (ti, tw) = (self.value(input), self.value(weight));
        let (t, cin) = match ti.shape() {
            [t, c] => (*t, *c),
            _ => return Err(Error::shape("conv1d", ti.shape(), tw.shape())),
        };
        let (w, cout) = match tw.shape() {
            [w, c, o] if *c == cin && *w >= 1 && *w <= t => (*w, *o),
            _ => return Err(Error::shape("conv1d", ti.shape(), tw.shape())),
        };
        let steps = t - w + 1;
        let span = w * cin;
        let mut out = vec![F::zero(); steps * cout];
        for s in 0..steps {
            let window = &ti.data()[s * cin..s * cin + span];
            gemm(window, tw.data(), &mut out[s * cout..(s + 1) * cout], 1, span, cout);
        }
        self.push(
            "conv1d",
            Tensor::new(vec![steps, cout], out),
            Op::Conv1d { input, weight },
        )
    }

    /// Per-feature maximum over the time axis: `[T, C] -> [1, C]`.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (steps, c) = match t.shape() {
            [s, c] if *s > 0 => (*s, *c),
            s => return Err(Error::shape("max_over_time", s, &[])),
        };
        let x = t.data();
        let mut argmax = vec![0usize; c];
        let mut out = x[..c].to_vec();
        for s in 1..steps {
            for j in 0..c {
                if x[s * c + j] > out[j] {
                    out[j] = x[s * c + j];
                    argmax[j] = s;
                }
            }
        }
        self.push(
            "max_over_time",
            Tensor::new(vec![1, c], out),
            Op::MaxOverTime { input: a, argmax },
        )
    }

    /// Row-wise select: row `r` comes from `new` when `keep_new[r]`, else
    /// from `old`. Used to hold recurrent state across padded positions.
    pub fn blend(&mut self, new: Var, old: Var, keep_new: &[bool]) -> Result<Var> {
        let (tn, to) = (self.value(new), self.value(old));
        let rows = match tn.dims2() {
            Some((m, _)) if tn.shape() == to.shape() && m == keep_new.len() => m,
            _ => return Err(Error::shape("blend", tn.shape(), to.shape())),
        };
        if keep_new.iter().all(|&k| k) {
            return Ok(new);
        }
        let cols = tn.numel() / rows.max(1);
        let mut out = to.clone();
        for (r, _) in keep_new.iter().enumerate().filter(|(_, &k)| k) {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(&tn.data()[r * cols..(r + 1) * cols]);
        }
        self.push(
            "blend",
            out,
            Op::Blend {
                new,
                old,
                keep_new: keep_new.to_vec(),
            },
        )
    }

    /// Mean over the batch of `-w[y] * log softmax(logits)[y]`, using the
    /// log-sum-exp form.
    pub fn weighted_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let t = self.value(logits);
        let (b, c) = match t.shape() {
            [b, c] if *b == targets.len() && *b > 0 && *c == weights.len() => (*b, *c),
            s => return Err(Error::shape("weighted_cross_entropy", s, &[targets.len(), weights.len()])),
        };
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::shape("weighted_cross_entropy", t.shape(), &[bad]));
        }
        let mut probs = vec![F::zero(); b * c];
        let mut loss = F::zero();
        for i in 0..b {
            let row = &t.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
            for k in 0..c {
                probs[i * c + k] = (row[k] - lse).exp();
            }
            loss = loss - weights[targets[i]] * (row[targets[i]] - lse);
        }
        loss = loss / F::lit(b as f64);
        self.push(
            "weighted_cross_entropy",
            Tensor::scalar(loss),
            Op::WeightedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    /// Propagates d(loss)/d(node) back to every reachable parameter.
    pub fn backward(self, loss: Var) -> Result<Gradients<F>> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(shape, vec![F::one()]));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out_val = node.value.as_ref();
            let mut send = |v: Var, delta: Tensor<F>| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.dense.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let mut da = vec![F::zero(); m * k];
                    gemm_bt(g.data(), tb.data(), &mut da, m, n, k);
                    let mut db = vec![F::zero(); k * n];
                    gemm_at(ta.data(), g.data(), &mut db, m, k, n);
                    send(*a, Tensor::new(vec![m, k], da));
                    send(*b, Tensor::new(vec![k, n], db));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddBias(a, bias) => {
                    let n = self.value(*bias).numel();
                    let mut db = vec![F::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                    send(*bias, Tensor::new(vec![n], db));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect(),
                    );
                    let db = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect(),
                    );
                    send(*a, da);
                    send(*b, db);
                }
                Op::Scale(a, k) => send(*a, g.map(|x| x * *k)),
                Op::Tanh(a) => {
                    let y = out_val.expect("computed node");
                    let d = g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * (F::one() - yi * yi)).collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d));
                }
                Op::Sigmoid(a) => {
                    let y = out_val.expect("computed node");
                    let d = g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * yi * (F::one() - yi)).collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gi, &xi)| if xi > F::zero() { gi } else { F::zero() })
                        .collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d));
                }
                Op::Sum(a) => {
                    let shape = self.shape(*a).to_vec();
                    let n = shape.iter().product();
                    send(*a, Tensor::new(shape, vec![g.item(); n]));
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, inner) = axis_split(g.shape(), *axis);
                    let mut parts: Vec<Vec<F>> = inputs.iter().map(|v| Vec::with_capacity(self.value(*v).numel())).collect();
                    let mut offset = 0;
                    for _ in 0..outer {
                        for (j, v) in inputs.iter().enumerate() {
                            let block = self.shape(*v)[*axis] * inner;
                            parts[j].extend_from_slice(&g.data()[offset..offset + block]);
                            offset += block;
                        }
                    }
                    for (v, data) in inputs.iter().zip(parts) {
                        send(*v, Tensor::new(self.shape(*v).to_vec(), data));
                    }
                }
                Op::Narrow { input, axis, start } => {
                    let shape = self.shape(*input).to_vec();
                    let (outer, alen, inner) = axis_split(&shape, *axis);
                    let len = g.shape()[*axis];
                    let mut d = Tensor::zeros(&shape);
                    for o in 0..outer {
                        let base = (o * alen + start) * inner;
                        d.data_mut()[base..base + len * inner]
                            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                    }
                    send(*input, d);
                }
                Op::Embedding { table, indices, frozen_row } => {
                    let d = g.shape()[1];
                    for (r, &i) in indices.iter().enumerate() {
                        if Some(i) != *frozen_row {
                            out.rows.push((*table, i, g.data()[r * d..(r + 1) * d].to_vec()));
                        }
                    }
                }
                Op::Dropout { input, mask } => {
                    let d = g.data().iter().zip(mask).map(|(&gi, &m)| gi * m).collect();
                    send(*input, Tensor::new(g.shape().to_vec(), d));
                }
                Op::Softmax { input, axis } => {
                    let y = out_val.expect("computed node");
                    let (outer, len, inner) = axis_split(y.shape(), *axis);
                    let mut d = Tensor::zeros(y.shape());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let dot: F = (0..len).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                            for k in 0..len {
                                d.data_mut()[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                            }
                        }
                    }
                    send(*input, d);
                }
                Op::Conv1d { input, weight } => {
                    let (ti, tw) = (self.value(*input), self.value(*weight));
                    let (cin, w, cout) = (ti.shape()[1], tw.shape()[0], tw.shape()[2]);
                    let steps = g.shape()[0];
                    let span = w * cin;
                    let mut di = Tensor::zeros(ti.shape());
                    let mut dw = Tensor::zeros(tw.shape());
                    for s in 0..steps {
                        let gs = &g.data()[s * cout..(s + 1) * cout];
                        let window = &ti.data()[s * cin..s * cin + span];
                        gemm_at(window, gs, dw.data_mut(), 1, span, cout);
                        gemm_bt(gs, tw.data(), &mut di.data_mut()[s * cin..s * cin + span], 1, cout, span);
                    }
                    send(*input, di);
                    send(*weight, dw);
                }
                Op::MaxOverTime { input, argmax } => {
                    let shape = self.shape(*input).to_vec();
                    let c = shape[1];
                    let mut d = Tensor::zeros(&shape);
                    for (j, &s) in argmax.iter().enumerate() {
                        d.data_mut()[s * c + j] = g.data()[j];
                    }
                    send(*input, d);
                }
                Op::Blend { new, old, keep_new } => {
                    let cols = g.numel() / keep_new.len();
                    let mut dn = Tensor::zeros(g.shape());
                    let mut dold = Tensor::zeros(g.shape());
                    for (r, &k) in keep_new.iter().enumerate() {
                        let target = if k { &mut dn } else { &mut dold };
                        target.data_mut()[r * cols..(r + 1) * cols]
                            .copy_from_slice(&g.data()[r * cols..(r + 1) * cols]);
                    }
                    send(*new, dn);
                    send(*old, dold);
                }
                Op::WeightedCrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let c = weights.len();
                    let b = targets.len();
                    let scale = g.item() / F::lit(b as f64);
                    let mut d = probs.clone();
                    for (i, &y) in targets.iter().enumerate() {
                        let w = weights[y] * scale;
                        for k in 0..c {
                            d[i * c + k] = d[i * c + k] * w;
                        }
                        d[i * c + y] = d[i * c + y] - w;
                    }
                    send(*logits, Tensor::new(vec![b, c], d));
                }
            }
        }
        Ok(out)
    }
}
