//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for its local gradient rule. [`Tape::backward`] walks the nodes once in
//! reverse order, hands back the gradients of every tracked leaf and clears
//! the tape.

use super::{Element, ParamId, ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<E> {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: E },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, normalized: Vec<E>, rstd: Vec<E> },
    Gelu { x: Var, tanh: Vec<E> },
    Embedding { table: Var, ids: Vec<usize> },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<E>, count: usize },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    bindings: Vec<(Var, ParamId)>,
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
    bindings: Vec<(Var, ParamId)>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<E>)> {
        self.bindings.iter().filter_map(|(v, id)| self.get(*v).map(|g| (*id, g)))
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn accumulate<E: Element>(grads: &mut [Option<Tensor<E>>], v: Var, g: Tensor<E>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-major strides.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<E: Copy>(data: &[E], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<E>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    /// A tracked leaf holding the current value of parameter `id`; its
    /// gradient is reported under `id`.
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone(), true);
        self.bindings.push((v, id));
        v
    }

    /// `a [.., k] · b [k, n] -> [.., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).numel() / k.max(1);
        let mut out = vec![E::zero(); m * n];
        E::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, E::zero(), &mut out);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul { a, b }, rg))
    }

    /// Batched `[.., m, k] · [.., k, n]`; with `transpose_b` the right operand
    /// is stored as `[.., n, k]`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(shape_err("bmm", &sa, &sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if transpose_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if kb != k {
            return Err(shape_err("bmm", &sa, &sb));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![E::zero(); batch * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                E::gemm(
                    m,
                    k,
                    n,
                    &da[i * m * k..],
                    false,
                    &db[i * k * n..],
                    transpose_b,
                    E::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = sa;
        shape[r - 1] = n;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor { shape, data: out }, Op::BatchMatMul { a, b, transpose_b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, rg))
    }

    /// Adds a `[n]` vector to every row of `x [.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(&b) {
                *v = *v + *bb;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.tracked(x) || self.tracked(bias);
        Ok(self.push(Tensor { shape, data }, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let factor = E::of(factor);
        let data = self.value(x).data().iter().map(|v| *v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.tracked(x);
        self.push(Tensor { shape, data }, Op::Scale { x, factor }, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.masked_softmax_impl(x, None).expect("unmasked softmax cannot fail")
    }

    /// Softmax over the last axis of `x [b, .., k]` restricted to the keys
    /// where `keep[b * k + j]` holds; masked keys get probability zero.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        self.masked_softmax_impl(x, Some(keep))
    }

    fn masked_softmax_impl(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let k = self.value(x).last_dim();
        let shape = self.shape(x).to_vec();
        let rows = self.value(x).numel() / k.max(1);
        let batch = shape.first().copied().unwrap_or(1);
        if let Some(mask) = keep {
            if shape.len() < 2 || mask.len() != batch * k {
                return Err(shape_err("masked_softmax", &shape, &[mask.len()]));
            }
        }
        let rows_per_batch = rows / batch.max(1);
        let mut data = self.value(x).data().to_vec();
        for (r, row) in data.chunks_mut(k).enumerate() {
            let mask = keep.map(|m| &m[(r / rows_per_batch) * k..(r / rows_per_batch + 1) * k]);
            let live = |j: usize| mask.is_none_or(|m| m[j]);
            let max = (0..k).filter(|&j| live(j)).map(|j| row[j]).fold(E::neg_infinity(), E::max);
            let mut total = E::zero();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if live(j) { (*v - max).exp() } else { E::zero() };
                total = total + *v;
            }
            if total > E::zero() {
                for v in row.iter_mut() {
                    *v = *v / total;
                }
            }
        }
        let rg = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, Op::Softmax { x }, rg))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = E::of(eps);
        let nf = E::of(n as f64);
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xs.len() / n;
        let mut normalized = Vec::with_capacity(xs.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(n) {
            let mean = row.iter().fold(E::zero(), |a, v| a + *v) / nf;
            let var = row.iter().fold(E::zero(), |a, v| a + (*v - mean) * (*v - mean)) / nf;
            let r = E::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (*v - mean) * r;
                normalized.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(Tensor { shape, data: out }, Op::LayerNorm { x, gamma, beta, normalized, rstd }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, a) = (E::of(GELU_C), E::of(GELU_A));
        let half = E::of(0.5);
        let two = E::of(2.0);
        let xs = self.value(x).data();
        let mut tanh = Vec::with_capacity(xs.len());
        let mut data = Vec::with_capacity(xs.len());
        for &v in xs {
            // tanh(u) = 1 - 2 / (e^{2u} + 1), exact at both infinities
            let u = c * (v + a * v * v * v);
            let t = E::one() - two / ((u + u).exp() + E::one());
            tanh.push(t);
            data.push(half * v * (E::one() + t));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.tracked(x);
        self.push(Tensor { shape, data }, Op::Gelu { x, tanh }, rg)
    }

    /// Rows of `table [v, d]` selected by `ids`, shaped `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(shape_err("embedding", &ts, &[ids.len()]));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Contract(format!("embedding: id {bad} out of range for table of {v} rows")));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.tracked(table);
        Ok(self.push(Tensor { shape: vec![ids.len(), d], data }, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.value(x).data().to_vec();
        let rg = self.tracked(x);
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, Op::Reshape { x }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(shape_err("permute", &shape, axes));
        }
        let (out_shape, data) = permute_data(self.value(x).data(), &shape, axes);
        let rg = self.tracked(x);
        Ok(self.push(Tensor { shape: out_shape, data }, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    /// Mean cross-entropy of `logits [.., c]` over the rows that carry a
    /// target; unlabeled rows contribute neither loss nor gradient.
    pub fn masked_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let c = self.value(logits).last_dim();
        let rows = self.value(logits).numel() / c.max(1);
        if targets.len() != rows {
            return Err(shape_err("masked_cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(TensorError::Contract(format!("target class {bad} out of range for {c} classes")));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(TensorError::Contract("masked_cross_entropy: no labeled positions".into()));
        }
        let mut probs = vec![E::zero(); rows * c];
        let mut loss = 0.0f64;
        for (r, row) in self.value(logits).data().chunks(c).enumerate() {
            let Some(t) = targets[r] else { continue };
            let max = row.iter().copied().fold(E::neg_infinity(), E::max);
            let total = row.iter().fold(E::zero(), |a, v| a + (*v - max).exp());
            for (j, v) in row.iter().enumerate() {
                probs[r * c + j] = (*v - max).exp() / total;
            }
            loss += (total.ln() + max - row[t]).to_f64().unwrap();
        }
        let value = Tensor::scalar(E::of(loss / count as f64));
        let rg = self.tracked(logits);
        Ok(self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(E::zero(), |a, v| a + *v);
        let rg = self.tracked(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, rg)
    }

    /// Propagates from the scalar `loss` back to every tracked leaf, then
    /// clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<E>> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(Tensor { shape, data: vec![E::one()] });

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, dy, &mut grads);
        }

        let nodes = std::mem::take(&mut self.nodes);
        for (i, n) in nodes.iter().enumerate() {
            if !(matches!(n.op, Op::Leaf) && n.requires_grad) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, bindings: std::mem::take(&mut self.bindings) })
    }

    fn backprop_node(&self, i: usize, dy: Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let tracked = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let (k, n) = (vb.shape()[0], vb.shape()[1]);
                let m = va.numel() / k.max(1);
                if tracked(*a) {
                    let mut da = vec![E::zero(); m * k];
                    E::gemm(m, n, k, dy.data(), false, vb.data(), true, E::zero(), &mut da);
                    accumulate(grads, *a, Tensor { shape: va.shape().to_vec(), data: da });
                }
                if tracked(*b) {
                    let mut db = vec![E::zero(); k * n];
                    E::gemm(k, m, n, va.data(), true, dy.data(), false, E::zero(), &mut db);
                    accumulate(grads, *b, Tensor { shape: vb.shape().to_vec(), data: db });
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (va, vb) = (val(*a), val(*b));
                let r = va.shape().len();
                let (m, k) = (va.shape()[r - 2], va.shape()[r - 1]);
                let n = node.value.shape()[r - 1];
                let batch = va.numel() / (m * k).max(1);
                let d = dy.data();
                if tracked(*a) {
                    let mut da = vec![E::zero(); va.numel()];
                    for bi in 0..batch {
                        // da = dy · op(b)^T
                        E::gemm(
                            m,
                            n,
                            k,
                            &d[bi * m * n..],
                            false,
                            &vb.data()[bi * k * n..],
                            !*transpose_b,
                            E::zero(),
                            &mut da[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    accumulate(grads, *a, Tensor { shape: va.shape().to_vec(), data: da });
                }
                if tracked(*b) {
                    let mut db = vec![E::zero(); vb.numel()];
                    for bi in 0..batch {
                        let out = &mut db[bi * k * n..(bi + 1) * k * n];
                        if *transpose_b {
                            // stored [n, k]: db = dy^T · a
                            E::gemm(n, m, k, &d[bi * m * n..], true, &va.data()[bi * m * k..], false, E::zero(), out);
                        } else {
                            E::gemm(k, m, n, &va.data()[bi * m * k..], true, &d[bi * m * n..], false, E::zero(), out);
                        }
                    }
                    accumulate(grads, *b, Tensor { shape: vb.shape().to_vec(), data: db });
                }
            }
            Op::Add { a, b } => {
                if tracked(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if tracked(*b) {
                    accumulate(grads, *b, dy);
                }
            }
            Op::AddBias { x, bias } => {
                if tracked(*bias) {
                    let n = val(*bias).numel();
                    let mut db = vec![E::zero(); n];
                    for row in dy.data().chunks(n) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc = *acc + *v;
                        }
                    }
                    accumulate(grads, *bias, Tensor { shape: vec![n], data: db });
                }
                if tracked(*x) {
                    accumulate(grads, *x, dy);
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                if tracked(*a) {
                    let d = dy.data().iter().zip(vb.data()).map(|(g, y)| *g * *y).collect();
                    accumulate(grads, *a, Tensor { shape: va.shape().to_vec(), data: d });
                }
                if tracked(*b) {
                    let d = dy.data().iter().zip(va.data()).map(|(g, x)| *g * *x).collect();
                    accumulate(grads, *b, Tensor { shape: vb.shape().to_vec(), data: d });
                }
            }
            Op::Scale { x, factor } => {
                let d = dy.data().iter().map(|g| *g * *factor).collect();
                accumulate(grads, *x, Tensor { shape: dy.shape().to_vec(), data: d });
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let k = node.value.last_dim();
                let mut dx = vec![E::zero(); y.len()];
                for ((out, yr), gr) in dx.chunks_mut(k).zip(y.chunks(k)).zip(dy.data().chunks(k)) {
                    let dot = yr.iter().zip(gr).fold(E::zero(), |a, (p, g)| a + *p * *g);
                    for j in 0..k {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, Tensor { shape: dy.shape().to_vec(), data: dx });
            }
            Op::LayerNorm { x, gamma, beta, normalized, rstd } => {
                let n = val(*gamma).numel();
                let g = val(*gamma).data();
                let nf = E::of(n as f64);
                if tracked(*gamma) || tracked(*beta) {
                    let mut dg = vec![E::zero(); n];
                    let mut db = vec![E::zero(); n];
                    for (gr, hr) in dy.data().chunks(n).zip(normalized.chunks(n)) {
                        for j in 0..n {
                            dg[j] = dg[j] + gr[j] * hr[j];
                            db[j] = db[j] + gr[j];
                        }
                    }
                    if tracked(*gamma) {
                        accumulate(grads, *gamma, Tensor { shape: vec![n], data: dg });
                    }
                    if tracked(*beta) {
                        accumulate(grads, *beta, Tensor { shape: vec![n], data: db });
                    }
                }
                if tracked(*x) {
                    let mut dx = vec![E::zero(); dy.numel()];
                    for (r, ((out, gr), hr)) in
                        dx.chunks_mut(n).zip(dy.data().chunks(n)).zip(normalized.chunks(n)).enumerate()
                    {
                        let mut mean_d = E::zero();
                        let mut mean_dh = E::zero();
                        for j in 0..n {
                            let dh = gr[j] * g[j];
                            mean_d = mean_d + dh;
                            mean_dh = mean_dh + dh * hr[j];
                        }
                        mean_d = mean_d / nf;
                        mean_dh = mean_dh / nf;
                        for j in 0..n {
                            out[j] = rstd[r] * (gr[j] * g[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                    accumulate(grads, *x, Tensor { shape: dy.shape().to_vec(), data: dx });
                }
            }
            Op::Gelu { x, tanh } => {
                let (c, a) = (E::of(GELU_C), E::of(GELU_A));
                let half = E::of(0.5);
                let three = E::of(3.0);
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(tanh)
                    .zip(dy.data())
                    .map(|((&v, &t), &g)| {
                        let dt = (E::one() - t * t) * c * (E::one() + three * a * v * v);
                        g * (half * (E::one() + t) + half * v * dt)
                    })
                    .collect();
                accumulate(grads, *x, Tensor { shape: dy.shape().to_vec(), data: d });
            }
            Op::Embedding { table, ids } => {
                let ts = val(*table).shape().to_vec();
                let d = ts[1];
                let mut dt = vec![E::zero(); ts[0] * d];
                for (row, &id) in dy.data().chunks(d).zip(ids) {
                    for (acc, v) in dt[id * d..(id + 1) * d].iter_mut().zip(row) {
                        *acc = *acc + *v;
                    }
                }
                accumulate(grads, *table, Tensor { shape: ts, data: dt });
            }
            Op::Reshape { x } => {
                let shape = val(*x).shape().to_vec();
                accumulate(grads, *x, Tensor { shape, data: dy.into_data() });
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (shape, data) = permute_data(dy.data(), dy.shape(), &inverse);
                accumulate(grads, *x, Tensor { shape, data });
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let c = val(*logits).last_dim();
                let scale = dy.item() / E::of(*count as f64);
                let mut d = vec![E::zero(); probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for j in 0..c {
                        let onehot = if j == *t { E::one() } else { E::zero() };
                        d[r * c + j] = (probs[r * c + j] - onehot) * scale;
                    }
                }
                accumulate(grads, *logits, Tensor { shape: val(*logits).shape().to_vec(), data: d });
            }
            Op::Sum { x } => {
                let g = dy.item();
                accumulate(grads, *x, Tensor::full(val(*x).shape(), g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn product_rule_for_scalars() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[3.0]), true);
        let y = tape.leaf(t(&[1], &[-2.5]), true);
        let p = tape.mul(x, y).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-2.5]);
        assert_eq!(g.get(y).unwrap().data(), &[3.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[4, 5]), false);
        match tape.matmul(a, b) {
            Err(TensorError::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 5]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 5]), false);
        let y = tape.softmax(x);
        assert!(tape.value(y).data().iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 1, 2, 3]), false);
        let keep = [true, true, false, true, false, false];
        let y = tape.masked_softmax(x, &keep).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[..3], &[0.5, 0.5, 0.0]);
        assert_eq!(&v[6..9], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 4], &[1.0, 2.0, 3.0, 10.0, -4.0, 0.5, 0.25, 8.0]), false);
        let g = tape.leaf(Tensor::full(&[4], 1.0), false);
        let b = tape.leaf(Tensor::zeros(&[4]), false);
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        for row in tape.value(y).data().chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_limits() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(t(&[2, 3], &[60.0, 0.0, 0.0, 1.0, 2.0, 3.0]), true);
        let loss = tape.masked_cross_entropy(logits, &[Some(0), None]).unwrap();
        assert!(tape.value(loss).item() < 1e-20);
        let g = tape.backward(loss).unwrap();
        assert_eq!(&g.get(logits).unwrap().data()[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_without_labels_is_error() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 3]), true);
        assert!(tape.masked_cross_entropy(logits, &[None, None]).is_err());
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::<f64>::new();
        let v: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.leaf(t(&[2, 3, 4], &v), false);
        let y = tape.permute(x, &[1, 2, 0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 4, 2]);
        // y[i][j][k] = x[k][i][j]
        assert_eq!(tape.value(y).data()[1], 12.0);
        let z = tape.permute(y, &[2, 0, 1]).unwrap();
        assert_eq!(tape.value(z).data(), &v[..]);
    }

    #[test]
    fn untracked_inputs_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[1, 2], &[1.0, 2.0]), true);
        let b = tape.leaf(t(&[2, 1], &[3.0, 4.0]), false);
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(b).is_none());
    }
}
