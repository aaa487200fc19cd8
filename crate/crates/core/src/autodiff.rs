//! Small tape-based reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Graph`] records every primitive as it is applied; [`Graph::backward`]
//! walks the tape once in reverse and accumulates vector-Jacobian products
//! into every node that (transitively) depends on a parameter. There is no
//! implicit broadcasting: operands of elementwise ops must share a shape.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    /// Size of the last axis (1 for scalars).
    fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    PowI(Var, i32),
    PowF(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    GatherRows { table: Var, index: Vec<usize> },
    SoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Log(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    ConcatCols(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape plus gradient storage.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

/// `out[n×m] += a[n×k] · b[k×m]`, all row-major.
fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (l, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x != 0.0 {
                for (o, &y) in row.iter_mut().zip(&b[l * m..(l + 1) * m]) {
                    *o += x * y;
                }
            }
        }
    }
}

/// `out[n×m] += a[n×k] · b[m×k]ᵀ`.
fn matmul_nt_into(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b[j * k..(j + 1) * k];
            out[i * m + j] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`.
fn matmul_tn_into(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for (l, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x != 0.0 {
                for (o, &y) in out[l * m..(l + 1) * m].iter_mut().zip(br) {
                    *o += x * y;
                }
            }
        }
    }
}

fn transpose(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(what, &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape: ta.shape.clone(), data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x * c).collect() };
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(&mut out, &self.value(a).data, &self.value(b).data, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let data = transpose(&self.value(a).data, r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![c, r], data }, Op::Transpose(a), rg))
    }

    /// Batched product of `[B, n, k]` with `[B, k, m]` (or `[B, m, k]` when
    /// `transpose_b`), giving `[B, n, m]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape.clone(), self.value(b).shape.clone());
        let (bsz, n, k, m) = match (&sa[..], &sb[..]) {
            ([b1, n, k], [b2, x, y]) if b1 == b2 => {
                let (kk, m) = if transpose_b { (*y, *x) } else { (*x, *y) };
                if kk != *k {
                    return Err(shape_err("batch_matmul", &sa, &sb));
                }
                (*b1, *n, *k, m)
            }
            _ => return Err(shape_err("batch_matmul", &sa, &sb)),
        };
        let mut out = vec![0.0; bsz * n * m];
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        for i in 0..bsz {
            let o = &mut out[i * n * m..(i + 1) * n * m];
            let ai = &da[i * n * k..(i + 1) * n * k];
            let bi = &db[i * k * m..(i + 1) * k * m];
            if transpose_b {
                matmul_nt_into(o, ai, bi, n, k, m);
            } else {
                matmul_into(o, ai, bi, n, k, m);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![bsz, n, m], data: out }, Op::BatchMatMul { a, b, transpose_b }, rg))
    }

    pub fn integer_power(&mut self, a: Var, k: i32) -> Result<Var> {
        if k < 0 {
            return Err(Error::Shape(format!("integer_power needs k >= 0, got {k}")));
        }
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x.powi(k)).collect() };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::PowI(a, k), rg))
    }

    /// `x^e` for real `e`; inputs must be non-negative. The derivative at
    /// `x = 0` is taken to be 0.
    pub fn real_power(&mut self, a: Var, e: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| if x == 0.0 { 0.0 } else { x.powf(e) }).collect() };
        let rg = self.rg(&[a]);
        self.push(t, Op::PowF(a, e), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Row sums of a matrix: `[n, m] → [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let d = &self.value(a).data;
        let data = (0..n).map(|i| d[i * m..(i + 1) * m].iter().sum()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![n], data }, Op::SumRows(a), rg))
    }

    /// Column sums of a matrix: `[n, m] → [m]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let d = &self.value(a).data;
        let mut data = vec![0.0; m];
        for i in 0..n {
            for (o, x) in data.iter_mut().zip(&d[i * m..(i + 1) * m]) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![m], data }, Op::SumCols(a), rg))
    }

    /// Row lookup `table[index[i]]`: `[V, d] → [len(index), d]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        if let Some(&bad) = index.iter().find(|&&i| i >= v) {
            return Err(Error::OutOfRange { value: bad, bound: v });
        }
        let src = &self.value(table).data;
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor { shape: vec![index.len(), d], data }, Op::GatherRows { table, index: index.to_vec() }, rg))
    }

    /// Softmax over the last axis, max-subtracted for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let w = ta.last_dim();
        let mut data = ta.data.clone();
        for row in data.chunks_exact_mut(w) {
            softmax_in_place(row);
        }
        let t = Tensor { shape: ta.shape.clone(), data };
        let rg = self.rg(&[a]);
        self.push(t, Op::SoftmaxRows(a), rg)
    }

    /// Per-row standardisation over the last axis (no affine parameters).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let w = ta.last_dim();
        let mut data = ta.data.clone();
        let mut inv_std = Vec::with_capacity(data.len() / w);
        for row in data.chunks_exact_mut(w) {
            let mu = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mu) * is);
            inv_std.push(is);
        }
        let t = Tensor { shape: ta.shape.clone(), data };
        let rg = self.rg(&[a]);
        self.push(t, Op::LayerNormRows { x: a, inv_std }, rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x.ln()).collect() };
        let rg = self.rg(&[a]);
        self.push(t, Op::Log(a), rg)
    }

    /// Mean over rows of `-log softmax(logits_i)[labels_i]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let w = t.last_dim();
        let rows = t.len() / w;
        if rows != labels.len() || rows == 0 {
            return Err(Error::Shape(format!("{rows} logit rows for {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= w) {
            return Err(Error::OutOfRange { value: bad, bound: w });
        }
        let mut probs = t.data.clone();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_exact_mut(w).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(row);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / rows as f64),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
        ))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts.iter().map(|&v| self.value(v).dims2()).collect::<Result<Vec<_>>>()?;
        let n = dims.first().map(|d| d.0).ok_or(Error::Empty("concat_cols"))?;
        if dims.iter().any(|d| d.0 != n) {
            return Err(Error::Shape(format!("concat_cols row counts {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&v, &(_, c)) in parts.iter().zip(&dims) {
                data.extend_from_slice(&self.value(v).data[i * c..(i + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor { shape: vec![n, total], data }, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(shape_err("reshape", &ta.shape, shape));
        }
        let t = Tensor { shape: shape.to_vec(), data: ta.data.clone() };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
        if !nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(&nodes[v.0].value.shape));
        f(&mut slot.data);
    }

    /// Reverse pass from a one-element output. Gradients of earlier
    /// `backward` calls are discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got shape {:?}", self.value(out).shape)));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if nodes[out.0].requires_grad {
            grads[out.0] = Some(Tensor { shape: nodes[out.0].value.shape.clone(), data: vec![1.0] });
        }
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let gd = &g.data;
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                    Self::accumulate(&mut grads, nodes, *b, |s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                }
                Op::Sub(a, b) => {
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                    Self::accumulate(&mut grads, nodes, *b, |s| s.iter_mut().zip(gd).for_each(|(s, g)| *s -= g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for ((s, g), y) in s.iter_mut().zip(gd).zip(vb) {
                            *s += g * y;
                        }
                    });
                    Self::accumulate(&mut grads, nodes, *b, |s| {
                        for ((s, g), x) in s.iter_mut().zip(gd).zip(va) {
                            *s += g * x;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += c * g));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (n, k) = (ta.shape[0], ta.shape[1]);
                    let m = tb.shape[1];
                    Self::accumulate(&mut grads, nodes, *a, |s| matmul_nt_into(s, gd, &tb.data, n, m, k));
                    Self::accumulate(&mut grads, nodes, *b, |s| matmul_tn_into(s, &ta.data, gd, n, k, m));
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.value.shape[0], node.value.shape[1]);
                    let gt = transpose(gd, r, c);
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().zip(&gt).for_each(|(s, g)| *s += g));
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (bsz, n, k) = (ta.shape[0], ta.shape[1], ta.shape[2]);
                    let m = node.value.shape[2];
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for i in 0..bsz {
                            let si = &mut s[i * n * k..(i + 1) * n * k];
                            let gi = &gd[i * n * m..(i + 1) * n * m];
                            let bi = &tb.data[i * k * m..(i + 1) * k * m];
                            if *transpose_b {
                                // dA = G · B  (B is [m, k])
                                matmul_into(si, gi, bi, n, m, k);
                            } else {
                                matmul_nt_into(si, gi, bi, n, m, k);
                            }
                        }
                    });
                    Self::accumulate(&mut grads, nodes, *b, |s| {
                        for i in 0..bsz {
                            let si = &mut s[i * k * m..(i + 1) * k * m];
                            let gi = &gd[i * n * m..(i + 1) * n * m];
                            let ai = &ta.data[i * n * k..(i + 1) * n * k];
                            if *transpose_b {
                                // dB = Gᵀ · A  ([m, k])
                                matmul_tn_into(si, gi, ai, n, m, k);
                            } else {
                                matmul_tn_into(si, ai, gi, n, k, m);
                            }
                        }
                    });
                }
                Op::PowI(a, k) => {
                    let va = &nodes[a.0].value.data;
                    let k = *k;
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        if k == 0 {
                            return;
                        }
                        for ((s, g), x) in s.iter_mut().zip(gd).zip(va) {
                            *s += g * k as f64 * x.powi(k - 1);
                        }
                    });
                }
                Op::PowF(a, e) => {
                    let va = &nodes[a.0].value.data;
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for ((s, g), &x) in s.iter_mut().zip(gd).zip(va) {
                            if x != 0.0 {
                                *s += g * e * x.powf(e - 1.0);
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let g0 = gd[0];
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().for_each(|s| *s += g0));
                }
                Op::Mean(a) => {
                    let g0 = gd[0] / nodes[a.0].value.len() as f64;
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().for_each(|s| *s += g0));
                }
                Op::SumRows(a) => {
                    let m = nodes[a.0].value.shape[1];
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for (row, g) in s.chunks_exact_mut(m).zip(gd) {
                            row.iter_mut().for_each(|s| *s += g);
                        }
                    });
                }
                Op::SumCols(a) => {
                    let m = nodes[a.0].value.shape[1];
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for row in s.chunks_exact_mut(m) {
                            row.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
                        }
                    });
                }
                Op::GatherRows { table, index } => {
                    let d = nodes[table.0].value.shape[1];
                    Self::accumulate(&mut grads, nodes, *table, |s| {
                        for (r, &i) in index.iter().enumerate() {
                            for (s, g) in s[i * d..(i + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                                *s += g;
                            }
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value.data;
                    let w = node.value.last_dim();
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for ((srow, grow), yrow) in s.chunks_exact_mut(w).zip(gd.chunks_exact(w)).zip(y.chunks_exact(w)) {
                            let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                            for ((s, g), y) in srow.iter_mut().zip(grow).zip(yrow) {
                                *s += y * (g - dot);
                            }
                        }
                    });
                }
                Op::LayerNormRows { x, inv_std } => {
                    let y = &node.value.data;
                    let w = node.value.last_dim();
                    Self::accumulate(&mut grads, nodes, *x, |s| {
                        let rows = s.chunks_exact_mut(w).zip(gd.chunks_exact(w)).zip(y.chunks_exact(w));
                        for (((srow, grow), yrow), is) in rows.zip(inv_std) {
                            let gm = grow.iter().sum::<f64>() / w as f64;
                            let gy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / w as f64;
                            for ((s, g), y) in srow.iter_mut().zip(grow).zip(yrow) {
                                *s += is * (g - gm - y * gy);
                            }
                        }
                    });
                }
                Op::Log(a) => {
                    let va = &nodes[a.0].value.data;
                    Self::accumulate(&mut grads, nodes, *a, |s| {
                        for ((s, g), x) in s.iter_mut().zip(gd).zip(va) {
                            *s += g / x;
                        }
                    });
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let w = nodes[logits.0].value.last_dim();
                    let scale = gd[0] / labels.len() as f64;
                    Self::accumulate(&mut grads, nodes, *logits, |s| {
                        for (r, (srow, prow)) in s.chunks_exact_mut(w).zip(probs.chunks_exact(w)).enumerate() {
                            for (c, (s, p)) in srow.iter_mut().zip(prow).enumerate() {
                                let onehot = if c == labels[r] { 1.0 } else { 0.0 };
                                *s += scale * (p - onehot);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let (n, total) = (node.value.shape[0], node.value.shape[1]);
                    let mut offset = 0;
                    for &v in parts {
                        let c = nodes[v.0].value.shape[1];
                        Self::accumulate(&mut grads, nodes, v, |s| {
                            for i in 0..n {
                                for (s, g) in s[i * c..(i + 1) * c].iter_mut().zip(&gd[i * total + offset..i * total + offset + c]) {
                                    *s += g;
                                }
                            }
                        });
                        offset += c;
                    }
                }
                Op::Reshape(a) => {
                    Self::accumulate(&mut grads, nodes, *a, |s| s.iter_mut().zip(gd).for_each(|(s, g)| *s += g));
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

/// Standalone cross-entropy of one logit vector: `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::OutOfRange { value: label, bound: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Gradients smaller than this are compared absolutely in [`grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
    pub max_rel_error: f64,
    /// `(parameter index, flat entry)` of the worst component.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares backward gradients with central differences
/// `(f(x + εe) - f(x - εe)) / 2ε` for every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for pi in 0..work.len() {
        for j in 0..work[pi].len() {
            let orig = work[pi].data[j];
            work[pi].data[j] = orig + eps;
            let up = eval(&work)?;
            work[pi].data[j] = orig - eps;
            let down = eval(&work)?;
            work[pi].data[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi].data[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (pi, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn rand_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn cube_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.integer_power(x, 3).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 12.0);
        assert!(g.integer_power(x, -1).is_err());
    }

    #[test]
    fn softmax_of_equal_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 4, vec![3.0; 8]).unwrap());
        let y = g.softmax_rows(x);
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 3, vec![1e4, -1e4, 9999.0]).unwrap());
        let y = g.softmax_rows(x);
        let d = g.value(y).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let y = g.sum(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let xx = g.mul(x, x).unwrap();
        let y = g.sum(xx);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn reuse_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(5.0));
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.param(Tensor::zeros(&[3]));
        assert!(g.add(a, c).is_err());
        assert!(g.gather_rows(a, &[2]).is_err());
        assert!(g.reshape(a, &[4]).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let ln5 = 5f64.ln();
        assert!((cross_entropy(&[0.0; 5], 2).unwrap() - ln5).abs() < 1e-15);
        assert!((cross_entropy(&[1.60944; 5], 2).unwrap() - ln5).abs() < 1e-15);
        assert!(cross_entropy(&[50.0, 0.0, 0.0], 0).unwrap() < 1e-20);
        assert!(cross_entropy(&[0.0; 3], 3).is_err());

        let mut g = Graph::new();
        let l = g.param(Tensor::matrix(1, 5, vec![0.0; 5]).unwrap());
        let ce = g.cross_entropy(l, &[3]).unwrap();
        assert!((g.value(ce).item() - ln5).abs() < 1e-15);
        g.backward(ce).unwrap();
        let gr = g.grad(l).unwrap().data();
        for (c, v) in gr.iter().enumerate() {
            let want = if c == 3 { 0.2 - 1.0 } else { 0.2 };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(4);
        let a = rand_tensor(&[3, 4], &mut rng);
        let b = rand_tensor(&[4, 2], &mut rng);
        let w = rand_tensor(&[3, 2], &mut rng);
        let r = grad_check(
            |g, v| {
                let m = g.matmul(v[0], v[1])?;
                let wc = g.constant(w.clone());
                let p = g.mul(m, wc)?;
                Ok(g.sum(p))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 20);
    }

    #[test]
    fn quadratic_form_is_exact() {
        let q = Tensor::matrix(3, 3, vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let x = Tensor::matrix(3, 1, vec![0.4, -1.2, 0.7]).unwrap();
        let r = grad_check(
            |g, v| {
                let qc = g.constant(q.clone());
                let qx = g.matmul(qc, v[0])?;
                let xt = g.transpose(v[0])?;
                let s = g.matmul(xt, qx)?;
                Ok(g.sum(s))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut rng = SplitMix64::new(11);
        let a = rand_tensor(&[2, 3, 4], &mut rng);
        let b = rand_tensor(&[2, 4, 3], &mut rng);
        let bt = rand_tensor(&[2, 3, 4], &mut rng);
        let table = rand_tensor(&[5, 3], &mut rng);
        let pos = Tensor::new(vec![5, 3], (0..15).map(|_| rng.uniform(0.5, 2.0)).collect()).unwrap();
        let r = grad_check(
            |g, v| {
                let ab = g.batch_matmul(v[0], v[1], false)?; // [2,3,3]
                let abt = g.batch_matmul(v[0], v[2], true)?; // [2,3,3]
                let s = g.add(ab, abt)?;
                let sm = g.softmax_rows(s);
                let flat = g.reshape(sm, &[6, 3])?;
                let rows = g.gather_rows(v[3], &[0, 2, 2, 4, 1, 0])?;
                let prod = g.mul(flat, rows)?;
                let ln = g.layer_norm_rows(prod, 1e-5);
                let cat = g.concat_cols(&[ln, rows])?; // [6, 6]
                let t = g.transpose(cat)?;
                let rs = g.sum_rows(t)?;
                let cube = g.integer_power(rs, 3)?;
                let ce_in = g.reshape(cat, &[6, 6])?;
                let ce = g.cross_entropy(ce_in, &[0, 1, 2, 3, 4, 5])?;
                let lg = g.log(v[4]);
                let pw = g.real_power(v[4], 1.5);
                let d = g.sub(lg, pw)?;
                let cs = g.sum_cols(d)?;
                let m1 = g.mean(cs);
                let m2 = g.sum(cube);
                let m2s = g.scale(m2, 0.01);
                let tot = g.add(m1, m2s)?;
                g.add(tot, ce)
            },
            &[a, b, bt, table, pos],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn real_power_at_zero_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.0, 4.0]));
        let y = g.real_power(x, 0.5);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.25]);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut rng = SplitMix64::new(2);
        let a = rand_tensor(&[4, 5], &mut rng);
        let run = || {
            let mut g = Graph::new();
            let x = g.param(a.clone());
            let s = g.softmax_rows(x);
            let c = g.integer_power(s, 3).unwrap();
            let y = g.sum(c);
            g.backward(y).unwrap();
            g.grad(x).unwrap().clone()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-1e4f64..1e4, 12)) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(3, 4, v).unwrap());
            let y = g.softmax_rows(x);
            for row in g.value(y).data().chunks(4) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn gradient_of_linear_combination(a in -3.0f64..3.0, b in -3.0f64..3.0, v in proptest::collection::vec(-2.0f64..2.0, 4)) {
            // d/dx [a·sum(x²) + b·sum(x)] = 2a x + b
            let mut g = Graph::new();
            let x = g.param(Tensor::vector(v.clone()));
            let sq = g.mul(x, x).unwrap();
            let s1 = g.sum(sq);
            let s1 = g.scale(s1, a);
            let s2 = g.sum(x);
            let s2 = g.scale(s2, b);
            let y = g.add(s1, s2).unwrap();
            g.backward(y).unwrap();
            for (gx, x) in g.grad(x).unwrap().data().iter().zip(&v) {
                prop_assert!((gx - (2.0 * a * x + b)).abs() < 1e-12);
            }
        }
    }
}
