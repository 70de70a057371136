//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Every value on the tape
//! is a matrix (rank-1 inputs become a single row). Operations append nodes in
//! execution order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(#[allow(dead_code)] ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Lookup {
        table: Var,
        ids: Vec<usize>,
    },
    MaxOverTime {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    RepeatAdd {
        x: Var,
        y: Var,
        group: usize,
    },
    WeightedRows {
        w: Var,
        h: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Softmax axis selector for matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

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

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).data[0]
    }

    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = self.node(v);
        &n.data[r * n.cols..(r + 1) * n.cols]
    }

    /// Copies a node out as a standalone tensor of shape `[rows, cols]`.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.data.clone()).expect("node shape is consistent")
    }

    /// Records a constant (no gradient flows into it).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant_matrix: bad data length");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    /// Records a leaf input that gradients should flow into (read back with
    /// [`Gradients::of`]).
    pub fn input(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, t.data().to_vec(), Op::Leaf, true)
    }

    /// Loads a parameter. Repeated calls within one tape return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let (r, c) = t.matrix_dims();
        let v = self.push(r, c, t.data().to_vec(), Op::Param(id), t.requires_grad());
        self.params.insert(id, v);
        v
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (x, y) = (self.node(a), self.node(b));
        if (x.rows, x.cols) != (y.rows, y.cols) {
            return Err(Error::shape(op, &[x.rows, x.cols], &[y.rows, y.cols]));
        }
        Ok((x.rows, x.cols))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        rec: Op,
    ) -> Result<Var> {
        let (r, c) = self.same_dims(op, a, b)?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(r, c, data, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let n = self.node(a);
        let (r, c) = (n.rows, n.cols);
        let data = n.data.iter().map(|x| x * k).collect();
        let rg = n.requires_grad;
        self.push(r, c, data, Op::Scale(a, k), rg)
    }

    /// Adds the row vector `bias` (1×n) to every row of `a` (m×n).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.node(a), self.node(bias));
        if b.rows != 1 || b.cols != x.cols {
            return Err(Error::shape(
                "add_row",
                &[x.rows, x.cols],
                &[b.rows, b.cols],
            ));
        }
        let (r, c) = (x.rows, x.cols);
        let mut data = x.data.clone();
        for row in data.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(r, c, data, Op::AddRow(a, bias), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.node(a), self.node(b));
        if x.cols != y.rows {
            return Err(Error::shape("matmul", &[x.rows, x.cols], &[y.rows, y.cols]));
        }
        let (m, k, n) = (x.rows, x.cols, y.cols);
        let mut data = vec![0.0; m * n];
        gemm_nn(&x.data, &y.data, &mut data, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, data, Op::MatMul(a, b), rg))
    }

    /// `x · W + b`, the affine map used by every layer.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Concatenates along the column axis; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = self.node(first).rows;
        for &p in parts {
            let n = self.node(p);
            if n.rows != rows {
                return Err(Error::shape("concat_cols", &[rows], &[n.rows, n.cols]));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.node(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let n = self.node(p);
                data.extend_from_slice(&n.data[r * n.cols..(r + 1) * n.cols]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, cols, data, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.node(a);
        if start >= end || end > x.cols {
            return Err(Error::shape("slice_cols", &[x.rows, x.cols], &[start, end]));
        }
        let (r, c, w) = (x.rows, x.cols, end - start);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&x.data[i * c + start..i * c + end]);
        }
        let rg = x.requires_grad;
        Ok(self.push(r, w, data, Op::SliceCols(a, start), rg))
    }

    /// Stacks along the row axis; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.node(first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let n = self.node(p);
            if n.cols != cols {
                return Err(Error::shape(
                    "concat_rows",
                    &[rows, cols],
                    &[n.rows, n.cols],
                ));
            }
            data.extend_from_slice(&n.data);
            rows += n.rows;
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, cols, data, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.node(a);
        if start >= end || end > x.rows {
            return Err(Error::shape("slice_rows", &[x.rows, x.cols], &[start, end]));
        }
        let c = x.cols;
        let data = x.data[start * c..end * c].to_vec();
        let rg = x.requires_grad;
        Ok(self.push(end - start, c, data, Op::SliceRows(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.node(a);
        if rows * cols != x.data.len() {
            return Err(Error::shape("reshape", &[x.rows, x.cols], &[rows, cols]));
        }
        let data = x.data.clone();
        let rg = x.requires_grad;
        Ok(self.push(rows, cols, data, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.node(a);
        let (r, c) = (x.rows, x.cols);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x.data[i * c + j];
            }
        }
        let rg = x.requires_grad;
        self.push(c, r, data, Op::Transpose(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.node(a);
        let (r, c) = (x.rows, x.cols);
        let data = x.data.iter().map(|&v| f(v)).collect();
        let rg = x.requires_grad;
        self.push(r, c, data, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Softmax over `axis`: `Axis::Cols` normalizes each row across its
    /// columns, `Axis::Rows` normalizes each column across rows.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        match axis {
            Axis::Cols => self
                .masked_softmax(a, None)
                .expect("unmasked softmax cannot fail"),
            Axis::Rows => {
                let t = self.transpose(a);
                let s = self
                    .masked_softmax(t, None)
                    .expect("unmasked softmax cannot fail");
                self.transpose(s)
            }
        }
    }

    /// Row-wise softmax where row `r` only covers its first `valid[r]`
    /// columns; the remaining columns are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, valid: Option<&[usize]>) -> Result<Var> {
        let x = self.node(a);
        let (r, c) = (x.rows, x.cols);
        if let Some(v) = valid {
            if v.len() != r || v.iter().any(|&n| n == 0 || n > c) {
                return Err(Error::shape("masked_softmax", &[r, c], v));
            }
        }
        let mut data = x.data.clone();
        for (i, row) in data.chunks_mut(c).enumerate() {
            let n = valid.map_or(c, |v| v[i]);
            softmax_row(&mut row[..n]);
            row[n..].iter_mut().for_each(|x| *x = 0.0);
        }
        let rg = x.requires_grad;
        Ok(self.push(r, c, data, Op::Softmax(a), rg))
    }

    /// Gathers rows of `table` (V×d) by id.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.node(table);
        let (v, d) = (t.rows, t.cols);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "lookup",
                    index: id,
                    extent: v,
                });
            }
            data.extend_from_slice(&t.data[id * d..(id + 1) * d]);
        }
        if ids.is_empty() {
            return Err(Error::Contract("lookup of zero ids".into()));
        }
        let rg = t.requires_grad;
        Ok(self.push(
            ids.len(),
            d,
            data,
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `x` holds `valid.len()` groups of `x.rows / valid.len()` consecutive
    /// rows; returns the column-wise max over the first `valid[g]` rows of
    /// each group.
    pub fn max_over_time(&mut self, x: Var, valid: &[usize]) -> Result<Var> {
        let n = self.node(x);
        let g = valid.len();
        if g == 0 || n.rows % g != 0 {
            return Err(Error::shape("max_over_time", &[n.rows, n.cols], &[g]));
        }
        let p = n.rows / g;
        if valid.iter().any(|&v| v == 0 || v > p) {
            return Err(Error::shape("max_over_time", &[n.rows, n.cols], valid));
        }
        let c = n.cols;
        let mut data = vec![f64::NEG_INFINITY; g * c];
        let mut argmax = vec![0; g * c];
        for (gi, &nv) in valid.iter().enumerate() {
            for t in 0..nv {
                let row = gi * p + t;
                for j in 0..c {
                    let v = n.data[row * c + j];
                    if v > data[gi * c + j] {
                        data[gi * c + j] = v;
                        argmax[gi * c + j] = row;
                    }
                }
            }
        }
        let rg = n.requires_grad;
        Ok(self.push(g, c, data, Op::MaxOverTime { x, argmax }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.node(a);
        let s = x.data.iter().sum();
        let rg = x.requires_grad;
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.node(a);
        let s = x.data.iter().sum::<f64>() / x.data.len() as f64;
        let rg = x.requires_grad;
        self.push(1, 1, vec![s], Op::Mean(a), rg)
    }

    /// Weighted cross-entropy `Σᵢ wᵢ · −log softmax(logitsᵢ)[targetᵢ]` over
    /// the rows of `logits`. With weights `1/N` this is the mean loss.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let x = self.node(logits);
        let (r, c) = (x.rows, x.cols);
        if targets.len() != r || weights.len() != r {
            return Err(Error::shape(
                "cross_entropy",
                &[r, c],
                &[targets.len(), weights.len()],
            ));
        }
        let mut probs = x.data.clone();
        let mut loss = 0.0;
        for (i, row) in x.data.chunks(c).enumerate() {
            let t = targets[i];
            if t >= c {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: t,
                    extent: c,
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            // lse >= row[t] mathematically; clamp rounding noise but let NaN through
            let nll = lse - row[t];
            loss += weights[i] * if nll < 0.0 { 0.0 } else { nll };
            softmax_row(&mut probs[i * c..(i + 1) * c]);
        }
        let rg = x.requires_grad;
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Adds row `g` of `y` to every row of the `g`-th group of `group`
    /// consecutive rows of `x`.
    pub fn repeat_add(&mut self, x: Var, y: Var, group: usize) -> Result<Var> {
        let (a, b) = (self.node(x), self.node(y));
        if a.cols != b.cols || a.rows != b.rows * group {
            return Err(Error::shape(
                "repeat_add",
                &[a.rows, a.cols],
                &[b.rows, b.cols],
            ));
        }
        let c = a.cols;
        let mut data = a.data.clone();
        for (i, row) in data.chunks_mut(c).enumerate() {
            let g = i / group;
            for (o, &v) in row.iter_mut().zip(&b.data[g * c..(g + 1) * c]) {
                *o += v;
            }
        }
        let rg = self.rg(&[x, y]);
        Ok(self.push(a.rows, c, data, Op::RepeatAdd { x, y, group }, rg))
    }

    /// `out[g] = Σ_p w[g, p] · h[g·P + p]` for `w` of shape G×P.
    pub fn weighted_rows(&mut self, w: Var, h: Var) -> Result<Var> {
        let (a, b) = (self.node(w), self.node(h));
        if b.rows != a.rows * a.cols {
            return Err(Error::shape(
                "weighted_rows",
                &[a.rows, a.cols],
                &[b.rows, b.cols],
            ));
        }
        let (g, p, c) = (a.rows, a.cols, b.cols);
        let mut data = vec![0.0; g * c];
        for gi in 0..g {
            let out = &mut data[gi * c..(gi + 1) * c];
            for pi in 0..p {
                let wv = a.data[gi * p + pi];
                if wv == 0.0 {
                    continue;
                }
                let hr = &b.data[(gi * p + pi) * c..(gi * p + pi + 1) * c];
                for (o, &hv) in out.iter_mut().zip(hr) {
                    *o += wv * hv;
                }
            }
        }
        let rg = self.rg(&[w, h]);
        Ok(self.push(g, c, data, Op::WeightedRows { w, h }, rg))
    }

    /// Reverse sweep from the scalar `loss`. Parameter gradients are written
    /// into `store` (every parameter's gradient is reset first, so parameters
    /// not reached by `loss` end with exactly zero gradient).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        store.zero_grad();
        for node_grads in self.params.iter() {
            let (&id, &v) = node_grads;
            if let Some(g) = &grads.per_node[v.0] {
                if let Some(dst) = store.get_mut(id).grad_mut() {
                    for (d, s) in dst.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let l = self.node(loss);
        if l.data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                l.rows, l.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { per_node: grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].data.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += k * y)
            }),
            Op::AddRow(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let c = node.cols;
                acc(*b, &mut |d| {
                    for row in g.chunks(c) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (an, bn) = (&nodes[a.0], &nodes[b.0]);
                let (m, k, n) = (an.rows, an.cols, bn.cols);
                acc(*a, &mut |d| gemm_nt(g, &bn.data, d, m, n, k));
                acc(*b, &mut |d| gemm_tn(&an.data, g, d, m, k, n));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = nodes[p.0].cols;
                    let c = node.cols;
                    acc(p, &mut |d| {
                        for r in 0..node.rows {
                            for j in 0..pc {
                                d[r * pc + j] += g[r * c + off + j];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = nodes[a.0].cols;
                let w = node.cols;
                acc(*a, &mut |d| {
                    for r in 0..node.rows {
                        for j in 0..w {
                            d[r * ac + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].data.len();
                    acc(p, &mut |d| {
                        d.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(x, y)| *x += y)
                    });
                    off += len;
                }
            }
            Op::SliceRows(a, start) => {
                let off = start * node.cols;
                acc(*a, &mut |d| {
                    d[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y)
                });
            }
            Op::Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Transpose(a) => {
                let (r, c) = (node.rows, node.cols);
                acc(*a, &mut |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.data;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.data;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Softmax(a) => {
                let (y, c) = (&node.data, node.cols);
                acc(*a, &mut |d| {
                    for r in 0..node.rows {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            d[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Lookup { table, ids } => {
                let c = node.cols;
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            d[id * c + j] += g[r * c + j];
                        }
                    }
                });
            }
            Op::MaxOverTime { x, argmax } => {
                let c = node.cols;
                acc(*x, &mut |d| {
                    for (k, &row) in argmax.iter().enumerate() {
                        d[row * c + k % c] += g[k];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].data.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let c = nodes[logits.0].cols;
                acc(*logits, &mut |d| {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let s = g[0] * w;
                        if s == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            d[i * c + j] += s * probs[i * c + j];
                        }
                        d[i * c + t] -= s;
                    }
                });
            }
            Op::RepeatAdd { x, y, group } => {
                let c = node.cols;
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*y, &mut |d| {
                    for (i, row) in g.chunks(c).enumerate() {
                        let gi = i / group;
                        d[gi * c..(gi + 1) * c]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::WeightedRows { w, h } => {
                let (wn, hn) = (&nodes[w.0], &nodes[h.0]);
                let (gs, p, c) = (wn.rows, wn.cols, hn.cols);
                acc(*w, &mut |d| {
                    for gi in 0..gs {
                        let gr = &g[gi * c..(gi + 1) * c];
                        for pi in 0..p {
                            let hr = &hn.data[(gi * p + pi) * c..(gi * p + pi + 1) * c];
                            d[gi * p + pi] += gr.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*h, &mut |d| {
                    for gi in 0..gs {
                        let gr = &g[gi * c..(gi + 1) * c];
                        for pi in 0..p {
                            let wv = wn.data[gi * p + pi];
                            let dr = &mut d[(gi * p + pi) * c..(gi * p + pi + 1) * c];
                            dr.iter_mut().zip(gr).for_each(|(a, b)| *a += wv * b);
                        }
                    }
                });
            }
        }
    }
}

/// Per-node gradients from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` did not influence it.
    pub fn of(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.per_node[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }
}
