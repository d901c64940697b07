//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! A [`Graph`] is rebuilt for every forward pass: each operation records its
//! output value and a backward closure. [`Graph::gradients`] walks the tape
//! in reverse creation order (a topological order, by construction) and
//! visits every node exactly once, returning gradients for all named leaves.
//!
//! Tensors are immutable values, so backward closures capture the operands
//! they need by cheap `Arc` clone. Forward evaluation is deterministic:
//! identical inputs produce bit-identical outputs.

use std::collections::HashSet;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorBuilder, TensorError};

#[derive(Debug, Error)]
pub enum TapeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gradient output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("leaf `{0}` registered twice with different values")]
    LeafConflict(String),
    #[error("group {group} out of range (n_groups {n_groups})")]
    BadGroup { group: usize, n_groups: usize },
    #[error("group {0} has no member rows")]
    EmptyGroup(usize),
    #[error("batch norm in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type TapeResult<V> = Result<V, TapeError>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients keyed by leaf name, in leaf registration order.
pub type GradMap<T> = IndexMap<String, Tensor<T>>;

type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<(Var, Tensor<T>)>>;

struct Node<T> {
    value: Tensor<T>,
    back: Option<BackFn<T>>,
}

/// Define-by-run computation graph.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    leaves: IndexMap<String, Var>,
    recording: bool,
}

/// Batch statistics produced by a training-mode batch norm op.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance, the convention for running-stat updates.
    pub var: Tensor<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Graph that records backward closures (for training).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaves: IndexMap::new(),
            recording: true,
        }
    }

    /// Forward-only graph: values are computed, backward closures are not
    /// recorded. Used for rollouts and property suites.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, back: Option<BackFn<T>>) -> Var {
        let back = if self.recording { back } else { None };
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, None)
    }

    /// Named differentiable leaf. Re-registering the same name returns the
    /// existing node so gradients accumulate across repeated uses.
    pub fn leaf(&mut self, name: &str, value: &Tensor<T>) -> TapeResult<Var> {
        if let Some(&v) = self.leaves.get(name) {
            let existing = &self.nodes[v.0].value;
            if !existing.shares_data(value) && existing != value {
                return Err(TapeError::LeafConflict(name.to_string()));
            }
            return Ok(v);
        }
        let v = self.push(value.clone(), None);
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of a scalar output with respect to every registered leaf.
    ///
    /// Leaves the output does not reach get zero gradients.
    pub fn gradients(&self, output: Var) -> TapeResult<GradMap<T>> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(TapeError::NonScalarOutput(out_val.shape().to_vec()));
        }
        let leaf_nodes: HashSet<usize> = self.leaves.values().map(|v| v.0).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out_val.shape()));
        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            if let Some(back) = &self.nodes[idx].back {
                for (parent, contrib) in back(&grad) {
                    match grads[parent.0].take() {
                        Some(existing) => grads[parent.0] = Some(existing.add(&contrib)?),
                        None => grads[parent.0] = Some(contrib),
                    }
                }
            }
            if leaf_nodes.contains(&idx) {
                grads[idx] = Some(grad);
            }
        }
        let mut map = GradMap::new();
        for (name, var) in &self.leaves {
            let g = grads[var.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(*var).shape()));
            map.insert(name.clone(), g);
        }
        Ok(map)
    }

    // ── elementwise and scalar ops ─────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> TapeResult<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                vec![(a, g.clone()), (b, g.clone())]
            })),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TapeResult<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| vec![(a, g.clone()), (b, g.neg())])),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> TapeResult<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.mul(&bv)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                vec![
                    (a, g.mul(&bv).expect("shape fixed at forward")),
                    (b, g.mul(&av).expect("shape fixed at forward")),
                ]
            })),
        ))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).neg();
        self.push(value, Some(Box::new(move |g| vec![(a, g.neg())])))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Some(Box::new(move |g| vec![(a, g.scale(c))])))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.push(value, Some(Box::new(move |g| vec![(a, g.clone())])))
    }

    // ── matrix ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> TapeResult<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.matmul(&bv)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                vec![
                    (a, g.matmul_t_rhs(&bv).expect("shape fixed at forward")),
                    (b, av.matmul_t_lhs(g).expect("shape fixed at forward")),
                ]
            })),
        ))
    }

    /// `x + b` with `b` broadcast across rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("add_bias")?;
        let bv = self.value(b);
        if bv.shape() != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            }
            .into());
        }
        let mut out = TensorBuilder::zeros(&[rows, cols]);
        let xd = xv.data();
        let bd = bv.data();
        for r in 0..rows {
            for c in 0..cols {
                out.set(r * cols + c, xd[r * cols + c] + bd[c]);
            }
        }
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut db = vec![T::zero(); cols];
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += gd[r * cols + c];
                    }
                }
                vec![
                    (x, g.clone()),
                    (b, Tensor::from_vec(db)),
                ]
            })),
        ))
    }

    /// `x * s` with the channel vector `s` broadcast across rows.
    pub fn mul_bias(&mut self, x: Var, s: Var) -> TapeResult<Var> {
        let xv = self.value(x).clone();
        let (rows, cols) = xv.dims2("mul_bias")?;
        let sv = self.value(s).clone();
        if sv.shape() != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_bias",
                left: xv.shape().to_vec(),
                right: sv.shape().to_vec(),
            }
            .into());
        }
        let mut out = TensorBuilder::zeros(&[rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r * cols + c, xv.data()[r * cols + c] * sv.data()[c]);
            }
        }
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                let mut ds = vec![T::zero(); cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        dx.set(i, gd[i] * sv.data()[c]);
                        ds[c] += gd[i] * xv.data()[i];
                    }
                }
                vec![(x, dx.finish()), (s, Tensor::from_vec(ds))]
            })),
        ))
    }

    /// `x * v` with the per-row scalar `v` (shape `[rows]` or `[rows, 1]`)
    /// broadcast across columns.
    pub fn mul_col(&mut self, x: Var, v: Var) -> TapeResult<Var> {
        let xv = self.value(x).clone();
        let (rows, cols) = xv.dims2("mul_col")?;
        let vv = self.value(v).clone();
        if vv.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                left: xv.shape().to_vec(),
                right: vv.shape().to_vec(),
            }
            .into());
        }
        let v_shape = vv.shape().to_vec();
        let mut out = TensorBuilder::zeros(&[rows, cols]);
        for r in 0..rows {
            let f = vv.data()[r];
            for c in 0..cols {
                out.set(r * cols + c, xv.data()[r * cols + c] * f);
            }
        }
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                let mut dv = vec![T::zero(); rows];
                for r in 0..rows {
                    let f = vv.data()[r];
                    for c in 0..cols {
                        let i = r * cols + c;
                        dx.set(i, gd[i] * f);
                        dv[r] += gd[i] * xv.data()[i];
                    }
                }
                let dv = Tensor::new(v_shape.clone(), dv).expect("shape fixed at forward");
                vec![(x, dx.finish()), (v, dv)]
            })),
        ))
    }

    /// Per-row matrix-vector product: `w` holds a `[p, q]` matrix per row
    /// (flattened row-major), applied to the matching row of `x`.
    ///
    /// Gradients flow into both the generated matrices and the inputs, which
    /// is what filter-generating networks need.
    pub fn bmm_rowwise(&mut self, w: Var, x: Var, out_dim: usize) -> TapeResult<Var> {
        let wv = self.value(w).clone();
        let xv = self.value(x).clone();
        let (rows, q) = xv.dims2("bmm_rowwise input")?;
        let (wrows, wcols) = wv.dims2("bmm_rowwise weights")?;
        if wrows != rows || wcols != out_dim * q {
            return Err(TensorError::ShapeMismatch {
                op: "bmm_rowwise",
                left: wv.shape().to_vec(),
                right: xv.shape().to_vec(),
            }
            .into());
        }
        let p = out_dim;
        let mut out = TensorBuilder::zeros(&[rows, p]);
        for r in 0..rows {
            let wr = &wv.data()[r * p * q..(r + 1) * p * q];
            let xr = &xv.data()[r * q..(r + 1) * q];
            for i in 0..p {
                let mut acc = T::zero();
                for j in 0..q {
                    acc += wr[i * q + j] * xr[j];
                }
                out.set(r * p + i, acc);
            }
        }
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dw = TensorBuilder::zeros(&[rows, p * q]);
                let mut dx = TensorBuilder::zeros(&[rows, q]);
                for r in 0..rows {
                    let wr = &wv.data()[r * p * q..(r + 1) * p * q];
                    let xr = &xv.data()[r * q..(r + 1) * q];
                    let gr = &gd[r * p..(r + 1) * p];
                    for i in 0..p {
                        for j in 0..q {
                            dw.set(r * p * q + i * q + j, gr[i] * xr[j]);
                        }
                    }
                    for j in 0..q {
                        let mut acc = T::zero();
                        for i in 0..p {
                            acc += gr[i] * wr[i * q + j];
                        }
                        dx.set(r * q + j, acc);
                    }
                }
                vec![(w, dw.finish()), (x, dx.finish())]
            })),
        ))
    }

    // ── structural ops ─────────────────────────────────────────────────

    pub fn concat_cols(&mut self, parts: &[Var]) -> TapeResult<Var> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![rows],
                    right: vec![r],
                }
                .into());
            }
            widths.push(c);
            total += c;
        }
        let mut out = TensorBuilder::zeros(&[rows, total]);
        let mut offset = 0usize;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let pd = self.value(p).data();
            for r in 0..rows {
                for c in 0..w {
                    out.set(r * total + offset + c, pd[r * w + c]);
                }
            }
            offset += w;
        }
        let parts = parts.to_vec();
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut grads = Vec::with_capacity(parts.len());
                let mut offset = 0usize;
                for (&p, &w) in parts.iter().zip(widths.iter()) {
                    let mut dp = TensorBuilder::zeros(&[rows, w]);
                    for r in 0..rows {
                        for c in 0..w {
                            dp.set(r * w + c, gd[r * total + offset + c]);
                        }
                    }
                    grads.push((p, dp.finish()));
                    offset += w;
                }
                grads
            })),
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("slice_cols")?;
        if start + len > cols {
            return Err(TensorError::OutOfBounds {
                op: "slice_cols",
                index: start + len,
                limit: cols,
            }
            .into());
        }
        let mut out = TensorBuilder::zeros(&[rows, len]);
        for r in 0..rows {
            for c in 0..len {
                out.set(r * len + c, xv.data()[r * cols + start + c]);
            }
        }
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                for r in 0..rows {
                    for c in 0..len {
                        dx.set(r * cols + start + c, gd[r * len + c]);
                    }
                }
                vec![(x, dx.finish())]
            })),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> TapeResult<Var> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = self.value(parts[0]).dims2("concat_rows")?.1;
        let mut heights = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_rows")?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: vec![cols],
                    right: vec![c],
                }
                .into());
            }
            heights.push(r);
            total += r;
        }
        let mut data = Vec::with_capacity(total * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let parts = parts.to_vec();
        Ok(self.push(
            Tensor::new(vec![total, cols], data)?,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut grads = Vec::with_capacity(parts.len());
                let mut offset = 0usize;
                for (&p, &h) in parts.iter().zip(heights.iter()) {
                    let part = gd[offset * cols..(offset + h) * cols].to_vec();
                    grads.push((
                        p,
                        Tensor::new(vec![h, cols], part).expect("shape fixed at forward"),
                    ));
                    offset += h;
                }
                grads
            })),
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("slice_rows")?;
        if start + len > rows {
            return Err(TensorError::OutOfBounds {
                op: "slice_rows",
                index: start + len,
                limit: rows,
            }
            .into());
        }
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(
            Tensor::new(vec![len, cols], data)?,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                dx.data_mut()[start * cols..(start + len) * cols].copy_from_slice(gd);
                vec![(x, dx.finish())]
            })),
        ))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: Arc<Vec<usize>>) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::OutOfBounds {
                op: "gather_rows",
                index: bad,
                limit: rows,
            }
            .into());
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            data.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            Tensor::new(vec![indices.len(), cols], data)?,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dx.data_mut()[i * cols + c] += gd[r * cols + c];
                    }
                }
                vec![(x, dx.finish())]
            })),
        ))
    }

    /// Mean of rows per group: `out[g] = mean over rows r with groups[r]==g`.
    /// Every group must receive at least one row.
    pub fn group_mean_rows(
        &mut self,
        x: Var,
        groups: Arc<Vec<usize>>,
        n_groups: usize,
    ) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("group_mean_rows")?;
        if groups.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "group_mean_rows",
                left: vec![rows],
                right: vec![groups.len()],
            }
            .into());
        }
        let mut counts = vec![0usize; n_groups];
        for &g in groups.iter() {
            if g >= n_groups {
                return Err(TapeError::BadGroup {
                    group: g,
                    n_groups,
                });
            }
            counts[g] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(TapeError::EmptyGroup(g));
        }
        let inv: Vec<T> = counts
            .iter()
            .map(|&c| T::one() / T::from_usize(c).expect("count fits scalar"))
            .collect();
        let mut out = TensorBuilder::zeros(&[n_groups, cols]);
        for (r, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                out.data_mut()[g * cols + c] += xv.data()[r * cols + c] * inv[g];
            }
        }
        let inv = Arc::new(inv);
        Ok(self.push(
            out.finish(),
            Some(Box::new(move |gr| {
                let gd = gr.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                for (r, &g) in groups.iter().enumerate() {
                    for c in 0..cols {
                        dx.set(r * cols + c, gd[g * cols + c] * inv[g]);
                    }
                }
                vec![(x, dx.finish())]
            })),
        ))
    }

    // ── activations ────────────────────────────────────────────────────

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let value = xv.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(
            value,
            Some(Box::new(move |g| {
                let dx = g
                    .zip_map(&xv, "relu backward", |gv, v| {
                        if v > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                    .expect("shape fixed at forward");
                vec![(x, dx)]
            })),
        )
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let value = xv.map(|v| if v > T::zero() { v } else { v.exp() - T::one() });
        self.push(
            value,
            Some(Box::new(move |g| {
                let dx = g
                    .zip_map(&xv, "elu backward", |gv, v| {
                        if v > T::zero() {
                            gv
                        } else {
                            gv * v.exp()
                        }
                    })
                    .expect("shape fixed at forward");
                vec![(x, dx)]
            })),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g| {
                let dx = g
                    .zip_map(&y, "tanh backward", |gv, yv| gv * (T::one() - yv * yv))
                    .expect("shape fixed at forward");
                vec![(x, dx)]
            })),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g| {
                let dx = g
                    .zip_map(&y, "sigmoid backward", |gv, yv| gv * yv * (T::one() - yv))
                    .expect("shape fixed at forward");
                vec![(x, dx)]
            })),
        )
    }

    // ── row-wise softmax family ────────────────────────────────────────

    pub fn softmax_rows(&mut self, x: Var) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("softmax_rows")?;
        let mut out = TensorBuilder::zeros(&[rows, cols]);
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for c in 0..cols {
                let e = (row[c] - max).exp();
                out.set(r * cols + c, e);
                sum += e;
            }
            for c in 0..cols {
                let v = out.data_mut()[r * cols + c] / sum;
                out.set(r * cols + c, v);
            }
        }
        let value = out.finish();
        let y = value.clone();
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let gd = g.data();
                let yd = y.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                for r in 0..rows {
                    let mut dot = T::zero();
                    for c in 0..cols {
                        dot += gd[r * cols + c] * yd[r * cols + c];
                    }
                    for c in 0..cols {
                        let i = r * cols + c;
                        dx.set(i, yd[i] * (gd[i] - dot));
                    }
                }
                vec![(x, dx.finish())]
            })),
        ))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> TapeResult<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("log_softmax_rows")?;
        let mut out = TensorBuilder::zeros(&[rows, cols]);
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for c in 0..cols {
                sum += (row[c] - max).exp();
            }
            let log_z = max + sum.ln();
            for c in 0..cols {
                out.set(r * cols + c, row[c] - log_z);
            }
        }
        let value = out.finish();
        let y = value.clone();
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let gd = g.data();
                let yd = y.data();
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                for r in 0..rows {
                    let mut gsum = T::zero();
                    for c in 0..cols {
                        gsum += gd[r * cols + c];
                    }
                    for c in 0..cols {
                        let i = r * cols + c;
                        dx.set(i, gd[i] - yd[i].exp() * gsum);
                    }
                }
                vec![(x, dx.finish())]
            })),
        ))
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let value = Tensor::scalar(xv.sum());
        self.push(
            value,
            Some(Box::new(move |g| {
                let gv = g.data()[0];
                vec![(x, Tensor::full(&shape, gv))]
            })),
        )
    }

    // ── batch normalization (training mode) ────────────────────────────

    /// Training-mode batch norm over rows: normalizes each channel by batch
    /// statistics and returns those statistics for running updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> TapeResult<(Var, BatchStats<T>)> {
        let xv = self.value(x).clone();
        let (rows, cols) = xv.dims2("batch_norm_train")?;
        if rows < 2 {
            return Err(TapeError::BatchTooSmall(rows));
        }
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        if gv.shape() != [cols] || bv.shape() != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm_train",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            }
            .into());
        }
        let rows_t = T::from_usize(rows).expect("rows fits scalar");
        let mut mean = vec![T::zero(); cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += xv.data()[r * cols + c];
            }
        }
        for m in mean.iter_mut() {
            *m /= rows_t;
        }
        let mut var = vec![T::zero(); cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = xv.data()[r * cols + c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= rows_t;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = TensorBuilder::zeros(&[rows, cols]);
        let mut out = TensorBuilder::zeros(&[rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let h = (xv.data()[i] - mean[c]) * inv_std[c];
                xhat.set(i, h);
                out.set(i, gv.data()[c] * h + bv.data()[c]);
            }
        }
        let xhat = xhat.finish();
        // Unbiased variance for running-stat updates.
        let unbiased = T::from_usize(rows).unwrap() / T::from_usize(rows - 1).unwrap();
        let stats = BatchStats {
            mean: Tensor::from_vec(mean),
            var: Tensor::from_vec(var.iter().map(|&v| v * unbiased).collect()),
        };
        let inv_std = Arc::new(inv_std);
        let out_var = self.push(
            out.finish(),
            Some(Box::new(move |g| {
                let gd = g.data();
                let hd = xhat.data();
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                let mut g_mean = vec![T::zero(); cols];
                let mut gh_mean = vec![T::zero(); cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        dgamma[c] += gd[i] * hd[i];
                        dbeta[c] += gd[i];
                        g_mean[c] += gd[i];
                        gh_mean[c] += gd[i] * hd[i];
                    }
                }
                for c in 0..cols {
                    g_mean[c] /= rows_t;
                    gh_mean[c] /= rows_t;
                }
                let mut dx = TensorBuilder::zeros(&[rows, cols]);
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        let v = gv.data()[c]
                            * inv_std[c]
                            * (gd[i] - g_mean[c] - hd[i] * gh_mean[c]);
                        dx.set(i, v);
                    }
                }
                vec![
                    (x, dx.finish()),
                    (gamma, Tensor::from_vec(dgamma)),
                    (beta, Tensor::from_vec(dbeta)),
                ]
            })),
        );
        Ok((out_var, stats))
    }
}

/// Maximum relative disagreement between reverse-mode and central-difference
/// gradients of a scalar function at `point`.
///
/// The relative error per coordinate is `|ad - fd| / max(1, |fd|)`.
pub fn gradient_check<T, F>(f: F, point: &Tensor<T>, h: T) -> TapeResult<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> TapeResult<Var>,
{
    let name = "__gradient_check_point";
    let mut g = Graph::new();
    let x = g.leaf(name, point)?;
    let out = f(&mut g, x)?;
    let grads = g.gradients(out)?;
    let ad = grads.get(name).expect("leaf registered above").clone();

    let eval = |data: Vec<T>| -> TapeResult<T> {
        let t = Tensor::new(point.shape().to_vec(), data)?;
        let mut g = Graph::inference();
        let x = g.leaf(name, &t)?;
        let out = f(&mut g, x)?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(TapeError::NonFinite("gradient_check evaluation"));
        }
        Ok(v)
    };

    let base = point.data();
    let mut max_err = T::zero();
    for i in 0..base.len() {
        let mut plus = base.to_vec();
        plus[i] += h;
        let mut minus = base.to_vec();
        minus[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (h + h);
        let err = (ad.data()[i] - fd).abs() / T::one().max(fd.abs());
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
