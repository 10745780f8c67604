//! Differentiable primitives.
//!
//! Shapes are explicit: the only broadcasts are the named ones (`scale`,
//! `add_bias`, `repeat_steps`). Ops that act "along the last axis" view a
//! tensor as `rows × last-dim`.

use crate::error::{AdError, Result};
use crate::scalar::{gemm, Real};
use crate::tape::{owned_shape, Op, Tape, Var};
use crate::tensor::rows_cols;

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(AdError::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() });
    }
    Ok(())
}

fn expect_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(AdError::LengthMismatch { what, expected, actual });
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax over entries where `allow` is set (all entries when
/// `allow` is `None`). Rows with nothing allowed become all-zero.
fn softmax_rows<T: Real>(x: &[T], cols: usize, allow: Option<&[bool]>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (r, (row, dst)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let ok = |j: usize| allow.map_or(true, |a| a[r * cols + j]);
        let mut max = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if ok(j) && v > max {
                max = v;
            }
        }
        if max == T::neg_infinity() {
            continue;
        }
        let mut sum = T::zero();
        for (j, (&v, d)) in row.iter().zip(dst.iter_mut()).enumerate() {
            if ok(j) {
                *d = (v - max).exp();
                sum = sum + *d;
            }
        }
        dst.iter_mut().for_each(|d| *d = *d / sum);
    }
    out
}

impl<T: Real> Tape<'_, T> {
    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m×k] · [n×k]ᵀ → [m×n]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.shape_of(ia), self.shape_of(ib));
        let mismatch = || AdError::ShapeMismatch { op: "matmul", left: sa.to_vec(), right: sb.to_vec() };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); m * n];
        gemm(false, trans_b, m, k, n, self.data_of(ia), self.data_of(ib), &mut out, false);
        Ok(self.push(Op::MatMul { a: ia, b: ib, trans_b, m, k, n }, vec![m, n], out, &[ia, ib]))
    }

    /// Batched product `[B×m×k] · [B×k×n] → [B×m×n]`; with `trans_b` the
    /// right operand is stored `[B×n×k]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.shape_of(ia), self.shape_of(ib));
        let mismatch = || AdError::ShapeMismatch { op: "batch_matmul", left: sa.to_vec(), right: sb.to_vec() };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.data_of(ia), self.data_of(ib));
        for bi in 0..batch {
            gemm(
                false,
                trans_b,
                m,
                k,
                n,
                &da[bi * m * k..(bi + 1) * m * k],
                &db[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                false,
            );
        }
        Ok(self.push(Op::BatchMatMul { a: ia, b: ib, trans_b, batch, m, k, n }, vec![batch, m, n], out, &[ia, ib]))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<usize>, Vec<T>)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        same_shape(name, self.shape_of(ia), self.shape_of(ib))?;
        let out = self.data_of(ia).iter().zip(self.data_of(ib)).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, self.shape_of(ia).to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, shape, out) = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(ia, ib), shape, out, &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, shape, out) = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(ia, ib), shape, out, &[ia, ib]))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, shape, out) = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(ia, ib), shape, out, &[ia, ib]))
    }

    /// Scalar-tensor product.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let c = T::of(c);
        let out = self.data_of(ia).iter().map(|&x| x * c).collect();
        let shape = self.shape_of(ia).to_vec();
        Ok(self.push(Op::Scale(ia, c), shape, out, &[ia]))
    }

    /// Adds a `[n]` bias to every row of `[..×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (sx, sb) = (self.shape_of(ix), self.shape_of(ib));
        let (_, cols) = rows_cols(sx);
        if sb.len() != 1 || sb[0] != cols {
            return Err(AdError::ShapeMismatch { op: "add_bias", left: sx.to_vec(), right: sb.to_vec() });
        }
        let b = self.data_of(ib);
        let out = self
            .data_of(ix)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let shape = sx.to_vec();
        Ok(self.push(Op::AddBias { x: ix, bias: ib }, shape, out, &[ix, ib]))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Result<(usize, Vec<usize>, Vec<T>)> {
        let ix = self.idx(x)?;
        let out = self.data_of(ix).iter().map(|&v| f(v)).collect();
        Ok((ix, self.shape_of(ix).to_vec(), out))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let (ix, shape, out) = self.map(x, |v| if v > T::zero() { v } else { T::zero() })?;
        Ok(self.push(Op::Relu(ix), shape, out, &[ix]))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let (ix, shape, out) = self.map(x, |v| v.tanh())?;
        Ok(self.push(Op::Tanh(ix), shape, out, &[ix]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let (ix, shape, out) = self.map(x, sigmoid)?;
        Ok(self.push(Op::Sigmoid(ix), shape, out, &[ix]))
    }

    /// Softmax along the last axis, max-shifted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (_, cols) = rows_cols(self.shape_of(ix));
        let out = softmax_rows(self.data_of(ix), cols, None);
        let shape = self.shape_of(ix).to_vec();
        Ok(self.push(Op::Softmax(ix), shape, out, &[ix]))
    }

    /// Softmax along the last axis restricted to entries with `allow` set.
    /// Disallowed entries get probability exactly zero; a row with no allowed
    /// entry is all zero.
    pub fn masked_softmax(&mut self, x: Var, allow: &[bool]) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = self.shape_of(ix).to_vec();
        expect_len("masked_softmax mask", self.data_of(ix).len(), allow.len())?;
        let (_, cols) = rows_cols(&shape);
        let out = softmax_rows(self.data_of(ix), cols, Some(allow));
        Ok(self.push(Op::MaskedSoftmax(ix), shape, out, &[ix]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.shape_of(ia), self.shape_of(ib));
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(AdError::ShapeMismatch { op: "concat", left: sa.to_vec(), right: sb.to_vec() });
        }
        let (_, ca) = rows_cols(sa);
        let (_, cb) = rows_cols(sb);
        let mut shape = sa.to_vec();
        *shape.last_mut().expect("non-empty shape") = ca + cb;
        let mut out = Vec::with_capacity(self.data_of(ia).len() + self.data_of(ib).len());
        for (ra, rb) in self.data_of(ia).chunks(ca).zip(self.data_of(ib).chunks(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        Ok(self.push(Op::Concat { a: ia, b: ib }, shape, out, &[ia, ib]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.shape_of(ix);
        let (_, cols) = rows_cols(sx);
        if len == 0 || start + len > cols {
            return Err(AdError::InvalidShape { op: "slice_last", shape: sx.to_vec(), reason: "slice out of bounds" });
        }
        let mut shape = sx.to_vec();
        *shape.last_mut().expect("non-empty shape") = len;
        let out = self.data_of(ix).chunks(cols).flat_map(|r| r[start..start + len].iter().copied()).collect();
        Ok(self.push(Op::SliceLast { x: ix, start }, shape, out, &[ix]))
    }

    /// Splits the last axis at `at`; inverse of [`concat`](Self::concat).
    pub fn split_last(&mut self, x: Var, at: usize) -> Result<(Var, Var)> {
        let cols = *self.shape(x).last().expect("non-empty shape");
        if at == 0 || at >= cols {
            return Err(AdError::InvalidShape { op: "split_last", shape: self.shape(x).to_vec(), reason: "split point out of bounds" });
        }
        Ok((self.slice_last(x, 0, at)?, self.slice_last(x, at, cols - at)?))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = owned_shape("reshape", shape.to_vec())?;
        expect_len("reshape", self.data_of(ix).len(), shape.iter().product())?;
        let out = self.data_of(ix).to_vec();
        Ok(self.push(Op::Reshape(ix), shape, out, &[ix]))
    }

    /// Rows of a `[V×d]` table selected by `ids`; output shape `ids_shape ++ [d]`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let st = self.shape_of(it);
        if st.len() != 2 {
            return Err(AdError::InvalidShape { op: "embedding_gather", shape: st.to_vec(), reason: "table must be 2-D" });
        }
        let (v, d) = (st[0], st[1]);
        let mut shape = owned_shape("embedding_gather", ids_shape.to_vec())?;
        expect_len("embedding_gather ids", shape.iter().product(), ids.len())?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(AdError::IndexOutOfRange { id: bad, size: v });
        }
        shape.push(d);
        let table_data = self.data_of(it);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&table_data[id * d..(id + 1) * d]);
        }
        Ok(self.push(Op::Gather { table: it, ids: ids.to_vec() }, shape, out, &[it]))
    }

    /// Mean over the second-to-last axis of the rows where `mask` is set.
    ///
    /// `[..×L×d]` with a mask over the leading `..×L` positions gives `[..×d]`;
    /// a plain `[L×d]` input gives `[d]`.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.shape_of(ix).to_vec();
        if sx.len() < 2 {
            return Err(AdError::InvalidShape { op: "masked_mean_pool", shape: sx, reason: "need at least 2 axes" });
        }
        let (rows, d) = rows_cols(&sx);
        expect_len("masked_mean_pool mask", rows, mask.len())?;
        let len = sx[sx.len() - 2];
        let groups = rows / len;
        let data = self.data_of(ix);
        let mut out = vec![T::zero(); groups * d];
        let mut counts = Vec::with_capacity(groups);
        for g in 0..groups {
            let dst = &mut out[g * d..(g + 1) * d];
            let mut count = 0usize;
            for t in 0..len {
                let r = g * len + t;
                if mask[r] {
                    count += 1;
                    for (o, &v) in dst.iter_mut().zip(&data[r * d..(r + 1) * d]) {
                        *o = *o + v;
                    }
                }
            }
            if count == 0 {
                return Err(AdError::EmptySequence { op: "masked_mean_pool" });
            }
            let inv = T::one() / T::of(count as f64);
            dst.iter_mut().for_each(|o| *o = *o * inv);
            counts.push(count);
        }
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.push(d);
        Ok(self.push(Op::MaskedMeanPool { x: ix, mask: mask.to_vec(), counts }, shape, out, &[ix]))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, via log-sum-exp.
    /// `[C]` logits take one label; `[R×C]` take one label per row.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let (rows, classes) = rows_cols(self.shape_of(il));
        expect_len("cross_entropy labels", rows, labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(AdError::LabelOutOfRange { label: bad, classes });
        }
        let x = self.data_of(il);
        let mut probs = Vec::with_capacity(x.len());
        let mut total = 0.0f64;
        for (row, &label) in x.chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += (lse - row[label]).as_f64();
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let loss = T::of(total / rows as f64);
        Ok(self.push(Op::CrossEntropy { logits: il, labels: labels.to_vec(), probs }, vec![1], vec![loss], &[il]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s: T = self.data_of(ix).iter().copied().sum();
        Ok(self.push(Op::Sum(ix), vec![1], vec![s], &[ix]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let data = self.data_of(ix);
        let s: T = data.iter().copied().sum::<T>() / T::of(data.len() as f64);
        Ok(self.push(Op::Mean(ix), vec![1], vec![s], &[ix]))
    }

    /// `[B×L×n]` → `[B×n]` at time step `t`.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.shape_of(ix);
        if sx.len() != 3 || t >= sx[1] {
            return Err(AdError::InvalidShape { op: "select_step", shape: sx.to_vec(), reason: "need [B, L, n] with t < L" });
        }
        let (b, l, n) = (sx[0], sx[1], sx[2]);
        let data = self.data_of(ix);
        let mut out = Vec::with_capacity(b * n);
        for bi in 0..b {
            let off = (bi * l + t) * n;
            out.extend_from_slice(&data[off..off + n]);
        }
        Ok(self.push(Op::SelectStep { x: ix, t }, vec![b, n], out, &[ix]))
    }

    /// Stacks `L` tensors of shape `[B×n]` into `[B×L×n]`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let ids = steps.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or(AdError::EmptySequence { op: "stack_steps" })?;
        let s0 = self.shape_of(first).to_vec();
        if s0.len() != 2 {
            return Err(AdError::InvalidShape { op: "stack_steps", shape: s0, reason: "steps must be [B, n]" });
        }
        for &i in &ids[1..] {
            same_shape("stack_steps", &s0, self.shape_of(i))?;
        }
        let (b, n, l) = (s0[0], s0[1], ids.len());
        let mut out = vec![T::zero(); b * l * n];
        for (t, &i) in ids.iter().enumerate() {
            for (bi, row) in self.data_of(i).chunks(n).enumerate() {
                let off = (bi * l + t) * n;
                out[off..off + n].copy_from_slice(row);
            }
        }
        Ok(self.push(Op::Stack(ids.clone()), vec![b, l, n], out, &ids))
    }

    /// `[B×n]` → `[B×L×n]`, copying each row to every step.
    pub fn repeat_steps(&mut self, x: Var, steps: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = self.shape_of(ix);
        if sx.len() != 2 || steps == 0 {
            return Err(AdError::InvalidShape { op: "repeat_steps", shape: sx.to_vec(), reason: "need [B, n] and steps > 0" });
        }
        let (b, n) = (sx[0], sx[1]);
        let mut out = Vec::with_capacity(b * steps * n);
        for row in self.data_of(ix).chunks(n) {
            for _ in 0..steps {
                out.extend_from_slice(row);
            }
        }
        Ok(self.push(Op::RepeatSteps { x: ix }, vec![b, steps, n], out, &[ix]))
    }

    /// Row-wise select: row `r` comes from `new` when `take_new[r]`, else from `old`.
    pub fn blend(&mut self, take_new: &[bool], new: Var, old: Var) -> Result<Var> {
        let (inew, iold) = (self.idx(new)?, self.idx(old)?);
        same_shape("blend", self.shape_of(inew), self.shape_of(iold))?;
        let (rows, cols) = rows_cols(self.shape_of(inew));
        expect_len("blend mask", rows, take_new.len())?;
        let (dn, dold) = (self.data_of(inew), self.data_of(iold));
        let mut out = Vec::with_capacity(rows * cols);
        for (r, &keep) in take_new.iter().enumerate() {
            let src = if keep { dn } else { dold };
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let shape = self.shape_of(inew).to_vec();
        Ok(self.push(Op::Blend { take_new: take_new.to_vec(), new: inew, old: iold }, shape, out, &[inew, iold]))
    }

    /// Adds the input gradients of node `id` given its output gradient `g`.
    pub(crate) fn propagate(&self, id: usize, g: &[T], acc: &mut [Option<Vec<T>>]) {
        let needs = |i: usize| self.nodes[i].requires_grad;
        let out = self.data_of(id);
        match &self.nodes[id].op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul { a, b, trans_b, m, k, n } => {
                if needs(a) {
                    let bv = self.data_of(b);
                    gemm(false, !trans_b, m, n, k, g, bv, slot(acc, a, m * k), true);
                }
                if needs(b) {
                    let av = self.data_of(a);
                    if trans_b {
                        gemm(true, false, n, m, k, g, av, slot(acc, b, n * k), true);
                    } else {
                        gemm(true, false, k, m, n, av, g, slot(acc, b, k * n), true);
                    }
                }
            }
            &Op::BatchMatMul { a, b, trans_b, batch, m, k, n } => {
                if needs(a) {
                    let bv = self.data_of(b);
                    let da = slot(acc, a, batch * m * k);
                    for bi in 0..batch {
                        gemm(
                            false,
                            !trans_b,
                            m,
                            n,
                            k,
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * k * n..(bi + 1) * k * n],
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            true,
                        );
                    }
                }
                if needs(b) {
                    let av = self.data_of(a);
                    let db = slot(acc, b, batch * k * n);
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let asl = &av[bi * m * k..(bi + 1) * m * k];
                        let dst = &mut db[bi * k * n..(bi + 1) * k * n];
                        if trans_b {
                            gemm(true, false, n, m, k, gs, asl, dst, true);
                        } else {
                            gemm(true, false, k, m, n, asl, gs, dst, true);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for (i, sign) in [(a, 1.0), (b, 1.0)] {
                    if needs(i) {
                        axpy(slot(acc, i, g.len()), g, T::of(sign));
                    }
                }
            }
            &Op::Sub(a, b) => {
                for (i, sign) in [(a, 1.0), (b, -1.0)] {
                    if needs(i) {
                        axpy(slot(acc, i, g.len()), g, T::of(sign));
                    }
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    let bv = self.data_of(b);
                    for ((d, &gv), &y) in slot(acc, a, g.len()).iter_mut().zip(g).zip(bv) {
                        *d = *d + gv * y;
                    }
                }
                if needs(b) {
                    let av = self.data_of(a);
                    for ((d, &gv), &x) in slot(acc, b, g.len()).iter_mut().zip(g).zip(av) {
                        *d = *d + gv * x;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if needs(a) {
                    axpy(slot(acc, a, g.len()), g, c);
                }
            }
            &Op::AddBias { x, bias } => {
                if needs(x) {
                    axpy(slot(acc, x, g.len()), g, T::one());
                }
                if needs(bias) {
                    let cols = self.data_of(bias).len();
                    let db = slot(acc, bias, cols);
                    for row in g.chunks(cols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                }
            }
            &Op::Relu(x) => {
                if needs(x) {
                    let xv = self.data_of(x);
                    for ((d, &gv), &v) in slot(acc, x, g.len()).iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            &Op::Tanh(x) => {
                if needs(x) {
                    for ((d, &gv), &y) in slot(acc, x, g.len()).iter_mut().zip(g).zip(out) {
                        *d = *d + gv * (T::one() - y * y);
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if needs(x) {
                    for ((d, &gv), &y) in slot(acc, x, g.len()).iter_mut().zip(g).zip(out) {
                        *d = *d + gv * y * (T::one() - y);
                    }
                }
            }
            &Op::Softmax(x) | &Op::MaskedSoftmax(x) => {
                if needs(x) {
                    let (_, cols) = rows_cols(self.shape_of(id));
                    let dx = slot(acc, x, g.len());
                    for ((drow, grow), yrow) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + y * (gv - dot);
                        }
                    }
                }
            }
            &Op::Concat { a, b } => {
                let (_, ca) = rows_cols(self.shape_of(a));
                let (_, cb) = rows_cols(self.shape_of(b));
                let rows = g.len() / (ca + cb);
                if needs(a) {
                    let da = slot(acc, a, rows * ca);
                    for (drow, grow) in da.chunks_mut(ca).zip(g.chunks(ca + cb)) {
                        axpy(drow, &grow[..ca], T::one());
                    }
                }
                if needs(b) {
                    let db = slot(acc, b, rows * cb);
                    for (drow, grow) in db.chunks_mut(cb).zip(g.chunks(ca + cb)) {
                        axpy(drow, &grow[ca..], T::one());
                    }
                }
            }
            &Op::SliceLast { x, start } => {
                if needs(x) {
                    let (_, cols) = rows_cols(self.shape_of(x));
                    let (_, len) = rows_cols(self.shape_of(id));
                    let n = self.data_of(x).len();
                    let dx = slot(acc, x, n);
                    for (drow, grow) in dx.chunks_mut(cols).zip(g.chunks(len)) {
                        axpy(&mut drow[start..start + len], grow, T::one());
                    }
                }
            }
            &Op::Reshape(x) => {
                if needs(x) {
                    axpy(slot(acc, x, g.len()), g, T::one());
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                if needs(table) {
                    let st = self.shape_of(table);
                    let (v, d) = (st[0], st[1]);
                    let dt = slot(acc, table, v * d);
                    for (&id_row, grow) in ids.iter().zip(g.chunks(d)) {
                        axpy(&mut dt[id_row * d..(id_row + 1) * d], grow, T::one());
                    }
                }
            }
            Op::MaskedMeanPool { x, mask, counts } => {
                let x = *x;
                if needs(x) {
                    let sx = self.shape_of(x);
                    let (_, d) = rows_cols(sx);
                    let len = sx[sx.len() - 2];
                    let n = self.data_of(x).len();
                    let dx = slot(acc, x, n);
                    for (grp, (&count, grow)) in counts.iter().zip(g.chunks(d)).enumerate() {
                        let inv = T::one() / T::of(count as f64);
                        for t in 0..len {
                            let r = grp * len + t;
                            if mask[r] {
                                axpy(&mut dx[r * d..(r + 1) * d], grow, inv);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let logits = *logits;
                if needs(logits) {
                    let classes = probs.len() / labels.len();
                    let scale = g[0] / T::of(labels.len() as f64);
                    let dl = slot(acc, logits, probs.len());
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { T::one() } else { T::zero() };
                            let i = r * classes + c;
                            dl[i] = dl[i] + scale * (probs[i] - onehot);
                        }
                    }
                }
            }
            &Op::Sum(x) | &Op::Mean(x) => {
                if needs(x) {
                    let n = self.data_of(x).len();
                    let v = match self.nodes[id].op {
                        Op::Mean(_) => g[0] / T::of(n as f64),
                        _ => g[0],
                    };
                    slot(acc, x, n).iter_mut().for_each(|d| *d = *d + v);
                }
            }
            &Op::SelectStep { x, t } => {
                if needs(x) {
                    let sx = self.shape_of(x);
                    let (b, l, n) = (sx[0], sx[1], sx[2]);
                    let dx = slot(acc, x, b * l * n);
                    for (bi, grow) in g.chunks(n).enumerate() {
                        let off = (bi * l + t) * n;
                        axpy(&mut dx[off..off + n], grow, T::one());
                    }
                }
            }
            Op::Stack(ids) => {
                let so = self.shape_of(id);
                let (b, l, n) = (so[0], so[1], so[2]);
                for (t, &i) in ids.iter().enumerate() {
                    if needs(i) {
                        let di = slot(acc, i, b * n);
                        for bi in 0..b {
                            let off = (bi * l + t) * n;
                            axpy(&mut di[bi * n..(bi + 1) * n], &g[off..off + n], T::one());
                        }
                    }
                }
            }
            &Op::RepeatSteps { x } => {
                if needs(x) {
                    let so = self.shape_of(id);
                    let (b, l, n) = (so[0], so[1], so[2]);
                    let dx = slot(acc, x, b * n);
                    for bi in 0..b {
                        for t in 0..l {
                            let off = (bi * l + t) * n;
                            axpy(&mut dx[bi * n..(bi + 1) * n], &g[off..off + n], T::one());
                        }
                    }
                }
            }
            Op::Blend { take_new, new, old } => {
                let (new, old) = (*new, *old);
                let cols = g.len() / take_new.len();
                for (target, want) in [(new, true), (old, false)] {
                    if needs(target) {
                        let dt = slot(acc, target, g.len());
                        for (r, &keep) in take_new.iter().enumerate() {
                            if keep == want {
                                axpy(&mut dt[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols], T::one());
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slot<T: Real>(acc: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut [T] {
    acc[id].get_or_insert_with(|| vec![T::zero(); len])
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}
