//! Forward definitions of every differentiable operation.

use rand::Rng as _;

use crate::error::{Result, TensorError};
use crate::kernels::{broadcast_shape, gemm_nn, gemm_nt, permute_offsets, split_axis, BroadcastMap};
use crate::rng::Rng;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<'p> Tape<'p> {
    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = broadcast_shape(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let (da, db) = (self.value(a), self.value(b));
        let n: usize = shape.iter().product();
        let data = if sa == sb {
            da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let (ma, mb) = (BroadcastMap::new(&shape, sa), BroadcastMap::new(&shape, sb));
            (0..n).map(|i| f(da[ma.offset(i)], db[mb.offset(i)])).collect()
        };
        Ok((shape, data))
    }

    /// Elementwise sum with broadcasting over leading or trailing unit axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, data, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, data, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, data, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|v| v * c).collect();
        self.push(self.shape(x).to_vec(), data, Op::Scale(x.0, c), &[x.0])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|v| v + c).collect();
        self.push(self.shape(x).to_vec(), data, Op::AddScalar(x.0), &[x.0])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(self.shape(x).to_vec(), data, op, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x.0), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x.0), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x.0), f64::exp)
    }

    /// `a[..., k] · b[k, n]`, treating all leading axes of `a` as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[..., k] · b[n, k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, nt: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let k = *sa.last().unwrap();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sb.len() != 2 {
            return Err(mismatch());
        }
        let (kb, n) = if nt { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if kb != k {
            return Err(mismatch());
        }
        let m = self.value(a).len() / k;
        let mut out = vec![0.0; m * n];
        if nt {
            gemm_nt(&mut out, self.value(a), self.value(b), m, k, n);
        } else {
            gemm_nn(&mut out, self.value(a), self.value(b), m, k, n);
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape.push(n);
        Ok(self.push(shape, out, Op::MatMul { a: a.0, b: b.0, nt }, &[a.0, b.0]))
    }

    /// Batched product `a[B, m, k] · b[B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    /// Batched product `a[B, m, k] · b[B, n, k]ᵀ`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, nt: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == if nt { sb[2] } else { sb[1] };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: sa,
                rhs: sb,
            });
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if nt { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a), self.value(b));
        for t in 0..batch {
            let c = &mut out[t * m * n..(t + 1) * m * n];
            let at = &da[t * m * k..(t + 1) * m * k];
            let bt = &db[t * k * n..(t + 1) * k * n];
            if nt {
                gemm_nt(c, at, bt, m, k, n);
            } else {
                gemm_nn(c, at, bt, m, k, n);
            }
        }
        Ok(self.push(vec![batch, m, n], out, Op::Bmm { a: a.0, b: b.0, nt }, &[a.0, b.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x.0), &[x.0]))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument(format!("bad permutation {perm:?} for shape {shape:?}")));
        }
        let offsets = permute_offsets(&shape, perm);
        let src = self.value(x);
        let data = offsets.iter().map(|&o| src[o]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.push(out_shape, data, Op::Permute { x: x.0, offsets }, &[x.0]))
    }

    /// Transpose of a rank-2 value.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                data.extend_from_slice(&self.value(x)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(shape, data, Op::Concat { xs: ids.clone(), axis }, &ids))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                size: shape[axis],
            });
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(out_shape, data, Op::Slice { x: x.0, axis, start }, &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::SumAll(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op,
                axis,
                rank: shape.len(),
            });
        }
        Ok(shape)
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut out: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if out.is_empty() {
            out.push(1);
        }
        out
    }

    /// Sum over `axis`, which is removed from the output shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.check_axis("sum_axis", x, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        Ok(self.push(Self::reduced_shape(&shape, axis), data, Op::SumAxis { x: x.0, axis }, &[x.0]))
    }

    /// Max over `axis`; the gradient goes to the first maximal element.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.check_axis("max_axis", x, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = src[o * len * inner + i];
                for l in 1..len {
                    let v = src[(o * len + l) * inner + i];
                    if v > best_v {
                        best = l;
                        best_v = v;
                    }
                }
                data.push(best_v);
                argmax.push(best);
            }
        }
        Ok(self.push(Self::reduced_shape(&shape, axis), data, Op::MaxAxis { x: x.0, axis, argmax }, &[x.0]))
    }

    /// Numerically stable softmax along `axis`. Entries equal to `-inf`
    /// receive probability zero.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let data = self.softmax_values(x, axis, false)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::Softmax { x: x.0, axis }, &[x.0]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let data = self.softmax_values(x, axis, true)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::LogSoftmax { x: x.0, axis }, &[x.0]))
    }

    fn softmax_values(&self, x: Var, axis: usize, log: bool) -> Result<Vec<f64>> {
        let op = if log { "log_softmax" } else { "softmax" };
        let shape = self.check_axis(op, x, axis)?;
        let src = self.value(x);
        if src.iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite(op));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(TensorError::NonFinite(op));
                }
                let total: f64 = (0..len).map(|l| (src[at(l)] - max).exp()).sum();
                let log_total = total.ln();
                for l in 0..len {
                    let z = src[at(l)] - max;
                    out[at(l)] = if log { z - log_total } else { z.exp() / total };
                }
            }
        }
        Ok(out)
    }

    /// Normalises the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias` (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        for v in [gain, bias] {
            if self.value(v).len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        let src = self.value(x);
        let rows = src.len() / n;
        let (gd, bd) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gd[j] + bd[j];
            }
        }
        let op = Op::LayerNorm {
            x: x.0,
            gain: gain.0,
            bias: bias.0,
            xhat,
            inv_std,
        };
        Ok(self.push(shape, out, op, &[x.0, gain.0, bias.0]))
    }

    /// Rows of a rank-2 `table` selected by `ids`: `[ids.len(), cols]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArgument(format!("embedding table must be rank 2, got {shape:?}")));
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding_lookup",
                index: bad,
                size: rows,
            });
        }
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument("embedding_lookup with no ids".into()));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(vec![ids.len(), d], data, Op::Gather { table: table.0, ids: ids.to_vec() }, &[table.0]))
    }

    /// Selects `x[r, idx[r]]` for each leading row `r` of `x[..., m]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let m = *shape.last().unwrap();
        let rows = self.value(x).len() / m;
        if idx.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                lhs: shape,
                rhs: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(TensorError::IndexOutOfRange {
                op: "pick",
                index: bad,
                size: m,
            });
        }
        let src = self.value(x);
        let data = idx.iter().enumerate().map(|(r, &j)| src[r * m + j]).collect();
        Ok(self.push(vec![rows], data, Op::Pick { x: x.0, idx: idx.to_vec() }, &[x.0]))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` at training time,
    /// and the op is the identity when the tape is in evaluation mode.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!("dropout rate {p} not in [0, 1)")));
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::Dropout { x: x.0, mask }, &[x.0]))
    }

    /// Sliding windows over axis 1: `[G, K, d] -> [G, K-width+1, width*d]`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || width == 0 || width > shape[1] {
            return Err(TensorError::InvalidArgument(format!("cannot unfold {shape:?} with width {width}")));
        }
        let (groups, k, d) = (shape[0], shape[1], shape[2]);
        let p = k + 1 - width;
        let src = self.value(x);
        let mut data = Vec::with_capacity(groups * p * width * d);
        for g in 0..groups {
            for i in 0..p {
                data.extend_from_slice(&src[(g * k + i) * d..(g * k + i + width) * d]);
            }
        }
        Ok(self.push(vec![groups, p, width * d], data, Op::Unfold { x: x.0, width }, &[x.0]))
    }

    /// Convenience: a constant built from a shape and data.
    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape.to_vec(), data)?))
    }
}
