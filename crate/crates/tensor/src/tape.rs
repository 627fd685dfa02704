use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn, split_axis, BroadcastMap};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    MatMul { a: usize, b: usize, nt: bool },
    Bmm { a: usize, b: usize, nt: bool },
    Reshape(usize),
    Permute { x: usize, offsets: Vec<usize> },
    Concat { xs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    SumAll(usize),
    SumAxis { x: usize, axis: usize },
    MaxAxis { x: usize, axis: usize, argmax: Vec<usize> },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: usize, ids: Vec<usize> },
    Pick { x: usize, idx: Vec<usize> },
    Dropout { x: usize, mask: Vec<f64> },
    Unfold { x: usize, width: usize },
}

pub(crate) struct Node<'p> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Cow<'p, [f64]>,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Records a forward computation for one reverse-mode sweep.
///
/// Parameters are borrowed from a [`ParamStore`]; gradients come back as a
/// [`Gradients`] value which the caller folds into the store once the tape
/// is dropped.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    pub(crate) nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
}

impl<'p> Tape<'p> {
    /// A tape without parameters, for tests and standalone computations.
    pub fn new() -> Tape<'static> {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training: false,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training: false,
        }
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            shape,
            data: Cow::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            data: Cow::Owned(t.into_data()),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            data: Cow::Owned(t.into_data()),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// The stored parameter `id`, recorded at most once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("tape was built without a parameter store");
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            data: Cow::Borrowed(t.data()),
            op: Op::Param(id),
            needs_grad: t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .and_then(|s| s.id(name))
            .ok_or_else(|| TensorError::InvalidArgument(format!("unknown parameter `{name}`")))?;
        Ok(self.param(id))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// First element of `v`; intended for scalar results.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.to_vec()).expect("node shape is consistent")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.data.len() != 1 {
            return Err(TensorError::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(&self, node: &Node<'p>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |id: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[id].needs_grad {
                return;
            }
            let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
            f(buf);
        };
        let out = &node.data;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(a, &mut |buf| reduce_broadcast(buf, &nodes[a].shape, g, &node.shape, 1.0));
                acc(b, &mut |buf| reduce_broadcast(buf, &nodes[b].shape, g, &node.shape, sign));
            }
            &Op::Mul(a, b) => {
                let ma = BroadcastMap::new(&node.shape, &nodes[a].shape);
                let mb = BroadcastMap::new(&node.shape, &nodes[b].shape);
                let (da, db) = (&nodes[a].data, &nodes[b].data);
                acc(a, &mut |buf| {
                    for (i, gv) in g.iter().enumerate() {
                        buf[ma.offset(i)] += gv * db[mb.offset(i)];
                    }
                });
                acc(b, &mut |buf| {
                    for (i, gv) in g.iter().enumerate() {
                        buf[mb.offset(i)] += gv * da[ma.offset(i)];
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |buf| {
                for (b, gv) in buf.iter_mut().zip(g) {
                    *b += c * gv;
                }
            }),
            &Op::AddScalar(x) => acc(x, &mut |buf| add_into(buf, g)),
            &Op::Relu(x) => {
                let xd = &nodes[x].data;
                acc(x, &mut |buf| {
                    for ((b, gv), xv) in buf.iter_mut().zip(g).zip(xd.iter()) {
                        if *xv > 0.0 {
                            *b += gv;
                        }
                    }
                })
            }
            &Op::Tanh(x) => acc(x, &mut |buf| {
                for ((b, gv), y) in buf.iter_mut().zip(g).zip(out.iter()) {
                    *b += gv * (1.0 - y * y);
                }
            }),
            &Op::Sigmoid(x) => acc(x, &mut |buf| {
                for ((b, gv), y) in buf.iter_mut().zip(g).zip(out.iter()) {
                    *b += gv * y * (1.0 - y);
                }
            }),
            &Op::Exp(x) => acc(x, &mut |buf| {
                for ((b, gv), y) in buf.iter_mut().zip(g).zip(out.iter()) {
                    *b += gv * y;
                }
            }),
            &Op::MatMul { a, b, nt } => {
                let (sa, sb) = (&nodes[a].shape, &nodes[b].shape);
                let k = *sa.last().unwrap();
                let m = nodes[a].data.len() / k;
                let n = if nt { sb[0] } else { sb[1] };
                let (da, db) = (&nodes[a].data, &nodes[b].data);
                if nt {
                    acc(a, &mut |buf| gemm_nn(buf, g, db, m, n, k));
                    acc(b, &mut |buf| gemm_tn(buf, g, da, m, n, k));
                } else {
                    acc(a, &mut |buf| gemm_nt(buf, g, db, m, n, k));
                    acc(b, &mut |buf| gemm_tn(buf, da, g, m, k, n));
                }
            }
            &Op::Bmm { a, b, nt } => {
                let (sa, sb) = (&nodes[a].shape, &nodes[b].shape);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if nt { sb[1] } else { sb[2] };
                let (da, db) = (&nodes[a].data, &nodes[b].data);
                let (ea, eb, eo) = (m * k, k * n, m * n);
                acc(a, &mut |buf| {
                    for t in 0..batch {
                        let (bufs, gs, bs) = (&mut buf[t * ea..(t + 1) * ea], &g[t * eo..(t + 1) * eo], &db[t * eb..(t + 1) * eb]);
                        if nt {
                            gemm_nn(bufs, gs, bs, m, n, k);
                        } else {
                            gemm_nt(bufs, gs, bs, m, n, k);
                        }
                    }
                });
                acc(b, &mut |buf| {
                    for t in 0..batch {
                        let (bufs, gs, as_) = (&mut buf[t * eb..(t + 1) * eb], &g[t * eo..(t + 1) * eo], &da[t * ea..(t + 1) * ea]);
                        if nt {
                            gemm_tn(bufs, gs, as_, m, n, k);
                        } else {
                            gemm_tn(bufs, as_, gs, m, k, n);
                        }
                    }
                });
            }
            &Op::Reshape(x) => acc(x, &mut |buf| add_into(buf, g)),
            Op::Permute { x, offsets } => acc(*x, &mut |buf| {
                for (gv, &o) in g.iter().zip(offsets) {
                    buf[o] += gv;
                }
            }),
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut start = 0;
                for &x in xs {
                    let len = nodes[x].shape[*axis];
                    acc(x, &mut |buf| {
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + len) * inner];
                            add_into(&mut buf[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    start += len;
                }
            }
            &Op::Slice { x, axis, start } => {
                let (outer, total, inner) = split_axis(&nodes[x].shape, axis);
                let len = node.shape[axis];
                acc(x, &mut |buf| {
                    for o in 0..outer {
                        let dst = &mut buf[(o * total + start) * inner..(o * total + start + len) * inner];
                        add_into(dst, &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            &Op::SumAll(x) => acc(x, &mut |buf| {
                for b in buf.iter_mut() {
                    *b += g[0];
                }
            }),
            &Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_axis(&nodes[x].shape, axis);
                acc(x, &mut |buf| {
                    for o in 0..outer {
                        for l in 0..len {
                            let dst = &mut buf[(o * len + l) * inner..(o * len + l + 1) * inner];
                            add_into(dst, &g[o * inner..(o + 1) * inner]);
                        }
                    }
                });
            }
            Op::MaxAxis { x, axis, argmax } => {
                let (_, len, inner) = split_axis(&nodes[*x].shape, *axis);
                acc(*x, &mut |buf| {
                    for (j, (&am, gv)) in argmax.iter().zip(g).enumerate() {
                        let (o, i) = (j / inner, j % inner);
                        buf[(o * len + am) * inner + i] += gv;
                    }
                });
            }
            &Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(&node.shape, axis);
                acc(x, &mut |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                            for l in 0..len {
                                buf[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                });
            }
            &Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = split_axis(&node.shape, axis);
                acc(x, &mut |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let gsum: f64 = (0..len).map(|l| g[at(l)]).sum();
                            for l in 0..len {
                                buf[at(l)] += g[at(l)] - out[at(l)].exp() * gsum;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = *node.shape.last().unwrap();
                let rows = xhat.len() / n;
                let gain_d = &nodes[*gain].data;
                acc(*gain, &mut |buf| {
                    for r in 0..rows {
                        for j in 0..n {
                            buf[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                });
                acc(*bias, &mut |buf| {
                    for r in 0..rows {
                        add_into(buf, &g[r * n..(r + 1) * n]);
                    }
                });
                acc(*x, &mut |buf| {
                    let nf = n as f64;
                    for r in 0..rows {
                        let row = r * n..(r + 1) * n;
                        let dxhat: Vec<f64> = g[row.clone()].iter().zip(gain_d.iter()).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(&xhat[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            buf[r * n + j] += inv_std[r] / nf * (nf * dxhat[j] - sum_d - xhat[r * n + j] * sum_dx);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = nodes[*table].shape[1];
                acc(*table, &mut |buf| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Pick { x, idx } => {
                let m = *nodes[*x].shape.last().unwrap();
                acc(*x, &mut |buf| {
                    for (r, (&j, gv)) in idx.iter().zip(g).enumerate() {
                        buf[r * m + j] += gv;
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |buf| {
                for ((b, gv), m) in buf.iter_mut().zip(g).zip(mask) {
                    *b += gv * m;
                }
            }),
            &Op::Unfold { x, width } => {
                let s = &nodes[x].shape;
                let (groups, k, d) = (s[0], s[1], s[2]);
                let p = k + 1 - width;
                acc(x, &mut |buf| {
                    for gi in 0..groups {
                        for pi in 0..p {
                            let src = &g[(gi * p + pi) * width * d..(gi * p + pi + 1) * width * d];
                            let dst = &mut buf[(gi * k + pi) * d..(gi * k + pi + width) * d];
                            add_into(dst, src);
                        }
                    }
                });
            }
        }
    }
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn reduce_broadcast(buf: &mut [f64], in_shape: &[usize], g: &[f64], out_shape: &[usize], sign: f64) {
    let map = BroadcastMap::new(out_shape, in_shape);
    if let BroadcastMap::Same = map {
        for (b, gv) in buf.iter_mut().zip(g) {
            *b += sign * gv;
        }
        return;
    }
    for (i, gv) in g.iter().enumerate() {
        buf[map.offset(i)] += sign * gv;
    }
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::variable`] or [`Tape::param`].
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).and_then(|&i| self.nodes[i].as_deref())
    }
}
