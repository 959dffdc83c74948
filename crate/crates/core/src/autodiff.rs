//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one forward pass as a flat list of nodes. Leaves are
//! either constants or trainable parameters identified by a numeric id.
//! [`Tape::backward`] walks the nodes in reverse, adds the gradient of every
//! parameter leaf into a per-parameter accumulator and then clears the
//! recorded nodes so the next forward pass can start. The accumulator keeps
//! summing across passes until [`Tape::accumulate_and_reset`] drains it, which
//! is exactly the bookkeeping gradient accumulation needs.
//!
//! Reductions always sum in a fixed left-to-right order, so identical inputs
//! give bit-identical gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output keeps the input's spatial extent (stride 1).
    Same,
    /// No padding; each spatial extent shrinks by `kernel - 1`.
    Valid,
}

impl Padding {
    /// Leading pad and output extent for one spatial axis.
    pub fn geometry(self, input: usize, kernel: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Same => Some(((kernel - 1) / 2, input)),
            Padding::Valid => (input >= kernel).then(|| (0, input - kernel + 1)),
        }
    }
}

/// The primitive operations the tape knows how to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    Conv2d,
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
    MaxWindow,
    Concat,
    Slice,
    Reshape,
    SoftmaxCrossEntropy,
}

impl Primitive {
    pub const ALL: [Primitive; 12] = [
        Primitive::MatMul,
        Primitive::Conv2d,
        Primitive::Add,
        Primitive::Mul,
        Primitive::Tanh,
        Primitive::Sigmoid,
        Primitive::Relu,
        Primitive::MaxWindow,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::Reshape,
        Primitive::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Conv2d => "conv2d",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::MaxWindow => "max-window",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::Reshape => "reshape",
            Primitive::SoftmaxCrossEntropy => "softmax-crossentropy",
        }
    }
}

/// Max-pooling windows applied independently to consecutive blocks of an
/// input buffer.
///
/// Each output cell lists the offsets (relative to the block start) it takes
/// the maximum over, in scan order. Ties resolve to the first offset listed.
/// Offsets may repeat across cells and within a cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolWindows {
    block_len: usize,
    cells: Vec<Vec<usize>>,
}

impl PoolWindows {
    pub fn new(block_len: usize, cells: Vec<Vec<usize>>) -> Result<Self> {
        for (k, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::dim("max-window", format!("cell {k} is empty")));
            }
            if let Some(&bad) = cell.iter().find(|&&o| o >= block_len) {
                return Err(Error::dim(
                    "max-window",
                    format!("cell {k} offset {bad} outside block of {block_len}"),
                ));
            }
        }
        Ok(PoolWindows { block_len, cells })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    /// Pools `input` and returns `(values, argmax)` with flat input indices.
    pub fn apply(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        if self.block_len == 0 || input.len() % self.block_len != 0 {
            return Err(Error::dim(
                "max-window",
                format!(
                    "input of {} values is not a whole number of {}-value blocks",
                    input.len(),
                    self.block_len
                ),
            ));
        }
        let blocks = input.len() / self.block_len;
        let mut values = Vec::with_capacity(blocks * self.cells.len());
        let mut argmax = Vec::with_capacity(blocks * self.cells.len());
        for b in 0..blocks {
            let base = b * self.block_len;
            for cell in &self.cells {
                let mut best = base + cell[0];
                for &o in &cell[1..] {
                    if input[base + o] > input[best] {
                        best = base + o;
                    }
                }
                values.push(input[best]);
                argmax.push(best);
            }
        }
        Ok((values, argmax))
    }
}

enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: (usize, usize),
    },
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    MaxWindow {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-parameter gradients keyed by parameter id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<usize, Tensor>);

impl Gradients {
    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.0.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.0.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, id: usize, grad: Tensor) {
        self.0.insert(id, grad);
    }

    /// Elementwise sum, accumulating in `self`.
    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        for (&id, g) in &other.0 {
            match self.0.get_mut(&id) {
                Some(acc) => acc.add_assign(g)?,
                None => {
                    self.0.insert(id, g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.values_mut() {
            g.scale(factor);
        }
    }

    /// Largest absolute elementwise difference; ids missing on one side count
    /// as infinitely different.
    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        if self.0.len() != other.0.len() {
            return f64::INFINITY;
        }
        self.0
            .iter()
            .map(|(id, g)| match other.0.get(id) {
                Some(h) if h.shape() == g.shape() => g.max_abs_diff(h),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

/// Records a forward pass and replays it backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    accum: Gradients,
    passes: usize,
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

    /// Number of backward passes folded into the accumulator since the last reset.
    pub fn passes(&self) -> usize {
        self.passes
    }

    /// Drops the recorded nodes without touching the accumulator.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Flat argmax routing of a max-window node.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxWindow { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Accumulated gradients, without draining them.
    pub fn gradients(&self) -> &Gradients {
        &self.accum
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a trainable leaf. Gradients land in the accumulator under `id`.
    pub fn param(&mut self, id: usize, value: Tensor) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(
                "matmul",
                format!("lhs {sa:?} and rhs {sb:?} are not (m,k)x(k,n)"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// 2-D convolution with stride 1.
    ///
    /// `x` is `(batch, in_channels, samples, streams)`, `w` is
    /// `(out_channels, in_channels, k1, k2)` and the optional bias has one
    /// value per output channel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::dim(
                "conv2d",
                format!("input {sx:?} and kernel {sw:?} are not (n,c,s,t)/(o,c,k1,k2)"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {:?} does not match {} filters", self.shape(b), sw[0]),
                ));
            }
        }
        let geom = ConvGeom::new(&sx, &sw, padding).ok_or_else(|| {
            Error::dim(
                "conv2d",
                format!("input {sx:?} smaller than kernel {sw:?} under valid padding"),
            )
        })?;
        let bias = b.map(|b| self.data(b));
        let out = geom.forward(self.data(x), self.data(w), bias);
        let value = Tensor::new(vec![geom.n, geom.co, geom.so, geom.to], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                pad: (geom.ps, geom.pt),
            },
        ))
    }

    /// Elementwise sum. `b` may also match a trailing suffix of `a`'s shape,
    /// in which case it is broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(
                "add",
                format!("rhs {sb:?} is not a suffix of lhs {sa:?}"),
            ));
        }
        let bd = self.data(b);
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % bd.len()])
            .collect();
        let value = Tensor::new(sa.to_vec(), out)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Windowed maximum. `out_shape` must hold one value per pooled cell.
    pub fn max_window(&mut self, x: Var, windows: &PoolWindows, out_shape: &[usize]) -> Result<Var> {
        let (values, argmax) = windows.apply(self.data(x))?;
        if out_shape.iter().product::<usize>() != values.len() {
            return Err(Error::dim(
                "max-window",
                format!("{} pooled values cannot fill {:?}", values.len(), out_shape),
            ));
        }
        let value = Tensor::new(out_shape.to_vec(), values)?;
        Ok(self.push(value, Op::MaxWindow { x, argmax }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no operands"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut extent = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("operand {s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{end} on axis {axis} of {s:?}"),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let data = self.data(x);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let row = o * s[axis] * inner;
            out.extend_from_slice(&data[row + start * inner..row + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Mean softmax cross-entropy of `(batch, classes)` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim(
                "softmax-crossentropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            ));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::dim(
                "softmax-crossentropy",
                format!("label {bad} outside {c} classes"),
            ));
        }
        let z = self.data(logits);
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let p = softmax(row);
            total += log_sum_exp(row) - row[y];
            probs[i * c..(i + 1) * c].copy_from_slice(&p);
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Sum of all elements, built from reshape and matmul.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let row = self.reshape(x, &[1, n])?;
        let ones = self.constant(Tensor::ones(&[n, 1]));
        let total = self.matmul(row, ones)?;
        self.reshape(total, &[])
    }

    /// Replays the tape from `loss` and adds every parameter gradient into the
    /// accumulator. The recorded nodes are consumed, so every [`Var`] handed
    /// out before this call is dead afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::dim("backward", "loss must be a scalar on this tape"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let nodes = std::mem::take(&mut self.nodes);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let grad = Tensor::new(node.value.shape().to_vec(), g)?;
                    match self.accum.0.get_mut(id) {
                        Some(acc) => acc.add_assign(&grad)?,
                        None => {
                            self.accum.0.insert(*id, grad);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    let (ad, bd) = (va.data(), vb.data());
                    {
                        let ga = slot(&mut grads, *a, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bd[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, k * n);
                    for p in 0..k {
                        for i in 0..m {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
                Op::Conv2d { x, w, b, pad } => {
                    let (vx, vw) = (&nodes[x.0].value, &nodes[w.0].value);
                    let geom = ConvGeom::from_pad(vx.shape(), vw.shape(), *pad, node.value.shape());
                    let gx = geom.backward_input(&g, vw.data());
                    add_into(slot(&mut grads, *x, vx.numel()), &gx);
                    let gw = geom.backward_kernel(&g, vx.data());
                    add_into(slot(&mut grads, *w, vw.numel()), &gw);
                    if let Some(b) = b {
                        let gb = slot(&mut grads, *b, geom.co);
                        let plane = geom.so * geom.to;
                        for n in 0..geom.n {
                            for co in 0..geom.co {
                                let start = (n * geom.co + co) * plane;
                                gb[co] += g[start..start + plane].iter().sum::<f64>();
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let bn = nodes[b.0].value.numel();
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    let gb = slot(&mut grads, *b, bn);
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % bn] += gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    {
                        let ga = slot(&mut grads, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * bd[i];
                        }
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Relu(x) => {
                    let xd = nodes[x.0].value.data();
                    let gx = slot(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::MaxWindow { x, argmax } => {
                    let gx = slot(&mut grads, *x, nodes[x.0].value.numel());
                    for (k, &src) in argmax.iter().enumerate() {
                        gx[src] += g[k];
                    }
                }
                Op::Concat { inputs, axis } => {
                    let out_shape = node.value.shape();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let row = out_shape[*axis] * inner;
                    let mut offset = 0;
                    for v in inputs {
                        let vs = nodes[v.0].value.shape();
                        let chunk = vs[*axis] * inner;
                        let gv = slot(&mut grads, *v, outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            add_into(&mut gv[o * chunk..(o + 1) * chunk], src);
                        }
                        offset += chunk;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = nodes[x.0].value.shape();
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[axis + 1..].iter().product();
                    let len = node.value.shape()[*axis] * inner;
                    let gx = slot(&mut grads, *x, nodes[x.0].value.numel());
                    for o in 0..outer {
                        let dst = o * xs[*axis] * inner + start * inner;
                        add_into(&mut gx[dst..dst + len], &g[o * len..(o + 1) * len]);
                    }
                }
                Op::Reshape(x) => add_into(slot(&mut grads, *x, g.len()), &g),
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    let gl = slot(&mut grads, *logits, n * c);
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
        self.passes += 1;
        Ok(())
    }

    /// Returns the gradients summed over every backward pass since the last
    /// reset and zeroes the accumulator.
    pub fn accumulate_and_reset(&mut self) -> Gradients {
        self.passes = 0;
        std::mem::take(&mut self.accum)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += av * brow[j];
            }
        }
    }
    out
}

struct ConvGeom {
    n: usize,
    ci: usize,
    s: usize,
    t: usize,
    co: usize,
    k1: usize,
    k2: usize,
    ps: usize,
    pt: usize,
    so: usize,
    to: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], padding: Padding) -> Option<Self> {
        let (ps, so) = padding.geometry(x[2], w[2])?;
        let (pt, to) = padding.geometry(x[3], w[3])?;
        Some(ConvGeom {
            n: x[0],
            ci: x[1],
            s: x[2],
            t: x[3],
            co: w[0],
            k1: w[2],
            k2: w[3],
            ps,
            pt,
            so,
            to,
        })
    }

    fn from_pad(x: &[usize], w: &[usize], pad: (usize, usize), out: &[usize]) -> Self {
        ConvGeom {
            n: x[0],
            ci: x[1],
            s: x[2],
            t: x[3],
            co: w[0],
            k1: w[2],
            k2: w[3],
            ps: pad.0,
            pt: pad.1,
            so: out[2],
            to: out[3],
        }
    }

    /// Output rows `i` for which input row `i + d - pad` is in range.
    fn span(out: usize, input: usize, d: usize, pad: usize) -> std::ops::Range<usize> {
        let lo = pad.saturating_sub(d);
        let hi = (input + pad).saturating_sub(d).min(out);
        lo..hi.max(lo)
    }

    fn forward(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let plane_out = self.so * self.to;
        let plane_in = self.s * self.t;
        let mut out = vec![0.0; self.n * self.co * plane_out];
        for n in 0..self.n {
            for co in 0..self.co {
                let o = &mut out[(n * self.co + co) * plane_out..][..plane_out];
                if let Some(b) = bias {
                    o.fill(b[co]);
                }
                for ci in 0..self.ci {
                    let xp = &x[(n * self.ci + ci) * plane_in..][..plane_in];
                    for di in 0..self.k1 {
                        let rows = Self::span(self.so, self.s, di, self.ps);
                        for dj in 0..self.k2 {
                            let wv = w[((co * self.ci + ci) * self.k1 + di) * self.k2 + dj];
                            let cols = Self::span(self.to, self.t, dj, self.pt);
                            for i in rows.clone() {
                                let xi = i + di - self.ps;
                                let orow = &mut o[i * self.to..(i + 1) * self.to];
                                let xrow = &xp[xi * self.t..(xi + 1) * self.t];
                                for j in cols.clone() {
                                    orow[j] += wv * xrow[j + dj - self.pt];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_input(&self, g: &[f64], w: &[f64]) -> Vec<f64> {
        let plane_out = self.so * self.to;
        let plane_in = self.s * self.t;
        let mut gx = vec![0.0; self.n * self.ci * plane_in];
        for n in 0..self.n {
            for co in 0..self.co {
                let gp = &g[(n * self.co + co) * plane_out..][..plane_out];
                for ci in 0..self.ci {
                    let xp = &mut gx[(n * self.ci + ci) * plane_in..][..plane_in];
                    for di in 0..self.k1 {
                        let rows = Self::span(self.so, self.s, di, self.ps);
                        for dj in 0..self.k2 {
                            let wv = w[((co * self.ci + ci) * self.k1 + di) * self.k2 + dj];
                            let cols = Self::span(self.to, self.t, dj, self.pt);
                            for i in rows.clone() {
                                let xi = i + di - self.ps;
                                for j in cols.clone() {
                                    xp[xi * self.t + j + dj - self.pt] += wv * gp[i * self.to + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    fn backward_kernel(&self, g: &[f64], x: &[f64]) -> Vec<f64> {
        let plane_out = self.so * self.to;
        let plane_in = self.s * self.t;
        let mut gw = vec![0.0; self.co * self.ci * self.k1 * self.k2];
        for n in 0..self.n {
            for co in 0..self.co {
                let gp = &g[(n * self.co + co) * plane_out..][..plane_out];
                for ci in 0..self.ci {
                    let xp = &x[(n * self.ci + ci) * plane_in..][..plane_in];
                    for di in 0..self.k1 {
                        let rows = Self::span(self.so, self.s, di, self.ps);
                        for dj in 0..self.k2 {
                            let cols = Self::span(self.to, self.t, dj, self.pt);
                            let mut acc = 0.0;
                            for i in rows.clone() {
                                let xi = i + di - self.ps;
                                for j in cols.clone() {
                                    acc += gp[i * self.to + j] * xp[xi * self.t + j + dj - self.pt];
                                }
                            }
                            gw[((co * self.ci + ci) * self.k1 + di) * self.k2 + dj] += acc;
                        }
                    }
                }
            }
        }
        gw
    }
}
