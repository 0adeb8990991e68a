//! Computation tape and the primitive differentiable operations.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction. [`Tape::backward`] walks it once in reverse and
//! consumes it.

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddSuffix(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Ln(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    SumLast(Var),
    SumAll(Var),
    MeanAll(Var),
    Im2Col {
        x: Var,
        batch: usize,
        time: usize,
        channels: usize,
        kernel: usize,
        pad: usize,
    },
    SliceRows {
        x: Var,
        offset: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        time: usize,
        heads: usize,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    /// Saved intermediate (attention weights) kept for the reverse pass.
    aux: Vec<f64>,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn permuted_strides(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape = perm.iter().map(|&p| shape[p]).collect();
    let src_strides = perm.iter().map(|&p| strides[p]).collect();
    (out_shape, src_strides)
}

/// Copy `src` (shape `shape`) into permuted layout. With `scatter`, the
/// mapping is reversed: `src` is in permuted layout and is accumulated into
/// `dst` in the original layout.
fn permute_copy(src: &[f64], shape: &[usize], perm: &[usize], dst: &mut [f64], scatter: bool) {
    let (out_shape, src_strides) = permuted_strides(shape, perm);
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for linear in 0..total {
        if scatter {
            dst[offset] += src[linear];
        } else {
            dst[linear] = src[offset];
        }
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            offset += src_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= src_strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Record a tensor as a leaf; tracks gradients iff `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Leaf that always tracks gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true)
    }

    /// Leaf that never tracks gradients.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "constant of shape {shape:?} given {} values",
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor {
            shape: node.shape.clone(),
            data: node.value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `a[..., k] · b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        if ash.is_empty() || bsh.len() != 2 || *ash.last().unwrap() != bsh[0] {
            return Err(Error::Dimension(format!("matmul {ash:?} x {bsh:?}")));
        }
        let k = bsh[0];
        let n = bsh[1];
        let m = ash.iter().product::<usize>() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let mut shape = ash;
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(a) || self.needs(b);
        let op = Op::MatMul {
            a,
            b,
            batch: 1,
            m,
            k,
            n,
            ta: false,
            tb: false,
        };
        Ok(self.push(shape, out, op, needs))
    }

    /// Batched `op(a) · op(b)` over leading dimension `B`.
    ///
    /// `a` is `[B, m, k]` (or `[B, k, m]` when `ta`), `b` is `[B, k, n]`
    /// (or `[B, n, k]` when `tb`).
    pub fn bmm(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] {
            return Err(Error::Dimension(format!("bmm {ash:?} x {bsh:?}")));
        }
        let (m, k) = if ta { (ash[2], ash[1]) } else { (ash[1], ash[2]) };
        let (kb, n) = if tb { (bsh[2], bsh[1]) } else { (bsh[1], bsh[2]) };
        if k != kb {
            return Err(Error::Dimension(format!(
                "bmm inner extents differ: {ash:?} (t={ta}) x {bsh:?} (t={tb})"
            )));
        }
        let batch = ash[0];
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    ta,
                    &bv[i * k * n..(i + 1) * k * n],
                    tb,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            ta,
            tb,
        };
        Ok(self.push(vec![batch, m, n], out, op, needs))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + y` where `y`'s shape is a suffix of `x`'s (bias, positional codes).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ys = self.shape(y);
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(Error::Dimension(format!("broadcast {ys:?} onto {xs:?}")));
        }
        let inner = self.value(y).len();
        let yv = self.value(y);
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + yv[i % inner])
            .collect();
        let needs = self.needs(x) || self.needs(y);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddSuffix(x, y), needs))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), out, op, needs)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Natural logarithm; inputs must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Numeric(format!("log of non-positive value {bad}")));
        }
        Ok(self.map(x, f64::ln, Op::Ln(x)))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), needs))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension(format!("bad permutation {perm:?} for {shape:?}")));
        }
        let mut out = vec![0.0; self.value(x).len()];
        permute_copy(self.value(x), &shape, perm, &mut out, false);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let needs = self.needs(x);
        Ok(self.push(
            out_shape,
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    /// Softmax over the trailing axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().ok_or_else(|| Error::Dimension("softmax of a scalar".into()))?;
        let xv = self.value(x);
        if xv.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut out = vec![0.0; xv.len()];
        softmax_rows(xv, k, &mut out);
        let needs = self.needs(x);
        Ok(self.push(shape, out, Op::Softmax(x), needs))
    }

    /// Layer normalisation over the trailing axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Dimension("layer norm of a scalar".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Dimension(format!(
                "layer norm gain/bias must be [{d}], got {:?} / {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xv[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let needs = self.needs(x);
        Ok(self.push(out_shape, out, Op::MeanAxis { x, outer, len, inner }, needs))
    }

    /// Sum over the trailing axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().ok_or_else(|| Error::Dimension("sum_last of a scalar".into()))?;
        let out: Vec<f64> = self.value(x).chunks(k.max(1)).map(|c| c.iter().sum()).collect();
        let needs = self.needs(x);
        Ok(self.push(shape[..shape.len() - 1].to_vec(), out, Op::SumLast(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(vec![], vec![s], Op::SumAll(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let needs = self.needs(x);
        self.push(vec![], vec![s], Op::MeanAll(x), needs)
    }

    /// `[B, T, C] -> [B, T, kernel·C]` patches for a stride-1 1-D convolution
    /// with `pad` zeros on the left (and `kernel - 1 - pad` on the right).
    pub fn im2col(&mut self, x: Var, kernel: usize, pad: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || kernel == 0 || pad >= kernel {
            return Err(Error::Dimension(format!(
                "im2col expects [B,T,C] with pad < kernel, got {shape:?} k={kernel} pad={pad}"
            )));
        }
        let (batch, time, channels) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let width = kernel * channels;
        let mut out = vec![0.0; batch * time * width];
        for b in 0..batch {
            for t in 0..time {
                let dst = &mut out[(b * time + t) * width..(b * time + t + 1) * width];
                for j in 0..kernel {
                    let src_t = t as isize + j as isize - pad as isize;
                    if src_t < 0 || src_t >= time as isize {
                        continue;
                    }
                    let src = (b * time + src_t as usize) * channels;
                    dst[j * channels..(j + 1) * channels].copy_from_slice(&xv[src..src + channels]);
                }
            }
        }
        let needs = self.needs(x);
        let op = Op::Im2Col {
            x,
            batch,
            time,
            channels,
            kernel,
            pad,
        };
        Ok(self.push(vec![batch, time, width], out, op, needs))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::Dimension(format!(
                "slice {start}..{} of {shape:?}",
                start + len
            )));
        }
        let row: usize = shape[1..].iter().product();
        let value = self.value(x)[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let needs = self.needs(x);
        Ok(self.push(
            out_shape,
            value,
            Op::SliceRows {
                x,
                offset: start * row,
            },
            needs,
        ))
    }

    /// Fused scaled dot-product attention over `heads` column groups.
    ///
    /// `q`, `k`, `v` are `[B, T, d]`; head `h` uses columns
    /// `h·d/heads..(h+1)·d/heads`. Returns the concatenated per-head context,
    /// `[B, T, d]`. Equivalent to splitting heads, `softmax(q kᵀ / √dh) v`,
    /// and merging heads back.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 3 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "attention needs equal [B, T, d] operands, got {shape:?} / {:?} / {:?}",
                self.shape(k),
                self.shape(v)
            )));
        }
        let (batch, time, d) = (shape[0], shape[1], shape[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut weights = vec![0.0; batch * heads * time * time];
        let mut out = vec![0.0; batch * time * d];
        let mut heads_buf = HeadBuffers::new(time, dh);
        let mut row = vec![0.0; time];
        for b in 0..batch {
            for h in 0..heads {
                heads_buf.gather(qv, kv, vv, b * time * d, d, h * dh);
                let HeadBuffers { q: qh, k_t, v: vh, .. } = &heads_buf;
                let wbase = (b * heads + h) * time * time;
                for i in 0..time {
                    row.fill(0.0);
                    for c in 0..dh {
                        let qc = qh[i * dh + c] * scale;
                        axpy(&mut row, qc, &k_t[c * time..(c + 1) * time]);
                    }
                    let wrow = &mut weights[wbase + i * time..wbase + (i + 1) * time];
                    softmax_rows(&row, time, wrow);
                    let off = b * time * d + i * d + h * dh;
                    let oi = &mut out[off..off + dh];
                    for (j, &w) in wrow.iter().enumerate() {
                        axpy(oi, w, &vh[j * dh..(j + 1) * dh]);
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        let op = Op::Attention {
            q,
            k,
            v,
            batch,
            time,
            heads,
            scale,
        };
        let var = self.push(shape, out, op, needs);
        self.nodes[var.0].aux = weights;
        Ok(var)
    }

    /// Attention weights `[B, heads, T, T]` saved by [`Tape::attention`].
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        let node = &self.nodes[v.0];
        matches!(node.op, Op::Attention { .. }).then_some(node.aux.as_slice())
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        if loss.0 >= nodes.len() {
            return Err(Error::Usage("loss is not on this tape".into()));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            if let Op::Attention { .. } = node.op {
                attention_backprop(&nodes, node, &g, &mut grads);
            } else {
                backprop(&nodes, node, &g, &mut grads);
            }
        }
        Ok(Gradients { grads })
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Contiguous copies of one head's query/key/value columns.
struct HeadBuffers {
    time: usize,
    dh: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    k_t: Vec<f64>,
    v: Vec<f64>,
    v_t: Vec<f64>,
}

impl HeadBuffers {
    fn new(time: usize, dh: usize) -> Self {
        let z = || vec![0.0; time * dh];
        Self {
            time,
            dh,
            q: z(),
            k: z(),
            k_t: z(),
            v: z(),
            v_t: z(),
        }
    }

    fn gather(&mut self, q: &[f64], k: &[f64], v: &[f64], base: usize, d: usize, col: usize) {
        let (time, dh) = (self.time, self.dh);
        for t in 0..time {
            let off = base + t * d + col;
            for c in 0..dh {
                self.q[t * dh + c] = q[off + c];
                self.k[t * dh + c] = k[off + c];
                self.v[t * dh + c] = v[off + c];
                self.k_t[c * time + t] = k[off + c];
                self.v_t[c * time + t] = v[off + c];
            }
        }
    }
}

pub(crate) fn softmax_rows(x: &[f64], k: usize, out: &mut [f64]) {
    for (row, dst) in x.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        let inv = 1.0 / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn attention_backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let Op::Attention {
        q,
        k,
        v,
        batch,
        time,
        heads,
        scale,
    } = node.op
    else {
        unreachable!()
    };
    let d = node.shape[2];
    let dh = d / heads;
    let w = &node.aux;
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let n = qv.len();
    let mut dq = vec![0.0; n];
    let mut dk = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut dw = vec![0.0; time];
    let mut hb = HeadBuffers::new(time, dh);
    let mut dq_h = vec![0.0; time * dh];
    let mut dk_h = vec![0.0; time * dh];
    let mut dv_h = vec![0.0; time * dh];
    for b in 0..batch {
        let base = b * time * d;
        for h in 0..heads {
            let col = h * dh;
            hb.gather(qv, kv, vv, base, d, col);
            dq_h.fill(0.0);
            dk_h.fill(0.0);
            dv_h.fill(0.0);
            let wbase = (b * heads + h) * time * time;
            for i in 0..time {
                let gi = &g[base + i * d + col..base + i * d + col + dh];
                let wrow = &w[wbase + i * time..wbase + (i + 1) * time];
                dw.fill(0.0);
                for (c, &gc) in gi.iter().enumerate() {
                    axpy(&mut dw, gc, &hb.v_t[c * time..(c + 1) * time]);
                }
                for (j, &wij) in wrow.iter().enumerate() {
                    axpy(&mut dv_h[j * dh..(j + 1) * dh], wij, gi);
                }
                let dot: f64 = dw.iter().zip(wrow).map(|(a, b)| a * b).sum();
                let qi = &hb.q[i * dh..(i + 1) * dh];
                let dqi = &mut dq_h[i * dh..(i + 1) * dh];
                for j in 0..time {
                    let ds = wrow[j] * (dw[j] - dot) * scale;
                    axpy(dqi, ds, &hb.k[j * dh..(j + 1) * dh]);
                    axpy(&mut dk_h[j * dh..(j + 1) * dh], ds, qi);
                }
            }
            for t in 0..time {
                let off = base + t * d + col;
                for (dst, src) in [(&mut dq, &dq_h), (&mut dk, &dk_h), (&mut dv, &dv_h)] {
                    dst[off..off + dh].iter_mut().zip(&src[t * dh..(t + 1) * dh]).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    for (var, local) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(dst) = slot(grads, nodes, var) {
            dst.iter_mut().zip(&local).for_each(|(a, b)| *a += b);
        }
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf | Op::Attention { .. } => {}
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            ta,
            tb,
        } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if let Some(ga) = slot(grads, nodes, a) {
                for i in 0..batch {
                    let gc = &g[i * m * n..(i + 1) * m * n];
                    let bs = &bv[i * k * n..(i + 1) * k * n];
                    let dst = &mut ga[i * m * k..(i + 1) * m * k];
                    if ta {
                        gemm(k, n, m, bs, tb, gc, true, dst, true);
                    } else {
                        gemm(m, n, k, gc, false, bs, !tb, dst, true);
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, b) {
                for i in 0..batch {
                    let gc = &g[i * m * n..(i + 1) * m * n];
                    let asl = &av[i * m * k..(i + 1) * m * k];
                    let dst = &mut gb[i * k * n..(i + 1) * k * n];
                    if tb {
                        gemm(n, m, k, gc, true, asl, ta, dst, true);
                    } else {
                        gemm(k, m, n, asl, !ta, gc, false, dst, true);
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(dst) = slot(grads, nodes, v) {
                    dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
                }
            }
        }
        &Op::Sub(a, b) => {
            if let Some(dst) = slot(grads, nodes, a) {
                dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
            }
            if let Some(dst) = slot(grads, nodes, b) {
                dst.iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(dst) = slot(grads, nodes, a) {
                for ((d, &x), &y) in dst.iter_mut().zip(g).zip(bv) {
                    *d += x * y;
                }
            }
            if let Some(dst) = slot(grads, nodes, b) {
                for ((d, &x), &y) in dst.iter_mut().zip(g).zip(av) {
                    *d += x * y;
                }
            }
        }
        &Op::AddSuffix(x, y) => {
            if let Some(dst) = slot(grads, nodes, x) {
                dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            if let Some(dst) = slot(grads, nodes, y) {
                let inner = dst.len();
                for chunk in g.chunks(inner) {
                    dst.iter_mut().zip(chunk).for_each(|(d, &v)| *d += v);
                }
            }
        }
        &Op::Scale(x, s) => {
            if let Some(dst) = slot(grads, nodes, x) {
                dst.iter_mut().zip(g).for_each(|(d, &v)| *d += s * v);
            }
        }
        &Op::AddScalar(x) | &Op::Reshape(x) => {
            if let Some(dst) = slot(grads, nodes, x) {
                dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
        &Op::Relu(x) => {
            let xv = &nodes[x.0].value;
            if let Some(dst) = slot(grads, nodes, x) {
                for ((d, &v), &xi) in dst.iter_mut().zip(g).zip(xv) {
                    if xi > 0.0 {
                        *d += v;
                    }
                }
            }
        }
        &Op::Ln(x) => {
            let xv = &nodes[x.0].value;
            if let Some(dst) = slot(grads, nodes, x) {
                for ((d, &v), &xi) in dst.iter_mut().zip(g).zip(xv) {
                    *d += v / xi;
                }
            }
        }
        &Op::Clamp { x, lo, hi } => {
            let xv = &nodes[x.0].value;
            if let Some(dst) = slot(grads, nodes, x) {
                for ((d, &v), &xi) in dst.iter_mut().zip(g).zip(xv) {
                    if (lo..=hi).contains(&xi) {
                        *d += v;
                    }
                }
            }
        }
        Op::Permute { x, perm } => {
            let shape = nodes[x.0].shape.clone();
            if let Some(dst) = slot(grads, nodes, *x) {
                permute_copy(g, &shape, perm, dst, true);
            }
        }
        &Op::Softmax(x) => {
            let y = &node.value;
            let k = *node.shape.last().unwrap();
            if let Some(dst) = slot(grads, nodes, x) {
                for ((gr, yr), dr) in g.chunks(k).zip(y.chunks(k)).zip(dst.chunks_mut(k)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = *node.shape.last().unwrap();
            let gv = nodes[gamma.0].value.clone();
            if let Some(dst) = slot(grads, nodes, *gamma) {
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dst[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(dst) = slot(grads, nodes, *beta) {
                for gr in g.chunks(d) {
                    dst.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                }
            }
            if let Some(dst) = slot(grads, nodes, *x) {
                let inv_d = 1.0 / d as f64;
                for (r, ((gr, hr), dr)) in g.chunks(d).zip(xhat.chunks(d)).zip(dst.chunks_mut(d)).enumerate() {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    let is = inv_std[r];
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        dr[j] += is * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                    }
                }
            }
        }
        &Op::MeanAxis { x, outer, len, inner } => {
            if let Some(dst) = slot(grads, nodes, x) {
                let inv = 1.0 / len as f64;
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            dst[base + i] += g[o * inner + i] * inv;
                        }
                    }
                }
            }
        }
        &Op::SumLast(x) => {
            if let Some(dst) = slot(grads, nodes, x) {
                let k = dst.len() / g.len().max(1);
                for (chunk, &gv) in dst.chunks_mut(k.max(1)).zip(g) {
                    chunk.iter_mut().for_each(|d| *d += gv);
                }
            }
        }
        &Op::SumAll(x) => {
            if let Some(dst) = slot(grads, nodes, x) {
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::MeanAll(x) => {
            if let Some(dst) = slot(grads, nodes, x) {
                let s = g[0] / dst.len().max(1) as f64;
                dst.iter_mut().for_each(|d| *d += s);
            }
        }
        &Op::Im2Col {
            x,
            batch,
            time,
            channels,
            kernel,
            pad,
        } => {
            if let Some(dst) = slot(grads, nodes, x) {
                let width = kernel * channels;
                for b in 0..batch {
                    for t in 0..time {
                        let src = &g[(b * time + t) * width..(b * time + t + 1) * width];
                        for j in 0..kernel {
                            let st = t as isize + j as isize - pad as isize;
                            if st < 0 || st >= time as isize {
                                continue;
                            }
                            let base = (b * time + st as usize) * channels;
                            for c in 0..channels {
                                dst[base + c] += src[j * channels + c];
                            }
                        }
                    }
                }
            }
        }
        &Op::SliceRows { x, offset } => {
            if let Some(dst) = slot(grads, nodes, x) {
                dst[offset..offset + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &v)| *d += v);
            }
        }
    }
}
