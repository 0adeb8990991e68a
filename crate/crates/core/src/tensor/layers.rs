//! Parameter storage and the neural building blocks.

use std::ops::Index;

use super::{Gradients, Prng, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameters in registration order.
///
/// Initial values are drawn from the store's own [`Prng`] in the order
/// parameters are registered, so a given seed and architecture always
/// yield the same initial weights.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: Prng,
}

/// Tape handles for every parameter of a store, valid for one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: Prng::new(seed),
        }
    }

    fn register(&mut self, name: String, tensor: Tensor) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform weights.
    pub fn glorot(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let bound = glorot_bound(fan_in, fan_out);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform_range(-bound, bound)).collect();
        let t = Tensor::new(shape, data).expect("shape product matches");
        self.register(name.into(), t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.register(name.into(), Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.register(name.into(), Tensor::full(shape, 1.0))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on the tape. With `trainable == false` they are
    /// recorded as constants and no gradients are tracked.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t)
                } else {
                    tape.constant(t.shape(), t.data().to_vec()).expect("valid tensor")
                }
            })
            .collect();
        Bound { vars }
    }

    /// Copy gradients for every bound parameter into `Tensor::grad`.
    pub fn store_grads(&mut self, grads: &mut Gradients, bound: &Bound) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            let g = grads.take(v).unwrap_or_else(|| vec![0.0; t.numel()]);
            t.set_grad(Some(g))?;
        }
        Ok(())
    }

    /// Overwrite values with those of `other`, matched by name and shape.
    pub fn load_from(&mut self, names: &[String], tensors: &[Tensor]) -> Result<()> {
        if names.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.names.len(),
                names.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if tensors[j].shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} expected {:?}",
                    tensors[j].shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = tensors[j].clone().with_requires_grad(true);
        }
        Ok(())
    }
}

/// Fixed sinusoidal position codes, `[T, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Affine map over the trailing axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.glorot(format!("{name}.weight"), &[d_in, d_out], d_in, d_out);
        let bias = store.zeros(format!("{name}.bias"), &[d_out]);
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_broadcast(y, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.ones(format!("{name}.gain"), &[d]),
            bias: store.zeros(format!("{name}.bias"), &[d]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], Self::EPS)
    }
}

/// Scaled dot-product self-attention with per-head projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), d_model, d_model),
            key: Linear::new(store, &format!("{name}.k"), d_model, d_model),
            value: Linear::new(store, &format!("{name}.v"), d_model, d_model),
            output: Linear::new(store, &format!("{name}.o"), d_model, d_model),
            heads,
            d_model,
        })
    }

    /// Output `[B, T, d]` and the attention node (see [`Tape::attention_weights`]).
    pub fn forward_with_weights(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(Error::Dimension(format!(
                "attention expects [B, T, {}], got {shape:?}",
                self.d_model
            )));
        }
        let q = self.query.forward(tape, p, x)?;
        let k = self.key.forward(tape, p, x)?;
        let v = self.value.forward(tape, p, x)?;
        let ctx = tape.attention(q, k, v, self.heads)?;
        Ok((self.output.forward(tape, p, ctx)?, ctx))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(tape, p, x)?.0)
    }
}

/// Two-layer ReLU perceptron applied per position.
#[derive(Debug, Clone)]
pub struct FeedForward {
    hidden: Linear,
    output: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, width: usize) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), d_model, width),
            output: Linear::new(store, &format!("{name}.fc2"), width, d_model),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.output.forward(tape, p, h)
    }
}

/// Pre-norm block: `x + MHA(LN(x))`, then `x + FF(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm_attn: LayerNorm,
    attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, ff_width: usize) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, ff_width),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(tape, p, x)?;
        let h = self.attn.forward(tape, p, h)?;
        let x = tape.add(x, h)?;
        let h = self.norm_ff.forward(tape, p, x)?;
        let h = self.ff.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Input projection, sinusoidal positions, a stack of pre-norm blocks and a
/// final layer norm. Maps `[B, T, C]` to `[B, T, d_model]`.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    input: Linear,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
    d_model: usize,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        d_model: usize,
        layers: usize,
        heads: usize,
        ff_width: usize,
    ) -> Result<Self> {
        let input = Linear::new(store, &format!("{name}.input"), channels, d_model);
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), d_model, heads, ff_width))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(store, &format!("{name}.ln_final"), d_model);
        Ok(Self {
            input,
            blocks,
            final_norm,
            d_model,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input.d_in {
            return Err(Error::Dimension(format!(
                "encoder expects [B, T, {}], got {shape:?}",
                self.input.d_in
            )));
        }
        let h = self.input.forward(tape, p, x)?;
        let pe = tape.constant(&[shape[1], self.d_model], positional_encoding(shape[1], self.d_model))?;
        let mut h = tape.add_broadcast(h, pe)?;
        for block in &self.blocks {
            h = block.forward(tape, p, h)?;
        }
        self.final_norm.forward(tape, p, h)
    }
}

/// Same-padded kernel-3 convolutions with a residual shortcut, channels-last.
///
/// `relu(conv2(relu(conv1(x))) + shortcut(x))`, where the shortcut is a 1×1
/// projection when the width changes.
#[derive(Debug, Clone)]
pub struct ResidualConvBlock {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    shortcut: Option<Linear>,
    kernel: usize,
}

impl ResidualConvBlock {
    pub const KERNEL: usize = 3;

    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Self {
        let k = Self::KERNEL;
        let conv1 = (
            store.glorot(format!("{name}.conv1.weight"), &[k * c_in, c_out], k * c_in, k * c_out),
            store.zeros(format!("{name}.conv1.bias"), &[c_out]),
        );
        let conv2 = (
            store.glorot(format!("{name}.conv2.weight"), &[k * c_out, c_out], k * c_out, k * c_out),
            store.zeros(format!("{name}.conv2.bias"), &[c_out]),
        );
        let shortcut = (c_in != c_out).then(|| Linear::new(store, &format!("{name}.proj"), c_in, c_out));
        Self {
            conv1,
            conv2,
            shortcut,
            kernel: k,
        }
    }

    fn conv(&self, tape: &mut Tape, p: &Bound, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let cols = tape.im2col(x, self.kernel, self.kernel / 2)?;
        let y = tape.matmul(cols, p[w])?;
        tape.add_broadcast(y, p[b])
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv(tape, p, x, self.conv1)?;
        let h = tape.relu(h);
        let h = self.conv(tape, p, h, self.conv2)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(tape, p, x)?,
            None => x,
        };
        let y = tape.add(h, skip)?;
        Ok(tape.relu(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rng: &mut Prng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    /// Max relative error of analytic vs central-difference parameter
    /// gradients of `loss = Σ y²` for a layer.
    fn param_grad_error(store: &ParamStore, input: &Tensor, f: impl Fn(&mut Tape, &Bound, Var) -> Var) -> f64 {
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, true);
            let x = tape.leaf(input);
            let y = f(&mut tape, &p, x);
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.sum(sq);
            (tape, p, loss)
        };
        let (tape, p, loss) = run(store);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for (i, t) in store.tensors().iter().enumerate() {
            let analytic = grads.get(p.vars()[i]).unwrap().to_vec();
            for j in 0..t.numel() {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.tensors_mut()[i].data_mut()[j] += delta;
                    let (tape, _, loss) = run(&s);
                    tape.scalar(loss)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn linear_closed_form() {
        let mut store = ParamStore::new(0);
        let lin = Linear::new(&mut store, "l", 2, 1);
        store.tensors_mut()[0].data_mut().copy_from_slice(&[2.0, 3.0]);
        store.tensors_mut()[1].data_mut()[0] = 1.0;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(&[1, 2], vec![1.0, 1.0]).unwrap();
        let y = lin.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y), &[6.0]);
    }

    #[test]
    fn linear_gradient_check() {
        let mut rng = Prng::new(11);
        let mut store = ParamStore::new(1);
        let lin = Linear::new(&mut store, "l", 3, 2);
        // Non-zero bias so every parameter is exercised.
        store.tensors_mut()[1].data_mut().copy_from_slice(&[0.1, -0.2]);
        let x = random_input(&mut rng, &[4, 3]);
        let err = param_grad_error(&store, &x, |t, p, x| lin.forward(t, p, x).unwrap());
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn attention_gradient_check() {
        let mut rng = Prng::new(12);
        let mut store = ParamStore::new(2);
        let attn = MultiHeadAttention::new(&mut store, "a", 4, 2).unwrap();
        let x = random_input(&mut rng, &[2, 3, 4]);
        let err = param_grad_error(&store, &x, |t, p, x| attn.forward(t, p, x).unwrap());
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn attention_rejects_indivisible_width() {
        let mut store = ParamStore::new(0);
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 6, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_step_attention_weight_is_one() {
        let mut rng = Prng::new(13);
        let mut store = ParamStore::new(3);
        let attn = MultiHeadAttention::new(&mut store, "a", 4, 2).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.leaf(&random_input(&mut rng, &[3, 1, 4]));
        let (_, node) = attn.forward_with_weights(&mut tape, &p, x).unwrap();
        let w = tape.attention_weights(node).unwrap();
        assert_eq!(w.len(), 3 * 2);
        assert!(w.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn time_invariant_input_gives_time_invariant_output() {
        let mut store = ParamStore::new(4);
        let attn = MultiHeadAttention::new(&mut store, "a", 4, 2).unwrap();
        let row = [0.3, -0.7, 1.1, 0.05];
        let data: Vec<f64> = (0..5).flat_map(|_| row).collect();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(&[1, 5, 4], data).unwrap();
        let y = attn.forward(&mut tape, &p, x).unwrap();
        let out = tape.value(y);
        for t in 1..5 {
            for j in 0..4 {
                assert!((out[t * 4 + j] - out[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transformer_block_and_encoder_gradient_check() {
        let mut rng = Prng::new(14);
        let mut store = ParamStore::new(5);
        let enc = TransformerEncoder::new(&mut store, "enc", 3, 4, 1, 2, 6).unwrap();
        // Perturb layer-norm parameters away from their 1/0 init.
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.uniform_range(-0.1, 0.1);
            }
        }
        let x = random_input(&mut rng, &[2, 3, 3]);
        let err = param_grad_error(&store, &x, |t, p, x| enc.forward(t, p, x).unwrap());
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn residual_conv_gradient_check() {
        let mut rng = Prng::new(15);
        let mut store = ParamStore::new(6);
        let block = ResidualConvBlock::new(&mut store, "res", 2, 3);
        let same = ResidualConvBlock::new(&mut store, "res2", 3, 3);
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.uniform_range(-0.05, 0.05);
            }
        }
        let x = random_input(&mut rng, &[2, 5, 2]);
        let err = param_grad_error(&store, &x, |t, p, x| {
            let h = block.forward(t, p, x).unwrap();
            same.forward(t, p, h).unwrap()
        });
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn initialization_is_seeded() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            TransformerEncoder::new(&mut s, "e", 3, 8, 2, 2, 16).unwrap();
            s
        };
        let a = build(9);
        let b = build(9);
        let c = build(10);
        assert_eq!(a.tensors(), b.tensors());
        assert_ne!(a.tensors(), c.tensors());
        let bound = glorot_bound(3, 8);
        assert!(a.tensors()[0].data().iter().all(|v| v.abs() <= bound));
        assert!(a.tensors()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positional_code_first_row() {
        let pe = positional_encoding(2, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
    }
}
