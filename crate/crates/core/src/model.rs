//! Transformer classifier over latent classes with a reconstruction head,
//! trained on (anchor, nearest, furthest) window triplets.

use serde::{Deserialize, Serialize};

use crate::dataio::WindowSet;
use crate::error::{Error, Result};
use crate::neighbor::NeighborIndex;
use crate::tensor::{Adam, AdamConfig, Bound, Linear, ParamStore, Tape, TransformerEncoder, Var};
use crate::train::{ensure_finite, shuffled_batches};

pub const SIM_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaladConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub classes: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub literal_eq9_sign: bool,
}

impl Default for CaladConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_width: 128,
            classes: 10,
            hidden: 256,
            epochs: 50,
            lr: 0.01,
            batch_size: 50,
            literal_eq9_sign: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub contra: f64,
    pub rec: f64,
    pub total: f64,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `softmax(z_i) · softmax(z_j)`, clamped to `[ε, 1 − ε]`.
pub fn similarity(zi: &[f64], zj: &[f64]) -> f64 {
    let s: f64 = softmax(zi).iter().zip(softmax(zj)).map(|(a, b)| a * b).sum();
    s.clamp(SIM_EPS, 1.0 - SIM_EPS)
}

fn pair_terms(s_near: f64, s_fur: f64, literal: bool) -> f64 {
    let attract = -s_near.ln();
    let repel = -(1.0 - s_fur).ln();
    if literal {
        attract - repel
    } else {
        attract + repel
    }
}

/// Batch mean of `−ln sim(anc, near) ∓ ln(1 − sim(anc, fur))` over rows of `k`
/// logits; `literal` selects the minus sign.
pub fn contrastive_loss(anc: &[f64], near: &[f64], fur: &[f64], k: usize, literal: bool) -> Result<f64> {
    if anc.len() != near.len() || anc.len() != fur.len() || k == 0 || !anc.len().is_multiple_of(k) {
        return Err(Error::Dimension("contrastive loss needs matching [B, K] logits".into()));
    }
    let rows = anc.len() / k;
    let total: f64 = (0..rows)
        .map(|r| {
            let s = r * k..(r + 1) * k;
            let sn = similarity(&anc[s.clone()], &near[s.clone()]);
            let sf = similarity(&anc[s.clone()], &fur[s]);
            pair_terms(sn, sf, literal)
        })
        .sum();
    Ok(total / rows as f64)
}

/// Batch mean of per-window squared error sums.
pub fn reconstruction_loss(w: &[f64], w_hat: &[f64], window_len: usize) -> Result<f64> {
    if w.len() != w_hat.len() || window_len == 0 || !w.len().is_multiple_of(window_len) {
        return Err(Error::Dimension("reconstruction loss needs matching [B, ws·C] windows".into()));
    }
    let sse: f64 = w.iter().zip(w_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / (w.len() / window_len) as f64)
}

pub fn similarity_var(tape: &mut Tape, zi: Var, zj: Var) -> Result<Var> {
    let pi = tape.softmax(zi)?;
    let pj = tape.softmax(zj)?;
    let prod = tape.mul(pi, pj)?;
    let s = tape.sum_last(prod)?;
    Ok(tape.clamp(s, SIM_EPS, 1.0 - SIM_EPS))
}

pub fn contrastive_loss_var(tape: &mut Tape, anc: Var, near: Var, fur: Var, literal: bool) -> Result<Var> {
    let sn = similarity_var(tape, anc, near)?;
    let sf = similarity_var(tape, anc, fur)?;
    let ln_sn = tape.ln(sn)?;
    let attract = tape.scale(ln_sn, -1.0);
    let neg_sf = tape.scale(sf, -1.0);
    let one_minus = tape.add_scalar(neg_sf, 1.0);
    let ln_rest = tape.ln(one_minus)?;
    let terms = if literal {
        tape.add(attract, ln_rest)?
    } else {
        tape.sub(attract, ln_rest)?
    };
    Ok(tape.mean(terms))
}

pub fn reconstruction_loss_var(tape: &mut Tape, w: Var, w_hat: Var) -> Result<Var> {
    let batch = tape.shape(w)[0].max(1);
    let d = tape.sub(w, w_hat)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / batch as f64))
}

/// Loss nodes for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub contra: Var,
    pub rec: Var,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct CaladNetwork {
    pub params: ParamStore,
    encoder: TransformerEncoder,
    head: Linear,
    mlp_hidden: Linear,
    mlp_out: Linear,
    pub ws: usize,
    pub channels: usize,
    pub classes: usize,
}

impl CaladNetwork {
    pub fn new(channels: usize, ws: usize, cfg: &CaladConfig, seed: u64) -> Result<Self> {
        if cfg.classes < 2 {
            return Err(Error::Config(format!("need at least two latent classes, got {}", cfg.classes)));
        }
        let mut params = ParamStore::new(seed);
        let encoder = TransformerEncoder::new(
            &mut params,
            "calad.encoder",
            channels,
            cfg.d_model,
            cfg.layers,
            cfg.heads,
            cfg.ff_width,
        )?;
        let head = Linear::new(&mut params, "calad.head", cfg.d_model, cfg.classes);
        let mlp_hidden = Linear::new(&mut params, "calad.rec.hidden", cfg.classes, cfg.hidden);
        let mlp_out = Linear::new(&mut params, "calad.rec.out", cfg.hidden, ws * channels);
        Ok(Self {
            params,
            encoder,
            head,
            mlp_hidden,
            mlp_out,
            ws,
            channels,
            classes: cfg.classes,
        })
    }

    /// `[B, ws, C] -> [B, K]` logits.
    pub fn logits_var(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.encoder.forward(tape, p, x)?;
        let pooled = tape.mean_axis(h, 1)?;
        self.head.forward(tape, p, pooled)
    }

    /// `[B, K] -> [B, ws·C]`.
    pub fn reconstruct_var(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        let h = self.mlp_hidden.forward(tape, p, z)?;
        let h = tape.relu(h);
        self.mlp_out.forward(tape, p, h)
    }

    /// Joint loss on `b` triplets of `[ws, C]` windows.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        anchors: &[f64],
        nearest: &[f64],
        furthest: &[f64],
        literal: bool,
    ) -> Result<LossVars> {
        let w = self.ws * self.channels;
        let b = anchors.len() / w;
        if anchors.len() != b * w || nearest.len() != anchors.len() || furthest.len() != anchors.len() {
            return Err(Error::Dimension("triplet batch buffers differ in size".into()));
        }
        let mut data = Vec::with_capacity(3 * anchors.len());
        data.extend_from_slice(anchors);
        data.extend_from_slice(nearest);
        data.extend_from_slice(furthest);
        let x = tape.constant(&[3 * b, self.ws, self.channels], data)?;
        let z = self.logits_var(tape, p, x)?;
        let za = tape.slice_rows(z, 0, b)?;
        let zn = tape.slice_rows(z, b, b)?;
        let zf = tape.slice_rows(z, 2 * b, b)?;
        let contra = contrastive_loss_var(tape, za, zn, zf, literal)?;
        let w_hat = self.reconstruct_var(tape, p, za)?;
        let target = tape.constant(&[b, w], anchors.to_vec())?;
        let rec = reconstruction_loss_var(tape, target, w_hat)?;
        let total = tape.add(contra, rec)?;
        Ok(LossVars { contra, rec, total })
    }

    /// Logits for `[n, ws, C]` windows, `[n, K]`.
    pub fn logits(&self, windows: &[f64]) -> Result<Vec<f64>> {
        let w = self.ws * self.channels;
        let mut out = Vec::with_capacity(windows.len() / w.max(1) * self.classes);
        for chunk in windows.chunks(50 * w) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let x = tape.constant(&[chunk.len() / w, self.ws, self.channels], chunk.to_vec())?;
            let z = self.logits_var(&mut tape, &p, x)?;
            out.extend_from_slice(tape.value(z));
        }
        Ok(out)
    }

    /// Class probabilities `softmax(z)` for `[n, ws, C]` windows, `[n, K]`.
    pub fn probabilities(&self, windows: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(windows)?.chunks(self.classes).flat_map(softmax).collect())
    }
}

pub fn train(
    anchors: &WindowSet,
    index: &NeighborIndex,
    cfg: &CaladConfig,
    seed: u64,
) -> Result<(CaladNetwork, Vec<LossBreakdown>)> {
    let n = anchors.len();
    if index.len() != n {
        return Err(Error::Dimension(format!("index covers {} windows, anchors have {n}", index.len())));
    }
    let mut net = CaladNetwork::new(anchors.channels, anchors.ws, cfg, seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &net.params)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut contra, mut rec) = (0.0, 0.0);
        for batch in shuffled_batches(n, cfg.batch_size, seed ^ 0xca, epoch) {
            let near: Vec<usize> = batch.iter().map(|&i| index.nearest_of[i]).collect();
            let fur: Vec<usize> = batch.iter().map(|&i| index.furthest_of[i]).collect();
            let mut tape = Tape::new();
            let p = net.params.bind(&mut tape, true);
            let loss = net.batch_loss(
                &mut tape,
                &p,
                &anchors.gather(&batch),
                &anchors.gather(&near),
                &anchors.gather(&fur),
                cfg.literal_eq9_sign,
            )?;
            let total = tape.scalar(loss.total);
            ensure_finite(
                total,
                "train",
                epoch + 1,
                &format!("reduce the learning rate below {}", cfg.lr),
            )?;
            contra += tape.scalar(loss.contra) * batch.len() as f64;
            rec += tape.scalar(loss.rec) * batch.len() as f64;
            let mut grads = tape.backward(loss.total)?;
            net.params.store_grads(&mut grads, &p)?;
            adam.step(&mut net.params)?;
        }
        let (contra, rec) = (contra / n as f64, rec / n as f64);
        log.push(LossBreakdown {
            epoch: epoch + 1,
            contra,
            rec,
            total: contra + rec,
        });
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_windows, Matrix};
    use crate::neighbor::index_from_embeddings;
    use crate::tensor::{Prng, Tensor};

    #[test]
    fn similarity_cases() {
        assert!((similarity(&[0.0; 10], &[0.0; 10]) - 0.1).abs() < 1e-15);
        let e1 = [1000.0, 0.0, 0.0];
        let e2 = [0.0, 1000.0, 0.0];
        assert_eq!(similarity(&e1, &e2), SIM_EPS);
        assert_eq!(similarity(&e1, &e1), 1.0 - SIM_EPS);
    }

    #[test]
    fn similarity_is_symmetric() {
        let mut rng = Prng::new(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
            assert!((similarity(&a, &b) - similarity(&b, &a)).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_closed_forms() {
        let hi = [1000.0, 0.0];
        let lo = [0.0, 1000.0];
        let perfect = contrastive_loss(&hi, &hi, &lo, 2, false).unwrap();
        assert!((perfect - 2e-7).abs() < 1e-12);
        let uniform = [0.0; 10];
        let l = contrastive_loss(&uniform, &uniform, &uniform, 10, false).unwrap();
        assert!((l - (-(0.1f64).ln() - (0.9f64).ln())).abs() < 1e-12);
        assert!((l - 2.4079).abs() < 1e-4);
        let literal = contrastive_loss(&uniform, &uniform, &uniform, 10, true).unwrap();
        assert!((literal - (-(0.1f64).ln() + (0.9f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_closed_forms() {
        assert_eq!(reconstruction_loss(&[1.0, 2.0], &[1.0, 2.0], 2).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0], &[0.0], 1).unwrap(), 1.0);
        let w = [0.5, -1.0, 2.0, 0.0];
        let a = [0.0, 0.0, 1.0, 1.0];
        let b: Vec<f64> = w.iter().zip(&a).map(|(wi, ai)| wi - 2.0 * (wi - ai)).collect();
        let base = reconstruction_loss(&w, &a, 2).unwrap();
        assert!((reconstruction_loss(&w, &b, 2).unwrap() - 4.0 * base).abs() < 1e-12);
    }

    #[test]
    fn tape_losses_match_plain() {
        let mut rng = Prng::new(8);
        let mk = |rng: &mut Prng| (0..30).map(|_| rng.normal()).collect::<Vec<f64>>();
        let (a, n, f) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        for literal in [false, true] {
            let mut tape = Tape::new();
            let va = tape.constant(&[3, 10], a.clone()).unwrap();
            let vn = tape.constant(&[3, 10], n.clone()).unwrap();
            let vf = tape.constant(&[3, 10], f.clone()).unwrap();
            let l = contrastive_loss_var(&mut tape, va, vn, vf, literal).unwrap();
            let want = contrastive_loss(&a, &n, &f, 10, literal).unwrap();
            assert!((tape.scalar(l) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = Prng::new(12);
        let logits: Vec<f64> = (0..3 * 4 * 10).map(|_| rng.normal()).collect();
        let eval = |z: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.leaf(&Tensor::new(&[12, 10], z.to_vec()).unwrap().with_requires_grad(true));
            let a = tape.slice_rows(v, 0, 4).unwrap();
            let n = tape.slice_rows(v, 4, 4).unwrap();
            let f = tape.slice_rows(v, 8, 4).unwrap();
            let l = contrastive_loss_var(&mut tape, a, n, f, false).unwrap();
            (tape.scalar(l), tape, v, l)
        };
        let (_, tape, v, l) = eval(&logits);
        let grads = tape.backward(l).unwrap();
        let g = grads.get(v).unwrap().to_vec();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut up = logits.clone();
            up[i] += h;
            let mut dn = logits.clone();
            dn[i] -= h;
            let fd = (eval(&up).0 - eval(&dn).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn tiny() -> CaladConfig {
        CaladConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            ff_width: 16,
            classes: 4,
            hidden: 12,
            epochs: 3,
            lr: 0.01,
            batch_size: 50,
            literal_eq9_sign: false,
        }
    }

    fn demo() -> (WindowSet, NeighborIndex) {
        let mut rng = Prng::new(1);
        let data = (0..60 * 2).map(|_| rng.normal()).collect();
        let w = make_windows(&Matrix::new(60, 2, data).unwrap(), None, 8, 4).unwrap();
        let emb: Vec<f64> = (0..w.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        (w, index_from_embeddings(emb, 1).unwrap())
    }

    #[test]
    fn zero_learning_rate_gives_constant_log() {
        let (w, idx) = demo();
        let (_, log) = train(&w, &idx, &CaladConfig { lr: 0.0, ..tiny() }, 2).unwrap();
        for e in &log[1..] {
            assert!((e.total - log[0].total).abs() < 1e-9);
            assert!((e.contra - log[0].contra).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_components_add_up_and_probabilities_normalise() {
        let (w, idx) = demo();
        let (net, log) = train(&w, &idx, &tiny(), 2).unwrap();
        for e in &log {
            assert!((e.total - (e.contra + e.rec)).abs() < 1e-12);
        }
        let p = net.probabilities(&w.windows).unwrap();
        for row in p.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn index_must_cover_anchors() {
        let (w, _) = demo();
        let idx = index_from_embeddings(vec![0.0, 1.0], 1).unwrap();
        assert!(matches!(train(&w, &idx, &tiny(), 0), Err(Error::Dimension(_))));
    }
}
