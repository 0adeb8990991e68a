//! Residual-conv triplet encoder and exact nearest/furthest retrieval.

use serde::{Deserialize, Serialize};

use crate::dataio::WindowSet;
use crate::error::{Error, Result};
use crate::spectral::TripletSet;
use crate::tensor::{Adam, AdamConfig, Bound, Linear, ParamStore, ResidualConvBlock, Tape, Var};
use crate::train::{ensure_finite, shuffled_batches};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    pub embed_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub margin: f64,
    pub batch_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 128],
            embed_dim: 128,
            epochs: 30,
            lr: 1e-3,
            margin: 1.0,
            batch_size: 50,
        }
    }
}

/// `mean_b max(‖a_b − p_b‖² − ‖a_b − n_b‖² + α, 0)` over rows of length `dim`.
pub fn triplet_loss(za: &[f64], zp: &[f64], zn: &[f64], dim: usize, alpha: f64) -> Result<f64> {
    if za.len() != zp.len() || za.len() != zn.len() || dim == 0 || !za.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "triplet rows of {}, {}, {} values with dim {dim}",
            za.len(),
            zp.len(),
            zn.len()
        )));
    }
    let rows = za.len() / dim;
    let mut total = 0.0;
    for r in 0..rows {
        let s = r * dim..(r + 1) * dim;
        let ap = squared_distance(&za[s.clone()], &zp[s.clone()]);
        let an = squared_distance(&za[s.clone()], &zn[s]);
        total += (ap - an + alpha).max(0.0);
    }
    Ok(total / rows.max(1) as f64)
}

/// Differentiable form of [`triplet_loss`] on `[B, d]` embeddings.
pub fn triplet_loss_var(tape: &mut Tape, za: Var, zp: Var, zn: Var, alpha: f64) -> Result<Var> {
    let dp = tape.sub(za, zp)?;
    let dp = tape.mul(dp, dp)?;
    let dp = tape.sum_last(dp)?;
    let dn = tape.sub(za, zn)?;
    let dn = tape.mul(dn, dn)?;
    let dn = tape.sum_last(dn)?;
    let gap = tape.sub(dp, dn)?;
    let gap = tape.add_scalar(gap, alpha);
    let hinge = tape.relu(gap);
    Ok(tape.mean(hinge))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Residual conv stack, global average pooling over time and a linear head.
#[derive(Debug, Clone)]
pub struct TripletEncoder {
    pub params: ParamStore,
    blocks: Vec<ResidualConvBlock>,
    head: Linear,
    pub channels: usize,
    pub embed_dim: usize,
}

impl TripletEncoder {
    pub fn new(channels: usize, cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.widths.is_empty() || cfg.embed_dim == 0 {
            return Err(Error::Config("encoder needs at least one block and a non-zero embedding".into()));
        }
        let mut params = ParamStore::new(seed);
        let mut blocks = Vec::new();
        let mut c_in = channels;
        for (i, &w) in cfg.widths.iter().enumerate() {
            blocks.push(ResidualConvBlock::new(&mut params, &format!("enc.block{i}"), c_in, w));
            c_in = w;
        }
        let head = Linear::new(&mut params, "enc.head", c_in, cfg.embed_dim);
        Ok(Self {
            params,
            blocks,
            head,
            channels,
            embed_dim: cfg.embed_dim,
        })
    }

    /// `[B, T, C] -> [B, embed_dim]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, p, h)?;
        }
        let pooled = tape.mean_axis(h, 1)?;
        self.head.forward(tape, p, pooled)
    }

    /// Embed `[n, ws, C]` windows, 50 at a time.
    pub fn embed(&self, windows: &[f64], ws: usize) -> Result<Vec<f64>> {
        let w = ws * self.channels;
        let mut out = Vec::with_capacity(windows.len() / w.max(1) * self.embed_dim);
        for chunk in windows.chunks(50 * w) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let x = tape.constant(&[chunk.len() / w, ws, self.channels], chunk.to_vec())?;
            let z = self.forward(&mut tape, &p, x)?;
            out.extend_from_slice(tape.value(z));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub epoch_losses: Vec<f64>,
}

pub fn train_encoder(triplets: &TripletSet, cfg: &EncoderConfig, seed: u64) -> Result<(TripletEncoder, EncoderSummary)> {
    let n = triplets.len();
    if n < 2 {
        return Err(Error::Usage(format!("triplet training needs at least two windows, got {n}")));
    }
    let mut encoder = TripletEncoder::new(triplets.channels, cfg, seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &encoder.params)?;
    let w = triplets.window_len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(n, cfg.batch_size, seed ^ 0xe1, epoch) {
            let b = batch.len();
            let mut data = Vec::with_capacity(3 * b * w);
            for buf in [&triplets.anchors, &triplets.positives, &triplets.negatives] {
                for &i in &batch {
                    data.extend_from_slice(&buf[i * w..(i + 1) * w]);
                }
            }
            let mut tape = Tape::new();
            let p = encoder.params.bind(&mut tape, true);
            let x = tape.constant(&[3 * b, triplets.ws, triplets.channels], data)?;
            let z = encoder.forward(&mut tape, &p, x)?;
            let za = tape.slice_rows(z, 0, b)?;
            let zp = tape.slice_rows(z, b, b)?;
            let zn = tape.slice_rows(z, 2 * b, b)?;
            let loss = triplet_loss_var(&mut tape, za, zp, zn, cfg.margin)?;
            let value = tape.scalar(loss);
            ensure_finite(value, "encoder", epoch + 1, "reduce the encoder learning rate")?;
            total += value * b as f64;
            let mut grads = tape.backward(loss)?;
            encoder.params.store_grads(&mut grads, &p)?;
            adam.step(&mut encoder.params)?;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok((encoder, EncoderSummary { epoch_losses }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub embeddings: Vec<f64>,
    pub dim: usize,
    pub nearest_of: Vec<usize>,
    pub furthest_of: Vec<usize>,
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.nearest_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nearest_of.is_empty()
    }
}

const QUERY_CHUNK: usize = 64;

/// Exact nearest and furthest other row of `embeddings` for every row.
///
/// Queries are processed in blocks so that one block's distance rows stay
/// small; ties resolve to the smallest index.
pub fn neighbors_of(embeddings: &[f64], dim: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if dim == 0 || !embeddings.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!("{} values do not form rows of {dim}", embeddings.len())));
    }
    let n = embeddings.len() / dim;
    if n < 2 {
        return Err(Error::Usage(format!("neighbor search needs at least two windows, got {n}")));
    }
    let row = |i: usize| &embeddings[i * dim..(i + 1) * dim];
    let mut nearest = vec![0; n];
    let mut furthest = vec![0; n];
    let mut dist = vec![0.0; QUERY_CHUNK * n];
    for start in (0..n).step_by(QUERY_CHUNK) {
        let end = (start + QUERY_CHUNK).min(n);
        for q in start..end {
            let d = &mut dist[(q - start) * n..(q - start + 1) * n];
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = squared_distance(row(q), row(j));
            }
        }
        for q in start..end {
            let d = &dist[(q - start) * n..(q - start + 1) * n];
            let (mut near, mut far) = (usize::MAX, usize::MAX);
            for (j, &dj) in d.iter().enumerate() {
                if j == q {
                    continue;
                }
                if near == usize::MAX || dj < d[near] {
                    near = j;
                }
                if far == usize::MAX || dj > d[far] {
                    far = j;
                }
            }
            nearest[q] = near;
            furthest[q] = far;
        }
    }
    Ok((nearest, furthest))
}

pub fn build_index(encoder: &TripletEncoder, anchors: &WindowSet) -> Result<NeighborIndex> {
    if anchors.len() < 2 {
        return Err(Error::Usage(format!(
            "neighbor search needs at least two windows, got {}",
            anchors.len()
        )));
    }
    if anchors.channels != encoder.channels {
        return Err(Error::Dimension(format!(
            "encoder expects {} channels, windows have {}",
            encoder.channels, anchors.channels
        )));
    }
    let embeddings = encoder.embed(&anchors.windows, anchors.ws)?;
    index_from_embeddings(embeddings, encoder.embed_dim)
}

pub fn index_from_embeddings(embeddings: Vec<f64>, dim: usize) -> Result<NeighborIndex> {
    let (nearest_of, furthest_of) = neighbors_of(&embeddings, dim)?;
    Ok(NeighborIndex {
        embeddings,
        dim,
        nearest_of,
        furthest_of,
    })
}
