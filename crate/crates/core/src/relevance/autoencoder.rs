use serde::{Deserialize, Serialize};

use crate::dataio::{Matrix, WindowSet};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Bound, Linear, ParamStore, Tape, TransformerEncoder, Var};
use crate::train::{ensure_finite, shuffled_batches};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_width: 128,
            epochs: 20,
            lr: 1e-3,
            batch_size: 50,
        }
    }
}

/// Transformer encoder with a per-step linear read-out back to `C` channels.
#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    pub params: ParamStore,
    encoder: TransformerEncoder,
    output: Linear,
    pub ws: usize,
    pub channels: usize,
}

impl AutoencoderModel {
    pub fn new(channels: usize, ws: usize, cfg: &AutoencoderConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        let encoder = TransformerEncoder::new(
            &mut params,
            "ae.encoder",
            channels,
            cfg.d_model,
            cfg.layers,
            cfg.heads,
            cfg.ff_width,
        )?;
        let output = Linear::new(&mut params, "ae.output", cfg.d_model, channels);
        Ok(Self {
            params,
            encoder,
            output,
            ws,
            channels,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.encoder.forward(tape, p, x)?;
        self.output.forward(tape, p, h)
    }

    /// Reconstruct `n` windows stored contiguously as `[n, ws, C]`.
    pub fn reconstruct(&self, windows: &[f64]) -> Result<Vec<f64>> {
        let w = self.ws * self.channels;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(50 * w) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let x = tape.constant(&[chunk.len() / w, self.ws, self.channels], chunk.to_vec())?;
            let y = self.forward(&mut tape, &p, x)?;
            out.extend_from_slice(tape.value(y));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSummary {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Fit the autoencoder to `windows` by mean squared reconstruction error.
pub fn train_autoencoder(
    windows: &WindowSet,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(AutoencoderModel, AutoencoderSummary)> {
    if windows.is_empty() {
        return Err(Error::Usage("autoencoder needs at least one training window".into()));
    }
    let mut model = AutoencoderModel::new(windows.channels, windows.ws, cfg, seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &model.params)?;
    let shape = |b: usize| [b, windows.ws, windows.channels];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(windows.len(), cfg.batch_size, seed ^ 0xae, epoch) {
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let data = windows.gather(&batch);
            let x = tape.constant(&shape(batch.len()), data)?;
            let y = model.forward(&mut tape, &p, x)?;
            let diff = tape.sub(y, x)?;
            let sq = tape.mul(diff, diff)?;
            let loss = tape.mean(sq);
            let value = tape.scalar(loss);
            ensure_finite(value, "autoencoder", epoch + 1, "reduce the autoencoder learning rate")?;
            total += value * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            model.params.store_grads(&mut grads, &p)?;
            adam.step(&mut model.params)?;
        }
        epoch_losses.push(total / windows.len() as f64);
    }
    let final_loss = match epoch_losses.last() {
        Some(&l) => l,
        None => {
            let recon = model.reconstruct(&windows.windows)?;
            mse(&recon, &windows.windows)
        }
    };
    Ok((model, AutoencoderSummary { epoch_losses, final_loss }))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Start offsets of non-overlapping `ws` blocks; a partial tail becomes one
/// right-aligned block.
pub fn block_starts(len: usize, ws: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..len / ws).map(|b| b * ws).collect();
    if !len.is_multiple_of(ws) && len >= ws {
        starts.push(len - ws);
    }
    starts
}

/// Per-point absolute errors `e[t, c]` and their channel mean `y[t]`.
pub fn reconstruction_errors(model: &AutoencoderModel, series: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    if series.cols != model.channels {
        return Err(Error::Dimension(format!(
            "model reconstructs {} channels, series has {}",
            model.channels, series.cols
        )));
    }
    let ws = model.ws;
    if series.rows < ws {
        return Err(Error::Usage(format!(
            "series of {} points is shorter than the window size {ws}",
            series.rows
        )));
    }
    let c = series.cols;
    let starts = block_starts(series.rows, ws);
    let mut blocks = Vec::with_capacity(starts.len() * ws * c);
    for &s in &starts {
        blocks.extend_from_slice(&series.data[s * c..(s + ws) * c]);
    }
    let recon = model.reconstruct(&blocks)?;
    let mut recon_series = vec![0.0; series.data.len()];
    let mut filled = 0;
    for (b, &s) in starts.iter().enumerate() {
        for t in filled.max(s)..s + ws {
            let src = (b * ws + (t - s)) * c;
            recon_series[t * c..(t + 1) * c].copy_from_slice(&recon[src..src + c]);
        }
        filled = s + ws;
    }
    let errors = Matrix::new(
        series.rows,
        c,
        series.data.iter().zip(&recon_series).map(|(x, r)| (x - r).abs()).collect(),
    )?;
    let y = (0..series.rows).map(|t| errors.row(t).iter().sum::<f64>() / c as f64).collect();
    Ok((errors, y))
}
