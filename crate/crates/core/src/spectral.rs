//! Real-signal FFT and channel-aware frequency-domain augmentation.

use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::index;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataio::WindowSet;
use crate::error::{Error, Result};
use crate::relevance::ChannelRelevance;
use crate::tensor::Prng;

/// Non-redundant half spectrum of a real signal: bins `0..=len/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub len: usize,
}

/// Forward/inverse plans for one signal length.
#[derive(Clone)]
pub struct RealFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft").field("len", &self.len).finish()
    }
}

impl RealFft {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Usage(format!("FFT length must be at least 2, got {len}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrum> {
        if x.len() != self.len {
            return Err(Error::Dimension(format!("signal of length {} for a {}-point FFT", x.len(), self.len)));
        }
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf.truncate(self.len / 2 + 1);
        // Exact for a real input; removes rounding residue.
        buf[0].im = 0.0;
        Ok(Spectrum {
            bins: buf,
            len: self.len,
        })
    }

    /// Inverse transform of the conjugate-symmetric extension of `s`.
    /// Imaginary parts of the DC and (even-length) Nyquist bins are ignored.
    pub fn inverse(&self, s: &Spectrum) -> Result<Vec<f64>> {
        let n = self.len;
        if s.len != n || s.bins.len() != n / 2 + 1 {
            return Err(Error::Dimension(format!(
                "spectrum for length {} with {} bins given to a {n}-point FFT",
                s.len,
                s.bins.len()
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(s.bins[0].re, 0.0);
        for k in 1..s.bins.len() {
            buf[k] = s.bins[k];
            buf[n - k] = s.bins[k].conj();
        }
        if n.is_multiple_of(2) {
            buf[n / 2] = Complex64::new(s.bins[n / 2].re, 0.0);
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }

    /// Randomly rescale and rotate a subset of non-DC bins.
    pub fn perturb(&self, x: &[f64], cfg: &PerturbStrength, rng: &mut Prng) -> Result<Vec<f64>> {
        let mut s = self.forward(x)?;
        let available = s.bins.len() - 1;
        let count = ((cfg.bin_fraction * (self.len as f64 / 2.0)).ceil() as usize).min(available);
        for pick in index::sample(rng, available, count).into_vec() {
            let k = pick + 1;
            let gain = (1.0 + cfg.amp_sigma * rng.normal()).max(0.0);
            let theta = cfg.phase_max * (2.0 * rng.uniform() - 1.0);
            s.bins[k] *= Complex64::from_polar(gain, theta);
        }
        self.inverse(&s)
    }
}

pub fn fft_forward(x: &[f64]) -> Result<Spectrum> {
    RealFft::new(x.len())?.forward(x)
}

pub fn fft_inverse(s: &Spectrum) -> Result<Vec<f64>> {
    RealFft::new(s.len)?.inverse(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    ChannelWise,
    AllChannel,
}

impl std::str::FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel-wise" | "channel_wise" => Ok(Self::ChannelWise),
            "all-channel" | "all_channel" => Ok(Self::AllChannel),
            other => Err(Error::Usage(format!("unknown augmentation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub bin_fraction: f64,
    pub amp_sigma: f64,
    pub phase_max: f64,
    pub mode: AugmentMode,
    /// Set per run from the stage seed rather than read from files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            bin_fraction: 0.2,
            amp_sigma: 0.5,
            phase_max: std::f64::consts::PI,
            mode: AugmentMode::ChannelWise,
            seed: 0,
        }
    }
}

/// The numeric part of an [`AugmentConfig`] applied to one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbStrength {
    pub bin_fraction: f64,
    pub amp_sigma: f64,
    pub phase_max: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_fraction > 0.0 && self.bin_fraction <= 1.0) {
            return Err(Error::Config(format!("bin_fraction must lie in (0, 1], got {}", self.bin_fraction)));
        }
        if !(self.amp_sigma >= 0.0) {
            return Err(Error::Config(format!("amp_sigma must be non-negative, got {}", self.amp_sigma)));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.phase_max) {
            return Err(Error::Config(format!("phase_max must lie in [0, π], got {}", self.phase_max)));
        }
        Ok(())
    }

    pub fn strength(&self) -> PerturbStrength {
        PerturbStrength {
            bin_fraction: self.bin_fraction,
            amp_sigma: self.amp_sigma,
            phase_max: self.phase_max,
        }
    }
}

pub fn perturb_channel(x: &[f64], cfg: &AugmentConfig, rng: &mut Prng) -> Result<Vec<f64>> {
    cfg.validate()?;
    RealFft::new(x.len())?.perturb(x, &cfg.strength(), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Positive = 1,
    Negative = 2,
}

/// Three aligned `N × ws × C` buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub anchors: Vec<f64>,
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
    pub ws: usize,
    pub channels: usize,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.anchors.len() / (self.ws * self.channels).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.ws * self.channels
    }
}

/// Which channels each role perturbs under `mode`.
pub fn perturbed_channels(labels: &[u8], mode: AugmentMode, role: Role) -> Vec<bool> {
    match (mode, role) {
        (AugmentMode::AllChannel, _) => vec![true; labels.len()],
        (AugmentMode::ChannelWise, Role::Positive) => labels.iter().map(|&l| l == 0).collect(),
        (AugmentMode::ChannelWise, Role::Negative) => labels.iter().map(|&l| l == 1).collect(),
    }
}

/// Perturb the flagged channels of one `ws × C` window in place.
///
/// Each `(window, role, channel)` draws from its own substream, so output
/// does not depend on processing order.
pub fn augment_window(
    fft: &RealFft,
    window: &mut [f64],
    channels: usize,
    flags: &[bool],
    strength: &PerturbStrength,
    seed: u64,
    window_index: usize,
    role: Role,
) -> Result<()> {
    let ws = fft.len();
    let mut column = vec![0.0; ws];
    for (c, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        for t in 0..ws {
            column[t] = window[t * channels + c];
        }
        let mut rng = Prng::substream(seed, &[window_index as u64, role as u64, c as u64]);
        let out = fft.perturb(&column, strength, &mut rng)?;
        for t in 0..ws {
            window[t * channels + c] = out[t];
        }
    }
    Ok(())
}

pub fn build_triplets(anchors: &WindowSet, relevance: &ChannelRelevance, cfg: &AugmentConfig) -> Result<TripletSet> {
    cfg.validate()?;
    let c = anchors.channels;
    if relevance.labels.len() != c {
        return Err(Error::Dimension(format!(
            "relevance covers {} channels, windows have {c}",
            relevance.labels.len()
        )));
    }
    if cfg.mode == AugmentMode::ChannelWise && !relevance.labels.contains(&1) {
        return Err(Error::Config("no anomaly-relevant channels; negatives would equal anchors".into()));
    }
    let fft = RealFft::new(anchors.ws)?;
    let pos_flags = perturbed_channels(&relevance.labels, cfg.mode, Role::Positive);
    let neg_flags = perturbed_channels(&relevance.labels, cfg.mode, Role::Negative);
    let pos_strength = cfg.strength();
    let mut neg_strength = cfg.strength();
    if cfg.mode == AugmentMode::AllChannel {
        neg_strength.amp_sigma *= 2.0;
    }

    let w = anchors.window_len();
    let mut positives = anchors.windows.clone();
    let mut negatives = anchors.windows.clone();
    for i in 0..anchors.len() {
        let range = i * w..(i + 1) * w;
        augment_window(&fft, &mut positives[range.clone()], c, &pos_flags, &pos_strength, cfg.seed, i, Role::Positive)?;
        augment_window(&fft, &mut negatives[range], c, &neg_flags, &neg_strength, cfg.seed, i, Role::Negative)?;
    }
    Ok(TripletSet {
        anchors: anchors.windows.clone(),
        positives,
        negatives,
        ws: anchors.ws,
        channels: c,
    })
}
