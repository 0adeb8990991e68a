//! Spectral perturbation and channel-aware triplets: positives keep the
//! relevant channels intact, negatives keep the irrelevant ones.

use calad::dataio::{make_windows, Matrix};
use calad::relevance::ChannelRelevance;
use calad::spectral::{build_triplets, fft_forward, fft_inverse, perturb_channel, AugmentConfig, AugmentMode};
use calad::tensor::Prng;

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn main() -> calad::Result<()> {
    let ws = 64;
    let x: Vec<f64> = (0..ws).map(|t| (t as f64 * 0.3).sin() + 0.5 * (t as f64 * 1.1).cos()).collect();
    let spectrum = fft_forward(&x)?;
    let back = fft_inverse(&spectrum)?;
    println!("{} bins, round-trip error {:.2e}", spectrum.bins.len(), rms(&x, &back));

    let cfg = AugmentConfig::default();
    let y = perturb_channel(&x, &cfg, &mut Prng::new(1))?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("perturbed RMS change {:.3}, mean {:.6} -> {:.6}", rms(&x, &y), mean(&x), mean(&y));

    let channels = 4;
    let t = 200;
    let mut rng = Prng::new(2);
    let series = Matrix::new(t, channels, (0..t * channels).map(|_| rng.normal()).collect())?;
    let windows = make_windows(&series, None, ws, 8)?;
    let relevance = ChannelRelevance::from_labels(vec![1, 0, 0, 1]);
    for mode in [AugmentMode::ChannelWise, AugmentMode::AllChannel] {
        let mut cfg = AugmentConfig { mode, ..AugmentConfig::default() };
        cfg.seed = 9;
        let trip = build_triplets(&windows, &relevance, &cfg)?;
        let w = ws * channels;
        let changed = |other: &[f64], c: usize| {
            (0..trip.len()).any(|i| (0..ws).any(|s| other[i * w + s * channels + c] != trip.anchors[i * w + s * channels + c]))
        };
        let pos: Vec<usize> = (0..channels).filter(|&c| changed(&trip.positives, c)).collect();
        let neg: Vec<usize> = (0..channels).filter(|&c| changed(&trip.negatives, c)).collect();
        println!("{mode:?}: {} triplets, positives perturb {pos:?}, negatives perturb {neg:?}", trip.len());
    }
    Ok(())
}
