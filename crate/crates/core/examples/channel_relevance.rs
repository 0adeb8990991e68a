//! Train the reconstruction autoencoder on a synthetic entity and recover
//! the channels that anomalies touch.
//!
//! cargo run --release --example channel_relevance -- [seed]

use calad::config::{DataConfig, RunConfig};
use calad::pipeline::{prepare, source_sets, stage_relevance, StageSeeds};
use calad::relevance::set_f1;

fn main() -> calad::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    let planted = match &cfg.data {
        DataConfig::Synthetic(s) => s.relevant_channels.clone(),
        DataConfig::Csv(_) => unreachable!(),
    };

    let raw = source_sets(&cfg)?.remove(0);
    let data = prepare(&cfg, &raw)?;
    let out = stage_relevance(&cfg, &data, StageSeeds::new(seed, &raw.entity_id))?;
    let rel = &out.relevance;

    println!("autoencoder loss by epoch: {:?}", out.summary.epoch_losses);
    for (c, b) in rel.beta.iter().enumerate() {
        println!("channel {c}: β = {b:+.5} label {}", rel.labels[c]);
    }
    println!(
        "selection {:?} at λ = {}; found {:?}, planted {planted:?}, set-F1 {:.3}",
        rel.selection,
        rel.lambda_used,
        rel.relevant(),
        set_f1(&rel.relevant(), &planted)
    );
    Ok(())
}
