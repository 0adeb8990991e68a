//! Train the residual-conv triplet encoder on channel-aware triplets and
//! look up each window's nearest and furthest neighbours.

use calad::config::RunConfig;
use calad::pipeline::{prepare, source_sets, stage_augment, stage_embed, StageSeeds};
use calad::relevance::ChannelRelevance;

fn main() -> calad::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.encoder.widths = vec![16, 32];
    cfg.encoder.embed_dim = 32;
    cfg.encoder.epochs = 5;
    let raw = source_sets(&cfg)?.remove(0);
    let seeds = StageSeeds::new(cfg.seed, &raw.entity_id);
    let data = prepare(&cfg, &raw)?;
    let relevance = ChannelRelevance::from_labels(vec![1, 1, 0, 0, 0, 0]);

    let triplets = stage_augment(&cfg, &data, &relevance, seeds)?;
    let (_, index, losses) = stage_embed(&cfg, &data, &triplets, seeds)?;
    println!("triplet loss by epoch: {:?}", losses.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>());
    for i in [0, 1, 2, index.len() / 2, index.len() - 1] {
        println!(
            "window {i:>3} (t = {:>4}): nearest {:>3}, furthest {:>3}",
            data.train_windows.origin[i], index.nearest_of[i], index.furthest_of[i]
        );
    }
    let mut distinct = index.furthest_of.clone();
    distinct.sort_unstable();
    distinct.dedup();
    println!("{} windows, {} distinct furthest neighbours", index.len(), distinct.len());
    Ok(())
}
