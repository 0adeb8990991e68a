//! Joint contrastive and reconstruction training of the main network, and
//! the effect of the furthest-neighbour sign choice on the loss curve.

use calad::config::RunConfig;
use calad::pipeline::{prepare, source_sets, stage_augment, stage_embed, stage_relevance, stage_train, StageSeeds};

fn main() -> calad::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.encoder.epochs = 3;
    cfg.model.epochs = 5;
    let raw = source_sets(&cfg)?.remove(0);
    let seeds = StageSeeds::new(cfg.seed, &raw.entity_id);
    let data = prepare(&cfg, &raw)?;
    let relevance = stage_relevance(&cfg, &data, seeds)?.relevance;
    let triplets = stage_augment(&cfg, &data, &relevance, seeds)?;
    let (_, index, _) = stage_embed(&cfg, &data, &triplets, seeds)?;

    for literal in [false, true] {
        let mut run = cfg.clone();
        run.model.literal_eq9_sign = literal;
        let (_, log) = stage_train(&run, &data, &index, seeds)?;
        println!("literal sign = {literal}");
        for e in &log {
            println!("  epoch {:>2}: contrastive {:.4}  reconstruction {:.3}  total {:.3}", e.epoch, e.contra, e.rec, e.total);
        }
    }
    Ok(())
}
