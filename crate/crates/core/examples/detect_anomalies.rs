//! End-to-end detection on one synthetic entity, fully in memory: relevance,
//! triplets, neighbour index, main model, latent-class scoring.
//!
//! cargo run --release --example detect_anomalies -- [seed] [channel-wise|all-channel]

use calad::config::RunConfig;
use calad::pipeline::{run_entity, source_sets};

fn main() -> calad::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::desk();
    cfg.seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    if let Some(mode) = args.next() {
        cfg.augment.mode = mode.parse()?;
    }
    let raw = source_sets(&cfg)?.remove(0);
    let run = run_entity(&cfg, &raw)?;
    let r = &run.report;

    println!("relevant channels {:?}", run.relevance.relevance.relevant());
    println!("normal class {} with training histogram {:?}", r.profile.normal_class, r.profile.histogram);
    println!("prevalence {:.3}", r.prevalence);
    println!("CALAD   P {:.3} R {:.3} F1 {:.3} AU-PR {:.3}", r.metrics.precision, r.metrics.recall, r.metrics.f1, r.metrics.au_pr);
    let b = &r.random_baseline;
    println!("Random  P {:.3} R {:.3} F1 {:.3} AU-PR {:.3}", b.precision, b.recall, b.f1, b.au_pr);
    let top: Vec<_> = {
        let mut w: Vec<_> = r.windows.iter().collect();
        w.sort_by(|a, b| b.score.total_cmp(&a.score));
        w.into_iter().take(5).map(|w| (w.origin, format!("{:.3}", w.score), w.truth)).collect()
    };
    println!("highest-scoring windows (origin, score, truth): {top:?}");
    Ok(())
}
