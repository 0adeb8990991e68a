//! The on-disk stages one at a time, the artifacts they leave, and the
//! refusals when a predecessor is missing or was built from another config.

use calad::config::RunConfig;
use calad::pipeline;

fn main() -> calad::Result<()> {
    let out = std::env::temp_dir().join(format!("calad_staged_{}", std::process::id()));
    let mut cfg = RunConfig::desk();
    cfg.encoder.epochs = 3;
    cfg.model.epochs = 3;

    match pipeline::cmd_train(&cfg, &out) {
        Err(e) => println!("train before anything else: {e} (exit {})", e.exit_code()),
        Ok(()) => unreachable!(),
    }

    pipeline::cmd_synth(&cfg, &out)?;
    pipeline::cmd_relevance(&cfg, &out)?;
    pipeline::cmd_augment(&cfg, &out)?;
    pipeline::cmd_train_embed(&cfg, &out)?;
    pipeline::cmd_train(&cfg, &out)?;
    let summary = pipeline::cmd_detect(&cfg, &out)?;
    println!("F1 {:.3}, AU-PR {:.3}", summary.metrics.f1, summary.metrics.au_pr);

    let dir = out.join(&pipeline::entity_ids(&cfg)[0]);
    let mut files: Vec<_> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect();
    files.sort();
    println!("artifacts in {}: {files:?}", dir.display());

    let mut changed = cfg.clone();
    changed.augment.bin_fraction = 0.5;
    if let Err(e) = pipeline::cmd_train_embed(&changed, &out) {
        println!("train-embed after changing the augmentation: {e} (exit {})", e.exit_code());
    }
    std::fs::remove_dir_all(&out)?;
    Ok(())
}
