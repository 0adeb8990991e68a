//! A reduced multi-seed bench: three seeds, shorter series and training, all
//! three arms, with the comparison table printed at the end.

use calad::bench::{render_table, run_bench};
use calad::config::{DataConfig, RunConfig, SyntheticData};

fn main() -> calad::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.data = DataConfig::Synthetic(SyntheticData {
        t_train: 1500,
        t_test: 1000,
        ..SyntheticData::default()
    });
    cfg.encoder.widths = vec![16, 32];
    cfg.encoder.embed_dim = 32;
    cfg.encoder.epochs = 4;
    cfg.model.epochs = 6;
    let result = run_bench(&[0, 1, 2], &cfg)?;
    print!("{}", render_table(&result));
    Ok(())
}
