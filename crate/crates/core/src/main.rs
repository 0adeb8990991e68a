use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use calad::bench::{render_table, run_bench, write_bench};
use calad::config::RunConfig;
use calad::pipeline::{self, RunSummary};
use calad::spectral::AugmentMode;
use calad::{Error, Result};

#[derive(Parser)]
#[command(name = "calad", version, about = "Channel-aware contrastive anomaly detection for multivariate time series")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; for `bench`, the first of consecutive seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Small, fast profile (ws 64, stride 5, short training).
    #[arg(long, global = true)]
    desk: bool,
    /// Output directory; the CALAD_OUT environment variable takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Augmentation mode: channel-wise or all-channel.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<AugmentMode>,
    /// Use the printed minus sign on the furthest-neighbour term.
    #[arg(long, global = true)]
    literal_eq9_sign: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Train the autoencoder and estimate channel relevance.
    Relevance,
    /// Build channel-aware triplets.
    Augment,
    /// Train the triplet encoder and build the neighbour index.
    TrainEmbed,
    /// Train the main model.
    Train,
    /// Score test windows and write the report.
    Detect,
    /// Every stage in sequence.
    RunAll,
    /// Multi-seed synthetic benchmark; runs at desk scale unless the config sets `desk`.
    Bench {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn parse_mode(s: &str) -> std::result::Result<AugmentMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if g.desk {
        cfg.apply_desk();
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = g.mode {
        cfg.augment.mode = mode;
    }
    if g.literal_eq9_sign {
        cfg.model.literal_eq9_sign = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(s: &RunSummary) {
    let m = &s.metrics;
    let r = &s.random_baseline;
    println!("entities: {}", s.entities.join(", "));
    println!(
        "CALAD   P {:.4}  R {:.4}  F1 {:.4}  AU-PR {:.4}",
        m.precision, m.recall, m.f1, m.au_pr
    );
    println!(
        "Random  P {:.4}  R {:.4}  F1 {:.4}  AU-PR {:.4}",
        r.precision, r.recall, r.f1, r.au_pr
    );
    for n in &s.notes {
        println!("note: {n}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = pipeline::resolve_out(cli.global.out.clone());
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Synth => {
            for dir in pipeline::cmd_synth(&cfg, &out)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Relevance => {
            for (id, rel) in pipeline::entity_ids(&cfg).iter().zip(pipeline::cmd_relevance(&cfg, &out)?) {
                println!("{id}: relevant channels {:?} ({:?})", rel.relevant(), rel.selection);
            }
        }
        Command::Augment => pipeline::cmd_augment(&cfg, &out)?,
        Command::TrainEmbed => pipeline::cmd_train_embed(&cfg, &out)?,
        Command::Train => pipeline::cmd_train(&cfg, &out)?,
        Command::Detect => print_summary(&pipeline::cmd_detect(&cfg, &out)?),
        Command::RunAll => print_summary(&pipeline::cmd_run_all(&cfg, &out)?),
        Command::Bench { seeds } => {
            let mut cfg = cfg;
            if !cfg.desk {
                cfg.apply_desk();
            }
            let list: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
            let result = run_bench(&list, &cfg)?;
            write_bench(&result, &out)?;
            print!("{}", render_table(&result));
            for t in &result.timings {
                eprintln!(
                    "seed {}: relevance {:.1}s, channel-wise {:.1}s, all-channel {:.1}s",
                    t.seed,
                    t.relevance.as_secs_f64(),
                    t.channel_wise.as_secs_f64(),
                    t.all_channel.as_secs_f64()
                );
            }
            if result.partial {
                return Err(Error::Numeric("bench finished with failed arms".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("calad: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
