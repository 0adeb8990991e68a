//! Synthetic benchmark: per-seed relevance recovery plus the channel-wise,
//! all-channel and random arms on one shared dataset per seed.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, RunConfig};
use crate::detection::{compute_metrics, random_baseline, ClassProfile, DetectionReport, Metrics, WindowRecord};
use crate::error::{Error, Result};
use crate::pipeline::{self, prepare, Prepared, StageSeeds};
use crate::relevance::{set_f1, ChannelRelevance};
use crate::spectral::AugmentMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecovery {
    pub planted: Vec<usize>,
    pub found: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub relevance: ChannelRelevance,
}

impl RelevanceRecovery {
    pub fn new(relevance: ChannelRelevance, planted: &[usize]) -> Self {
        let found = relevance.relevant();
        let hits = found.iter().filter(|c| planted.contains(c)).count() as f64;
        let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
        Self {
            planted: planted.to_vec(),
            precision: ratio(hits, found.len()),
            recall: ratio(hits, planted.len()),
            f1: set_f1(&found, planted),
            found,
            relevance,
        }
    }
}

/// One arm's outcome: a report, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub arm: String,
    pub report: Option<DetectionReport>,
    pub error: Option<String>,
}

impl ArmOutcome {
    fn from_result(arm: &str, r: Result<DetectionReport>) -> Self {
        match r {
            Ok(report) => Self {
                arm: arm.into(),
                report: Some(report),
                error: None,
            },
            Err(e) => Self {
                arm: arm.into(),
                report: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn metrics(&self) -> Option<Metrics> {
        self.report.as_ref().map(|r| r.metrics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub entity_id: String,
    /// Config hash through the relevance stage, shared by every arm.
    pub dataset_hash: String,
    pub prevalence: f64,
    pub relevance: Option<RelevanceRecovery>,
    pub channel_wise: ArmOutcome,
    pub all_channel: ArmOutcome,
    pub random: ArmOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub f1: MeanStd,
    pub au_pr: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
}

impl ArmSummary {
    fn of(metrics: &[Metrics]) -> Self {
        let col = |f: fn(&Metrics) -> f64| MeanStd::of(&metrics.iter().map(f).collect::<Vec<_>>());
        Self {
            f1: col(|m| m.f1),
            au_pr: col(|m| m.au_pr),
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub relevance_precision: MeanStd,
    pub relevance_recall: MeanStd,
    pub relevance_f1: MeanStd,
    pub prevalence: MeanStd,
    pub channel_wise: ArmSummary,
    pub all_channel: ArmSummary,
    pub random: ArmSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedTiming {
    pub seed: u64,
    pub relevance: Duration,
    pub channel_wise: Duration,
    pub all_channel: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
    pub partial: bool,
    pub per_seed: Vec<SeedResult>,
    pub summary: BenchSummary,
    #[serde(skip)]
    pub timings: Vec<SeedTiming>,
}

fn random_report(cfg: &RunConfig, data: &Prepared, hash: &str, seeds: StageSeeds) -> Result<DetectionReport> {
    let truth = data
        .test_windows
        .labels
        .clone()
        .ok_or_else(|| Error::Usage("test windows carry no labels".into()))?;
    let (metrics, scores) = random_baseline(&truth, seeds.baseline)?;
    let windows: Vec<WindowRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| WindowRecord {
            index: i,
            origin: data.test_windows.origin[i],
            score: s.score,
            pred: s.label,
            truth: truth[i],
        })
        .collect();
    let pred: Vec<u8> = windows.iter().map(|w| w.pred).collect();
    let score: Vec<f64> = windows.iter().map(|w| w.score).collect();
    debug_assert_eq!(compute_metrics(&truth, &pred, &score)?, metrics);
    Ok(DetectionReport {
        entity_id: data.set.entity_id.clone(),
        seed: cfg.seed,
        config_hash: hash.to_owned(),
        config: serde_json::to_value(cfg)?,
        notes: vec!["random arm: scores uniform on [0, 1], labelled anomalous above 0.5".into()],
        profile: ClassProfile {
            normal_class: 0,
            histogram: Vec::new(),
        },
        prevalence: truth.iter().map(|&t| f64::from(t)).sum::<f64>() / truth.len() as f64,
        metrics,
        random_baseline: metrics,
        windows,
    })
}

fn run_arm(cfg: &RunConfig, mode: AugmentMode, data: &Prepared, relevance: &ChannelRelevance, shared_hash: &str) -> Result<DetectionReport> {
    let mut arm = cfg.clone();
    arm.augment.mode = mode;
    let id = &data.set.entity_id;
    let hashes = arm.stage_hashes(id)?;
    if hashes.relevance != shared_hash {
        return Err(Error::HashMismatch {
            artifact: format!("{id} {mode:?} arm"),
            expected: shared_hash.to_owned(),
            found: hashes.relevance,
        });
    }
    let seeds = StageSeeds::new(arm.seed, id);
    let triplets = pipeline::stage_augment(&arm, data, relevance, seeds)?;
    let (_, index, _) = pipeline::stage_embed(&arm, data, &triplets, seeds)?;
    let (network, _) = pipeline::stage_train(&arm, data, &index, seeds)?;
    pipeline::stage_detect(&arm, data, &network, &hashes, seeds)
}

fn failed(arm: &str, message: &str) -> ArmOutcome {
    ArmOutcome {
        arm: arm.into(),
        report: None,
        error: Some(message.into()),
    }
}

/// Run all arms for each seed. Arm failures are recorded and flag the
/// result as partial rather than aborting the remaining seeds.
pub fn run_bench(seeds: &[u64], base: &RunConfig) -> Result<BenchResult> {
    if seeds.len() < 3 {
        return Err(Error::Usage(format!("the bench needs at least 3 seeds, got {}", seeds.len())));
    }
    let planted = match &base.data {
        DataConfig::Synthetic(s) => s.relevant_channels.clone(),
        DataConfig::Csv(_) => return Err(Error::Usage("the bench runs on synthetic data only".into())),
    };
    base.validate()?;

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut timings = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.augment.mode = AugmentMode::ChannelWise;
        let id = pipeline::entity_ids(&cfg).remove(0);
        let shared_hash = cfg.stage_hashes(&id)?.relevance;
        let seeds_for = StageSeeds::new(seed, &id);

        let start = Instant::now();
        let prepared = pipeline::source_sets(&cfg).and_then(|sets| prepare(&cfg, &sets[0]));
        let relevance = prepared
            .as_ref()
            .map_err(Error::to_string)
            .and_then(|data| pipeline::stage_relevance(&cfg, data, seeds_for).map_err(|e| e.to_string()));
        let relevance_time = start.elapsed();

        let (result, timing) = match (&prepared, relevance) {
            (Ok(data), Ok(rel)) => {
                let t = Instant::now();
                let cw = run_arm(&cfg, AugmentMode::ChannelWise, data, &rel.relevance, &shared_hash);
                let cw_time = t.elapsed();
                let t = Instant::now();
                let ac = run_arm(&cfg, AugmentMode::AllChannel, data, &rel.relevance, &shared_hash);
                let ac_time = t.elapsed();
                let random = random_report(&cfg, data, &shared_hash, seeds_for);
                let prevalence = random.as_ref().map(|r| r.prevalence).unwrap_or(f64::NAN);
                (
                    SeedResult {
                        seed,
                        entity_id: id.clone(),
                        dataset_hash: shared_hash.clone(),
                        prevalence,
                        relevance: Some(RelevanceRecovery::new(rel.relevance, &planted)),
                        channel_wise: ArmOutcome::from_result("channel-wise", cw),
                        all_channel: ArmOutcome::from_result("all-channel", ac),
                        random: ArmOutcome::from_result("random", random),
                    },
                    SeedTiming {
                        seed,
                        relevance: relevance_time,
                        channel_wise: cw_time,
                        all_channel: ac_time,
                    },
                )
            }
            (_, Err(message)) => (
                SeedResult {
                    seed,
                    entity_id: id.clone(),
                    dataset_hash: shared_hash.clone(),
                    prevalence: f64::NAN,
                    relevance: None,
                    channel_wise: failed("channel-wise", &message),
                    all_channel: failed("all-channel", &message),
                    random: failed("random", &message),
                },
                SeedTiming {
                    seed,
                    relevance: relevance_time,
                    channel_wise: Duration::ZERO,
                    all_channel: Duration::ZERO,
                },
            ),
            (Err(_), Ok(_)) => unreachable!("relevance is only computed on prepared data"),
        };
        per_seed.push(result);
        timings.push(timing);
    }

    let partial = per_seed
        .iter()
        .any(|s| s.channel_wise.error.is_some() || s.all_channel.error.is_some() || s.random.error.is_some());
    let recovered: Vec<&RelevanceRecovery> = per_seed.iter().filter_map(|s| s.relevance.as_ref()).collect();
    let arm = |f: fn(&SeedResult) -> &ArmOutcome| {
        ArmSummary::of(&per_seed.iter().filter_map(|s| f(s).metrics()).collect::<Vec<_>>())
    };
    let summary = BenchSummary {
        relevance_precision: MeanStd::of(&recovered.iter().map(|r| r.precision).collect::<Vec<_>>()),
        relevance_recall: MeanStd::of(&recovered.iter().map(|r| r.recall).collect::<Vec<_>>()),
        relevance_f1: MeanStd::of(&recovered.iter().map(|r| r.f1).collect::<Vec<_>>()),
        prevalence: MeanStd::of(&per_seed.iter().map(|s| s.prevalence).filter(|p| p.is_finite()).collect::<Vec<_>>()),
        channel_wise: arm(|s| &s.channel_wise),
        all_channel: arm(|s| &s.all_channel),
        random: arm(|s| &s.random),
    };
    let mut notes = pipeline::run_notes(base);
    notes.retain(|n| !n.starts_with("augmentation mode"));
    notes.push("arms per seed share one dataset and one relevance estimate".into());
    Ok(BenchResult {
        seeds: seeds.to_vec(),
        config: serde_json::to_value(base)?,
        notes,
        partial,
        per_seed,
        summary,
        timings,
    })
}

fn cell(m: Option<Metrics>, f: fn(&Metrics) -> f64) -> String {
    m.map_or_else(|| "failed".to_owned(), |m| format!("{:.4}", f(&m)))
}

fn pm(v: MeanStd) -> String {
    format!("{:.4} ± {:.4}", v.mean, v.std)
}

/// Plain-text comparison table.
pub fn render_table(result: &BenchResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("seeds: {:?}{}\n", result.seeds, if result.partial { "  (PARTIAL)" } else { "" }));
    for note in &result.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:>6} {:>10} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "seed", "prevalence", "rel F1", "cw F1", "cw AUPR", "ac F1", "ac AUPR", "rnd F1", "rnd AUPR", "found"
    ));
    for s in &result.per_seed {
        let found = s.relevance.as_ref().map_or("-".to_owned(), |r| format!("{:?}", r.found));
        out.push_str(&format!(
            "{:>6} {:>10.4} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            s.seed,
            s.prevalence,
            s.relevance.as_ref().map_or("-".to_owned(), |r| format!("{:.4}", r.f1)),
            cell(s.channel_wise.metrics(), |m| m.f1),
            cell(s.channel_wise.metrics(), |m| m.au_pr),
            cell(s.all_channel.metrics(), |m| m.f1),
            cell(s.all_channel.metrics(), |m| m.au_pr),
            cell(s.random.metrics(), |m| m.f1),
            cell(s.random.metrics(), |m| m.au_pr),
            found
        ));
    }
    let sm = &result.summary;
    out.push('\n');
    out.push_str(&format!(
        "relevance recovery  precision {}  recall {}  set-F1 {}\n",
        pm(sm.relevance_precision),
        pm(sm.relevance_recall),
        pm(sm.relevance_f1)
    ));
    out.push_str(&format!("window prevalence   {}\n", pm(sm.prevalence)));
    for (name, a) in [("channel-wise", &sm.channel_wise), ("all-channel", &sm.all_channel), ("random", &sm.random)] {
        out.push_str(&format!(
            "{name:<13} F1 {}  AU-PR {}  P {}  R {}\n",
            pm(a.f1),
            pm(a.au_pr),
            pm(a.precision),
            pm(a.recall)
        ));
    }
    for s in &result.per_seed {
        for arm in [&s.channel_wise, &s.all_channel, &s.random] {
            if let Some(e) = &arm.error {
                out.push_str(&format!("seed {} {} failed: {e}\n", s.seed, arm.arm));
            }
        }
    }
    out
}

pub fn write_bench(result: &BenchResult, out: &Path) -> Result<()> {
    crate::io::write_atomic(&out.join("bench_report.json"), crate::json::to_string(result)?.as_bytes())?;
    crate::io::write_atomic(&out.join("bench_report.txt"), render_table(result).as_bytes())
}
