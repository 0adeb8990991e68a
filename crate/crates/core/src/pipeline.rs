//! The four-stage pipeline, as in-memory stage functions and as on-disk
//! subcommands that persist and verify artifacts between stages.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{indices_tensor, tensor_indices, Checkpoint};
use crate::config::{DataConfig, RunConfig, StageHashes};
use crate::dataio::{self, make_windows, normalize, NormStats, TimeSeriesSet, WindowSet};
use crate::detection::{self, compute_metrics, random_baseline, score_windows, window_records, DetectionReport, Metrics};
use crate::error::{Error, Result};
use crate::model::{self, CaladNetwork, LossBreakdown};
use crate::neighbor::{self, index_from_embeddings, NeighborIndex, TripletEncoder};
use crate::relevance::{self, estimate_relevance, reconstruction_errors, AutoencoderModel, AutoencoderSummary, ChannelRelevance};
use crate::spectral::{build_triplets, TripletSet};
use crate::tensor::rng::{derive_seed, label_hash};
use crate::tensor::{ParamStore, Tensor};

/// Per-entity seeds for each randomised stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub autoencoder: u64,
    pub augment: u64,
    pub encoder: u64,
    pub model: u64,
    pub baseline: u64,
}

impl StageSeeds {
    pub fn new(run_seed: u64, entity_id: &str) -> Self {
        let entity = derive_seed(run_seed, &[label_hash(entity_id)]);
        Self {
            autoencoder: derive_seed(entity, &[1]),
            augment: derive_seed(entity, &[2]),
            encoder: derive_seed(entity, &[3]),
            model: derive_seed(entity, &[4]),
            baseline: derive_seed(entity, &[5]),
        }
    }
}

/// A normalised entity sliced into training and test windows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub set: TimeSeriesSet,
    pub stats: NormStats,
    pub train_windows: WindowSet,
    pub test_windows: WindowSet,
}

pub fn prepare(cfg: &RunConfig, raw: &TimeSeriesSet) -> Result<Prepared> {
    let (set, stats) = normalize(raw)?;
    let train_windows = make_windows(&set.train, None, cfg.ws, cfg.stride)?;
    let test_windows = make_windows(&set.test, Some(&set.test_labels), cfg.ws, cfg.stride)?;
    Ok(Prepared {
        set,
        stats,
        train_windows,
        test_windows,
    })
}

#[derive(Debug, Clone)]
pub struct RelevanceOutput {
    pub relevance: ChannelRelevance,
    pub autoencoder: AutoencoderModel,
    pub summary: AutoencoderSummary,
}

/// Errors are measured on the unlabelled test split, where anomalies (if
/// any) live; the autoencoder itself only sees training windows.
pub fn stage_relevance(cfg: &RunConfig, data: &Prepared, seeds: StageSeeds) -> Result<RelevanceOutput> {
    let (autoencoder, summary) = relevance::train_autoencoder(&data.train_windows, &cfg.autoencoder, seeds.autoencoder)?;
    let (_, y) = reconstruction_errors(&autoencoder, &data.set.test)?;
    let relevance = estimate_relevance(&y, &data.set.test, cfg.lambda)?;
    Ok(RelevanceOutput {
        relevance,
        autoencoder,
        summary,
    })
}

pub fn stage_augment(cfg: &RunConfig, data: &Prepared, relevance: &ChannelRelevance, seeds: StageSeeds) -> Result<TripletSet> {
    let mut aug = cfg.augment;
    aug.seed = seeds.augment;
    build_triplets(&data.train_windows, relevance, &aug)
}

pub fn stage_embed(
    cfg: &RunConfig,
    data: &Prepared,
    triplets: &TripletSet,
    seeds: StageSeeds,
) -> Result<(TripletEncoder, NeighborIndex, Vec<f64>)> {
    let (encoder, summary) = neighbor::train_encoder(triplets, &cfg.encoder, seeds.encoder)?;
    let index = neighbor::build_index(&encoder, &data.train_windows)?;
    Ok((encoder, index, summary.epoch_losses))
}

pub fn stage_train(
    cfg: &RunConfig,
    data: &Prepared,
    index: &NeighborIndex,
    seeds: StageSeeds,
) -> Result<(CaladNetwork, Vec<LossBreakdown>)> {
    model::train(&data.train_windows, index, &cfg.model, seeds.model)
}

pub fn run_notes(cfg: &RunConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if cfg.desk {
        notes.push(format!(
            "desk profile: ws {}, stride {}, epochs autoencoder {} / encoder {} / model {}, \
             transformer width {} with {} block(s) and {} heads",
            cfg.ws,
            cfg.stride,
            cfg.autoencoder.epochs,
            cfg.encoder.epochs,
            cfg.model.epochs,
            cfg.model.d_model,
            cfg.model.layers,
            cfg.model.heads
        ));
    }
    notes.push(if cfg.model.literal_eq9_sign {
        "contrastive loss: literal sign, minimising -ln sim(near) + ln(1 - sim(far))".into()
    } else {
        "contrastive loss: intended sign, minimising -ln sim(near) - ln(1 - sim(far))".into()
    });
    notes.push(format!("augmentation mode: {:?}", cfg.augment.mode));
    notes.push("evaluation: window level, no point adjustment".into());
    notes
}

pub fn stage_detect(
    cfg: &RunConfig,
    data: &Prepared,
    network: &CaladNetwork,
    hashes: &StageHashes,
    seeds: StageSeeds,
) -> Result<DetectionReport> {
    let profile = detection::fit_profile(network, &data.train_windows)?;
    let scores = score_windows(network, &profile, &data.test_windows)?;
    let records = window_records(&data.test_windows, &scores)?;
    let truth: Vec<u8> = records.iter().map(|r| r.truth).collect();
    let pred: Vec<u8> = records.iter().map(|r| r.pred).collect();
    let score: Vec<f64> = records.iter().map(|r| r.score).collect();
    let metrics = compute_metrics(&truth, &pred, &score)?;
    let (baseline, _) = random_baseline(&truth, seeds.baseline)?;
    Ok(DetectionReport {
        entity_id: data.set.entity_id.clone(),
        seed: cfg.seed,
        config_hash: hashes.train.clone(),
        config: serde_json::to_value(cfg)?,
        notes: run_notes(cfg),
        profile,
        prevalence: truth.iter().map(|&t| f64::from(t)).sum::<f64>() / truth.len() as f64,
        metrics,
        random_baseline: baseline,
        windows: records,
    })
}

/// Everything one entity produces, kept in memory.
#[derive(Debug, Clone)]
pub struct EntityRun {
    pub relevance: RelevanceOutput,
    pub triplets: TripletSet,
    pub encoder: TripletEncoder,
    pub encoder_losses: Vec<f64>,
    pub index: NeighborIndex,
    pub network: CaladNetwork,
    pub log: Vec<LossBreakdown>,
    pub report: DetectionReport,
}

// ---------------------------------------------------------------------------
// On-disk layout and artifacts.

/// Output directory resolution: `CALAD_OUT` wins over the flag.
pub fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    match std::env::var_os("CALAD_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.unwrap_or_else(|| PathBuf::from("calad_out")),
    }
}

#[derive(Debug, Clone)]
pub struct EntityPaths {
    pub dir: PathBuf,
}

impl EntityPaths {
    pub fn new(out: &Path, entity_id: &str) -> Self {
        let safe: String = entity_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
            .collect();
        Self { dir: out.join(safe) }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.join("data")
    }

    pub fn train_csv(&self) -> PathBuf {
        self.data_dir().join("train.csv")
    }

    pub fn test_csv(&self) -> PathBuf {
        self.data_dir().join("test.csv")
    }

    pub fn labels_csv(&self) -> PathBuf {
        self.data_dir().join("labels.csv")
    }

    pub fn data_meta(&self) -> PathBuf {
        self.data_dir().join("meta.json")
    }

    pub fn relevance(&self) -> PathBuf {
        self.dir.join("relevance.json")
    }

    pub fn autoencoder(&self) -> PathBuf {
        self.dir.join("autoencoder.ckpt")
    }

    pub fn triplets(&self) -> PathBuf {
        self.dir.join("triplets.ckpt")
    }

    pub fn encoder(&self) -> PathBuf {
        self.dir.join("encoder.ckpt")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn windows_csv(&self) -> PathBuf {
        self.dir.join("windows.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub entity_id: String,
    pub config_hash: String,
    pub relevant_channels: Option<Vec<usize>>,
    pub channel_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceArtifact {
    pub config_hash: String,
    pub upstream_hash: String,
    pub relevance: ChannelRelevance,
    pub autoencoder: AutoencoderSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub entities: Vec<String>,
    pub aggregation: String,
    pub metrics: Metrics,
    pub random_baseline: Metrics,
    pub notes: Vec<String>,
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            stage: stage.to_owned(),
            path: path.to_owned(),
        })
    }
}

fn check_hash(artifact: &Path, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::HashMismatch {
            artifact: artifact.display().to_string(),
            expected: expected.to_owned(),
            found: found.to_owned(),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    crate::io::write_atomic(path, crate::json::to_string(value)?.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn named(params: &ParamStore) -> Vec<(String, Tensor)> {
    params.names().iter().cloned().zip(params.tensors().iter().cloned()).collect()
}

fn restore(params: &mut ParamStore, ck: &Checkpoint, prefix: &str) -> Result<()> {
    let (names, tensors): (Vec<String>, Vec<Tensor>) = ck
        .header
        .tensors
        .iter()
        .zip(&ck.tensors)
        .filter(|(e, _)| e.name.starts_with(prefix))
        .map(|(e, t)| (e.name.clone(), t.clone()))
        .unzip();
    params.load_from(&names, &tensors)
}

/// Entity ids the configuration will produce.
pub fn entity_ids(cfg: &RunConfig) -> Vec<String> {
    match &cfg.data {
        DataConfig::Synthetic(_) => vec![format!("synthetic-{}", cfg.seed)],
        DataConfig::Csv(csv) => csv.entities.iter().map(|e| e.id.clone()).collect(),
    }
}

/// Build the raw input sets without touching the output directory.
pub fn source_sets(cfg: &RunConfig) -> Result<Vec<TimeSeriesSet>> {
    match &cfg.data {
        DataConfig::Synthetic(s) => Ok(vec![dataio::generate_synthetic(&s.spec(cfg.seed))?]),
        DataConfig::Csv(csv) => csv
            .entities
            .iter()
            .map(|e| match csv.profile {
                Some(p) => dataio::load_csv_with_profile(p, &e.train, &e.test, &e.labels, &e.id),
                None => dataio::load_csv(&e.train, &e.test, &e.labels, &e.id),
            })
            .collect(),
    }
}

fn save_dataset(paths: &EntityPaths, set: &TimeSeriesSet, hash: &str) -> Result<()> {
    dataio::write_matrix_csv(&paths.train_csv(), &set.train, &set.channel_names)?;
    dataio::write_matrix_csv(&paths.test_csv(), &set.test, &set.channel_names)?;
    dataio::write_labels(&paths.labels_csv(), &set.test_labels)?;
    write_json(
        &paths.data_meta(),
        &DataMeta {
            entity_id: set.entity_id.clone(),
            config_hash: hash.to_owned(),
            relevant_channels: set.relevant_channels.clone(),
            channel_names: set.channel_names.clone(),
        },
    )
}

/// The raw set for a stage that needs input data: generated data must have
/// been written by `synth`; CSV sources are read in place.
fn load_stage_input(cfg: &RunConfig, out: &Path) -> Result<Vec<TimeSeriesSet>> {
    match &cfg.data {
        DataConfig::Csv(_) => source_sets(cfg),
        DataConfig::Synthetic(_) => entity_ids(cfg)
            .iter()
            .map(|id| {
                let paths = EntityPaths::new(out, id);
                require(&paths.data_meta(), "synth")?;
                let meta: DataMeta = read_json(&paths.data_meta())?;
                check_hash(&paths.data_meta(), &cfg.stage_hashes(id)?.data, &meta.config_hash)?;
                let mut set = dataio::load_csv(&paths.train_csv(), &paths.test_csv(), &paths.labels_csv(), id)?;
                set.relevant_channels = meta.relevant_channels;
                Ok(set)
            })
            .collect(),
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if !matches!(cfg.data, DataConfig::Synthetic(_)) {
        return Err(Error::Usage("synth needs a synthetic data section".into()));
    }
    let mut written = Vec::new();
    for set in source_sets(cfg)? {
        let paths = EntityPaths::new(out, &set.entity_id);
        save_dataset(&paths, &set, &cfg.stage_hashes(&set.entity_id)?.data)?;
        written.push(paths.data_dir());
    }
    Ok(written)
}

fn save_relevance(paths: &EntityPaths, hashes: &StageHashes, out: &RelevanceOutput) -> Result<()> {
    Checkpoint::new(
        "relevance",
        &hashes.relevance,
        named(&out.autoencoder.params),
        serde_json::to_value(&out.summary)?,
    )
    .save(&paths.autoencoder())?;
    write_json(
        &paths.relevance(),
        &RelevanceArtifact {
            config_hash: hashes.relevance.clone(),
            upstream_hash: hashes.data.clone(),
            relevance: out.relevance.clone(),
            autoencoder: out.summary.clone(),
        },
    )
}

pub fn cmd_relevance(cfg: &RunConfig, out: &Path) -> Result<Vec<ChannelRelevance>> {
    let mut all = Vec::new();
    for raw in load_stage_input(cfg, out)? {
        let id = raw.entity_id.clone();
        let hashes = cfg.stage_hashes(&id)?;
        let data = prepare(cfg, &raw)?;
        let result = stage_relevance(cfg, &data, StageSeeds::new(cfg.seed, &id))?;
        save_relevance(&EntityPaths::new(out, &id), &hashes, &result)?;
        all.push(result.relevance);
    }
    Ok(all)
}

fn load_relevance(paths: &EntityPaths, hashes: &StageHashes) -> Result<ChannelRelevance> {
    require(&paths.relevance(), "relevance")?;
    let art: RelevanceArtifact = read_json(&paths.relevance())?;
    check_hash(&paths.relevance(), &hashes.relevance, &art.config_hash)?;
    Ok(art.relevance)
}

fn save_triplets(paths: &EntityPaths, hashes: &StageHashes, t: &TripletSet) -> Result<()> {
    let n = t.len();
    let shape = [n, t.ws, t.channels];
    Checkpoint::new(
        "augment",
        &hashes.augment,
        vec![
            ("anchors".into(), Tensor::new(&shape, t.anchors.clone())?),
            ("positives".into(), Tensor::new(&shape, t.positives.clone())?),
            ("negatives".into(), Tensor::new(&shape, t.negatives.clone())?),
        ],
        serde_json::Value::Null,
    )
    .save(&paths.triplets())
}

pub fn cmd_augment(cfg: &RunConfig, out: &Path) -> Result<()> {
    for raw in load_stage_input(cfg, out)? {
        let id = raw.entity_id.clone();
        let paths = EntityPaths::new(out, &id);
        let hashes = cfg.stage_hashes(&id)?;
        let relevance = load_relevance(&paths, &hashes)?;
        let data = prepare(cfg, &raw)?;
        let triplets = stage_augment(cfg, &data, &relevance, StageSeeds::new(cfg.seed, &id))?;
        save_triplets(&paths, &hashes, &triplets)?;
    }
    Ok(())
}

fn load_triplets(paths: &EntityPaths, hashes: &StageHashes) -> Result<TripletSet> {
    require(&paths.triplets(), "augment")?;
    let ck = Checkpoint::load(&paths.triplets())?;
    check_hash(&paths.triplets(), &hashes.augment, &ck.header.config_hash)?;
    let anchors = ck.get("anchors")?;
    let shape = anchors.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Checkpoint(format!("triplet tensor shape {shape:?}")));
    }
    Ok(TripletSet {
        anchors: anchors.data().to_vec(),
        positives: ck.get("positives")?.data().to_vec(),
        negatives: ck.get("negatives")?.data().to_vec(),
        ws: shape[1],
        channels: shape[2],
    })
}

fn save_encoder(
    paths: &EntityPaths,
    hashes: &StageHashes,
    encoder: &TripletEncoder,
    index: &NeighborIndex,
    losses: &[f64],
) -> Result<()> {
    let mut tensors = named(&encoder.params);
    let n = index.len();
    tensors.push(("index.embeddings".into(), Tensor::new(&[n, index.dim], index.embeddings.clone())?));
    tensors.push(("index.nearest_of".into(), indices_tensor(&index.nearest_of)));
    tensors.push(("index.furthest_of".into(), indices_tensor(&index.furthest_of)));
    Checkpoint::new("train-embed", &hashes.embed, tensors, serde_json::json!({ "epoch_losses": losses }))
        .save(&paths.encoder())
}

pub fn cmd_train_embed(cfg: &RunConfig, out: &Path) -> Result<()> {
    for raw in load_stage_input(cfg, out)? {
        let id = raw.entity_id.clone();
        let paths = EntityPaths::new(out, &id);
        let hashes = cfg.stage_hashes(&id)?;
        let triplets = load_triplets(&paths, &hashes)?;
        let data = prepare(cfg, &raw)?;
        let (encoder, index, losses) = stage_embed(cfg, &data, &triplets, StageSeeds::new(cfg.seed, &id))?;
        save_encoder(&paths, &hashes, &encoder, &index, &losses)?;
    }
    Ok(())
}

pub fn load_index(paths: &EntityPaths, hashes: &StageHashes) -> Result<NeighborIndex> {
    require(&paths.encoder(), "train-embed")?;
    let ck = Checkpoint::load(&paths.encoder())?;
    check_hash(&paths.encoder(), &hashes.embed, &ck.header.config_hash)?;
    let emb = ck.get("index.embeddings")?;
    let index = NeighborIndex {
        embeddings: emb.data().to_vec(),
        dim: emb.shape().get(1).copied().unwrap_or(0),
        nearest_of: tensor_indices(ck.get("index.nearest_of")?)?,
        furthest_of: tensor_indices(ck.get("index.furthest_of")?)?,
    };
    let check = index_from_embeddings(index.embeddings.clone(), index.dim)?;
    if check != index {
        return Err(Error::Checkpoint("stored neighbor index disagrees with its embeddings".into()));
    }
    Ok(index)
}

fn save_model(paths: &EntityPaths, hashes: &StageHashes, network: &CaladNetwork, log: &[LossBreakdown]) -> Result<()> {
    Checkpoint::new("train", &hashes.train, named(&network.params), serde_json::Value::Null).save(&paths.model())?;
    let mut lines = String::new();
    for entry in log {
        lines.push_str(&crate::json::to_line(entry)?);
    }
    crate::io::write_atomic(&paths.train_log(), lines.as_bytes())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    for raw in load_stage_input(cfg, out)? {
        let id = raw.entity_id.clone();
        let paths = EntityPaths::new(out, &id);
        let hashes = cfg.stage_hashes(&id)?;
        let index = load_index(&paths, &hashes)?;
        let data = prepare(cfg, &raw)?;
        let (network, log) = stage_train(cfg, &data, &index, StageSeeds::new(cfg.seed, &id))?;
        save_model(&paths, &hashes, &network, &log)?;
    }
    Ok(())
}

/// Rebuild the trained network from its checkpoint.
pub fn load_network(cfg: &RunConfig, paths: &EntityPaths, hashes: &StageHashes, data: &Prepared) -> Result<CaladNetwork> {
    require(&paths.model(), "train")?;
    let ck = Checkpoint::load(&paths.model())?;
    check_hash(&paths.model(), &hashes.train, &ck.header.config_hash)?;
    let mut network = CaladNetwork::new(data.set.channels(), cfg.ws, &cfg.model, 0)?;
    restore(&mut network.params, &ck, "calad.")?;
    Ok(network)
}

fn save_report(paths: &EntityPaths, report: &DetectionReport) -> Result<()> {
    write_json(&paths.report(), report)?;
    detection::write_window_csv(&paths.windows_csv(), &report.windows)
}

fn summarize(cfg: &RunConfig, reports: &[DetectionReport]) -> RunSummary {
    let mean = |f: &dyn Fn(&DetectionReport) -> Metrics| {
        let n = reports.len().max(1) as f64;
        let ms: Vec<Metrics> = reports.iter().map(f).collect();
        Metrics {
            precision: ms.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: ms.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: ms.iter().map(|m| m.f1).sum::<f64>() / n,
            au_pr: ms.iter().map(|m| m.au_pr).sum::<f64>() / n,
        }
    };
    RunSummary {
        entities: reports.iter().map(|r| r.entity_id.clone()).collect(),
        aggregation: "macro average over entities; each entity trained and evaluated independently".into(),
        metrics: mean(&|r| r.metrics),
        random_baseline: mean(&|r| r.random_baseline),
        notes: run_notes(cfg),
    }
}

pub fn cmd_detect(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut reports = Vec::new();
    for raw in load_stage_input(cfg, out)? {
        let id = raw.entity_id.clone();
        let paths = EntityPaths::new(out, &id);
        let hashes = cfg.stage_hashes(&id)?;
        let data = prepare(cfg, &raw)?;
        let network = load_network(cfg, &paths, &hashes, &data)?;
        let report = stage_detect(cfg, &data, &network, &hashes, StageSeeds::new(cfg.seed, &id))?;
        save_report(&paths, &report)?;
        reports.push(report);
    }
    let summary = summarize(cfg, &reports);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Run every stage for one entity in memory.
pub fn run_entity(cfg: &RunConfig, raw: &TimeSeriesSet) -> Result<EntityRun> {
    let id = &raw.entity_id;
    let seeds = StageSeeds::new(cfg.seed, id);
    let hashes = cfg.stage_hashes(id)?;
    let data = prepare(cfg, raw)?;
    let relevance = stage_relevance(cfg, &data, seeds)?;
    let triplets = stage_augment(cfg, &data, &relevance.relevance, seeds)?;
    let (encoder, index, encoder_losses) = stage_embed(cfg, &data, &triplets, seeds)?;
    let (network, log) = stage_train(cfg, &data, &index, seeds)?;
    let report = stage_detect(cfg, &data, &network, &hashes, seeds)?;
    Ok(EntityRun {
        relevance,
        triplets,
        encoder,
        encoder_losses,
        index,
        network,
        log,
        report,
    })
}

/// The whole pipeline, chained in memory, writing each stage's artifact.
pub fn cmd_run_all(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut reports = Vec::new();
    for raw in source_sets(cfg)? {
        let id = raw.entity_id.clone();
        let paths = EntityPaths::new(out, &id);
        let hashes = cfg.stage_hashes(&id)?;
        if matches!(cfg.data, DataConfig::Synthetic(_)) {
            save_dataset(&paths, &raw, &hashes.data)?;
        }
        let run = run_entity(cfg, &raw)?;
        save_relevance(&paths, &hashes, &run.relevance)?;
        save_triplets(&paths, &hashes, &run.triplets)?;
        save_encoder(&paths, &hashes, &run.encoder, &run.index, &run.encoder_losses)?;
        save_model(&paths, &hashes, &run.network, &run.log)?;
        save_report(&paths, &run.report)?;
        reports.push(run.report);
    }
    let summary = summarize(cfg, &reports);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
