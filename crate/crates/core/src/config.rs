//! Run configuration, the desk-scale profile and stage hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{DatasetProfile, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::CaladConfig;
use crate::neighbor::EncoderConfig;
use crate::relevance::{AutoencoderConfig, DEFAULT_LAMBDA};
use crate::spectral::AugmentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub t_train: usize,
    pub t_test: usize,
    pub channels: usize,
    pub relevant_channels: Vec<usize>,
    /// Explicit `(start, length)` segments; seeded bench layout when absent.
    pub anomaly_segments: Option<Vec<(usize, usize)>>,
    pub shift: bool,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            t_train: 3000,
            t_test: 2000,
            channels: 6,
            relevant_channels: vec![0, 1],
            anomaly_segments: None,
            shift: false,
        }
    }
}

impl SyntheticData {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        let mut spec = SyntheticSpec::bench(seed, self.t_train, self.t_test, self.channels, self.relevant_channels.clone());
        if let Some(segments) = &self.anomaly_segments {
            spec.anomaly_segments = segments.clone();
        }
        spec.shift = self.shift;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvEntity {
    pub id: String,
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    #[serde(default)]
    pub profile: Option<DatasetProfile>,
    pub entities: Vec<CsvEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Csv(CsvData),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticData::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub ws: usize,
    pub stride: usize,
    pub lambda: f64,
    pub desk: bool,
    pub data: DataConfig,
    pub autoencoder: AutoencoderConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub model: CaladConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ws: 200,
            stride: 1,
            lambda: DEFAULT_LAMBDA,
            desk: false,
            data: DataConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            model: CaladConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Desk-scale overrides for quick single-core runs.
    pub fn apply_desk(&mut self) {
        self.desk = true;
        self.ws = 64;
        self.stride = 5;
        for (d_model, layers, heads, ff_width) in [
            (&mut self.autoencoder.d_model, &mut self.autoencoder.layers, &mut self.autoencoder.heads, &mut self.autoencoder.ff_width),
            (&mut self.model.d_model, &mut self.model.layers, &mut self.model.heads, &mut self.model.ff_width),
        ] {
            *d_model = 32;
            *layers = 1;
            *heads = 2;
            *ff_width = 64;
        }
        self.autoencoder.epochs = 10;
        self.encoder.epochs = 10;
        self.model.epochs = 15;
    }

    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.apply_desk();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.ws < 2 {
            return fail(format!("ws must be at least 2, got {}", self.ws));
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        for (name, batch) in [
            ("autoencoder", self.autoencoder.batch_size),
            ("encoder", self.encoder.batch_size),
            ("model", self.model.batch_size),
        ] {
            if batch == 0 {
                return fail(format!("{name}.batch_size must be positive"));
            }
        }
        for (name, d, h) in [
            ("autoencoder", self.autoencoder.d_model, self.autoencoder.heads),
            ("model", self.model.d_model, self.model.heads),
        ] {
            if h == 0 || d % h != 0 {
                return fail(format!("{name}.d_model {d} is not divisible by {h} heads"));
            }
        }
        self.augment.validate()?;
        if let DataConfig::Csv(csv) = &self.data {
            if csv.entities.is_empty() {
                return fail("csv data needs at least one entity".into());
            }
        }
        Ok(())
    }

    /// Hashes of each stage's configuration, each folding in its predecessor.
    pub fn stage_hashes(&self, entity_id: &str) -> Result<StageHashes> {
        let data = chain("", &("data", &self.data, self.seed, entity_id))?;
        let relevance = chain(&data, &("relevance", self.ws, self.stride, self.lambda, &self.autoencoder))?;
        let augment = chain(&relevance, &("augment", &self.augment))?;
        let embed = chain(&augment, &("embed", &self.encoder))?;
        let train = chain(&embed, &("train", &self.model))?;
        Ok(StageHashes {
            data,
            relevance,
            augment,
            embed,
            train,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashes {
    pub data: String,
    pub relevance: String,
    pub augment: String,
    pub embed: String,
    pub train: String,
}

fn chain<T: Serialize>(previous: &str, section: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(section)?)?;
    let mut h = Sha256::new();
    h.update(previous.as_bytes());
    h.update([0u8]);
    h.update(canonical.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_published_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.ws, 200);
        assert_eq!(cfg.stride, 1);
        assert_eq!(cfg.lambda, 0.001);
        assert_eq!(cfg.model.classes, 10);
        assert_eq!(cfg.model.batch_size, 50);
        assert_eq!((cfg.model.epochs, cfg.model.lr), (50, 0.01));
        assert_eq!((cfg.encoder.epochs, cfg.encoder.lr, cfg.encoder.margin), (30, 0.001, 1.0));
        assert!(!cfg.model.literal_eq9_sign);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = RunConfig::desk();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[model]\nwidth = 3"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[data]\nkind = \"synthetic\"\nchanels = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[data]\nkind = \"synthetic\"\nchannels = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ws, 200);
        match cfg.data {
            DataConfig::Synthetic(s) => assert_eq!((s.channels, s.t_train), (4, 3000)),
            DataConfig::Csv(_) => panic!("wrong variant"),
        }
        let csv = RunConfig::from_toml(
            "[data]\nkind = \"csv\"\nprofile = \"msl\"\n[[data.entities]]\nid = \"F-5\"\ntrain = \"a\"\ntest = \"b\"\nlabels = \"c\"\n",
        )
        .unwrap();
        assert!(matches!(csv.data, DataConfig::Csv(CsvData { profile: Some(DatasetProfile::Msl), .. })));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("ws = 1").is_err());
        assert!(RunConfig::from_toml("stride = 0").is_err());
        assert!(RunConfig::from_toml("[model]\nd_model = 30\nheads = 4").is_err());
    }

    #[test]
    fn hashes_chain_downstream() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.model.epochs = 3;
        let (ha, hb) = (a.stage_hashes("e").unwrap(), b.stage_hashes("e").unwrap());
        assert_eq!(ha.embed, hb.embed);
        assert_ne!(ha.train, hb.train);
        let mut c = a.clone();
        c.seed = 1;
        let hc = c.stage_hashes("e").unwrap();
        assert_ne!(ha.data, hc.data);
        assert_ne!(ha.train, hc.train);
        assert_ne!(ha.data, a.stage_hashes("f").unwrap().data);
    }
}
