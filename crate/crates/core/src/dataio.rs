//! Series ingestion, normalisation, sliding windows and the synthetic
//! benchmark generator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Prng;

/// Row-major `rows × cols` matrix: one row per time step, one column per
/// channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}×{cols} matrix given {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// A multivariate series split into train and labelled test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSet {
    pub train: Matrix,
    pub test: Matrix,
    pub test_labels: Vec<u8>,
    pub channel_names: Vec<String>,
    pub entity_id: String,
    /// Ground-truth anomaly-relevant channels, known only for generated data.
    #[serde(default)]
    pub relevant_channels: Option<Vec<usize>>,
}

impl TimeSeriesSet {
    pub fn channels(&self) -> usize {
        self.train.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.cols == 0 {
            return Err(Error::Usage("series must have at least one channel".into()));
        }
        if self.test.cols != self.train.cols {
            return Err(Error::Dimension(format!(
                "train has {} channels, test has {}",
                self.train.cols, self.test.cols
            )));
        }
        if self.test_labels.len() != self.test.rows {
            return Err(Error::Dimension(format!(
                "{} labels for {} test rows",
                self.test_labels.len(),
                self.test.rows
            )));
        }
        if self.test_labels.iter().any(|&l| l > 1) {
            return Err(Error::Usage("labels must be 0 or 1".into()));
        }
        for (name, m) in [("train", &self.train), ("test", &self.test)] {
            if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Ingestion {
                    file: name.into(),
                    line: pos / m.cols + 1,
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(())
    }
}

/// Known corpus layouts; loading through a profile checks the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetProfile {
    Msl,
    Smap,
    Smd,
    Swat,
}

impl DatasetProfile {
    pub fn channels(self) -> usize {
        match self {
            DatasetProfile::Msl => 55,
            DatasetProfile::Smap => 25,
            DatasetProfile::Smd => 38,
            DatasetProfile::Swat => 51,
        }
    }
}

fn ingestion(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parse a numeric CSV with an optional single header row.
///
/// Returns the matrix and the header names if a header was present.
pub fn read_matrix_csv(path: &Path) -> Result<(Matrix, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingestion(path, 0, e.to_string()))?;
    let mut header = None;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| ingestion(path, line, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => {
                let width = *cols.get_or_insert(values.len());
                if values.len() != width {
                    return Err(ingestion(
                        path,
                        line,
                        format!("expected {width} fields, found {}", values.len()),
                    ));
                }
                if let Some(c) = values.iter().position(|v| !v.is_finite()) {
                    return Err(ingestion(path, line, format!("non-finite value in column {c}")));
                }
                data.extend(values);
                rows += 1;
            }
            Err(_) if idx == 0 && header.is_none() => {
                let names: Vec<String> = record.iter().map(str::to_owned).collect();
                cols = Some(names.len());
                header = Some(names);
            }
            Err(e) => {
                let cell = record.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or_default();
                return Err(ingestion(path, line, format!("non-numeric cell `{cell}`: {e}")));
            }
        }
    }
    let cols = cols.ok_or_else(|| ingestion(path, 0, "file is empty"))?;
    Ok((Matrix::new(rows, cols, data)?, header))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path).map_err(|e| ingestion(path, 0, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" | "0.0" => Ok(0),
            "1" | "1.0" => Ok(1),
            other => Err(ingestion(path, i + 1, format!("label must be 0 or 1, found `{other}`"))),
        })
        .collect()
}

/// Load train/test/label files into a validated [`TimeSeriesSet`].
pub fn load_csv(train_path: &Path, test_path: &Path, label_path: &Path, entity_id: &str) -> Result<TimeSeriesSet> {
    let (train, train_header) = read_matrix_csv(train_path)?;
    let (test, _) = read_matrix_csv(test_path)?;
    let test_labels = read_labels(label_path)?;
    if test.cols != train.cols {
        return Err(ingestion(
            test_path,
            1,
            format!("{} channels, train file has {}", test.cols, train.cols),
        ));
    }
    if test_labels.len() != test.rows {
        return Err(ingestion(
            label_path,
            test_labels.len(),
            format!("{} labels for {} test rows", test_labels.len(), test.rows),
        ));
    }
    if train.rows == 0 {
        return Err(ingestion(train_path, 1, "no data rows"));
    }
    let channel_names = train_header.unwrap_or_else(|| (0..train.cols).map(|c| format!("c{c}")).collect());
    let set = TimeSeriesSet {
        train,
        test,
        test_labels,
        channel_names,
        entity_id: entity_id.to_owned(),
        relevant_channels: None,
    };
    set.validate()?;
    Ok(set)
}

/// [`load_csv`] plus a channel-count check against a known corpus layout.
pub fn load_csv_with_profile(
    profile: DatasetProfile,
    train_path: &Path,
    test_path: &Path,
    label_path: &Path,
    entity_id: &str,
) -> Result<TimeSeriesSet> {
    let set = load_csv(train_path, test_path, label_path, entity_id)?;
    if set.channels() != profile.channels() {
        return Err(ingestion(
            train_path,
            1,
            format!(
                "{profile:?} entities have {} channels, found {}",
                profile.channels(),
                set.channels()
            ),
        ));
    }
    Ok(set)
}

/// Write a matrix as CSV with a header row. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_matrix_csv(path: &Path, m: &Matrix, names: &[String]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = names.join(",");
    out.push('\n');
    for r in 0..m.rows {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    crate::io::write_atomic(path, text.as_bytes())
}

/// Per-channel statistics fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub const EPS: f64 = 1e-8;

    pub fn fit(train: &Matrix) -> Self {
        let n = train.rows.max(1) as f64;
        let mut mean = vec![0.0; train.cols];
        for r in 0..train.rows {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; train.cols];
        for r in 0..train.rows {
            for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt()).collect();
        Self { mean, std }
    }

    /// Z-score with the fitted statistics; channels whose training std is
    /// below [`NormStats::EPS`] map to zero.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows {
            for c in 0..m.cols {
                let s = self.std[c];
                out.data[r * m.cols + c] = if s < Self::EPS {
                    0.0
                } else {
                    (m.get(r, c) - self.mean[c]) / s
                };
            }
        }
        out
    }

    /// Standard deviations as used for scaling (clamped at `EPS`).
    pub fn clamped_std(&self) -> Vec<f64> {
        self.std.iter().map(|s| s.max(Self::EPS)).collect()
    }
}

pub fn normalize(set: &TimeSeriesSet) -> Result<(TimeSeriesSet, NormStats)> {
    if set.train.rows == 0 {
        return Err(Error::Usage("cannot normalise an empty training split".into()));
    }
    let stats = NormStats::fit(&set.train);
    let mut out = set.clone();
    out.train = stats.apply(&set.train);
    out.test = stats.apply(&set.test);
    Ok((out, stats))
}

/// Sliding windows over one series, `N × ws × C` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub ws: usize,
    pub stride: usize,
    pub channels: usize,
    pub origin: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.ws * self.channels
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_len();
        &self.windows[i * w..(i + 1) * w]
    }

    /// Concatenate the selected windows into one `[n, ws, C]` buffer.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.window_len());
        for &i in indices {
            out.extend_from_slice(self.window(i));
        }
        out
    }
}

/// Number of windows of size `ws` at `stride` over `len` points.
pub fn window_count(len: usize, ws: usize, stride: usize) -> usize {
    if ws > len || stride == 0 {
        0
    } else {
        (len - ws) / stride + 1
    }
}

/// Slice a series into windows; a window is anomalous iff it covers at
/// least one anomalous point.
pub fn make_windows(series: &Matrix, labels: Option<&[u8]>, ws: usize, stride: usize) -> Result<WindowSet> {
    if stride == 0 {
        return Err(Error::Usage("stride must be at least 1".into()));
    }
    if ws == 0 || ws > series.rows {
        return Err(Error::Usage(format!(
            "window size {ws} does not fit a series of {} points",
            series.rows
        )));
    }
    if let Some(l) = labels {
        if l.len() != series.rows {
            return Err(Error::Dimension(format!("{} labels for {} points", l.len(), series.rows)));
        }
    }
    let n = window_count(series.rows, ws, stride);
    let c = series.cols;
    let origin: Vec<usize> = (0..n).map(|i| i * stride).collect();
    let mut windows = Vec::with_capacity(n * ws * c);
    for &o in &origin {
        windows.extend_from_slice(&series.data[o * c..(o + ws) * c]);
    }
    let labels = labels.map(|l| origin.iter().map(|&o| u8::from(l[o..o + ws].contains(&1))).collect());
    Ok(WindowSet {
        windows,
        labels,
        ws,
        stride,
        channels: c,
        origin,
    })
}

/// How an anomaly segment corrupts the relevant channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Clean signal replaced by three times its magnitude.
    AmplitudeSpike,
    /// Sinusoids evaluated at twice their frequency.
    FrequencyDoubling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub t_train: usize,
    pub t_test: usize,
    pub channels: usize,
    pub relevant_channels: Vec<usize>,
    /// `(start, length)` in test coordinates.
    pub anomaly_segments: Vec<(usize, usize)>,
    /// Add a level offset to irrelevant channels over one normal test stretch.
    #[serde(default)]
    pub shift: bool,
}

impl SyntheticSpec {
    /// Desk-scale benchmark layout: three evenly spread 80-point segments,
    /// placed by `seed`, for ≈12% anomalous test points.
    pub fn bench(seed: u64, t_train: usize, t_test: usize, channels: usize, relevant: Vec<usize>) -> Self {
        let mut rng = Prng::substream(seed, &[0x5e9]);
        let count = 3;
        let len = t_test * 12 / 100 / count;
        let zone = t_test / count;
        let anomaly_segments = (0..count)
            .map(|z| {
                let slack = zone.saturating_sub(len + 2);
                let start = z * zone + 1 + (rng.uniform() * slack as f64) as usize;
                (start, len)
            })
            .collect();
        Self {
            seed,
            t_train,
            t_test,
            channels,
            relevant_channels: relevant,
            anomaly_segments,
            shift: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Tone {
    amplitude: f64,
    period: f64,
    phase: f64,
}

fn clean_value(tones: &[Tone], t: f64) -> f64 {
    tones
        .iter()
        .map(|k| k.amplitude * (std::f64::consts::TAU * t / k.period + k.phase).sin())
        .sum()
}

pub const SYNTHETIC_NOISE_STD: f64 = 0.05;

/// Seeded multichannel sinusoid generator with planted anomalies.
///
/// Every channel is a sum of one to three tones plus Gaussian noise. Inside
/// anomaly segments only the relevant channels are corrupted. Corruption
/// kinds alternate over segments (in start order) from a seeded first kind.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TimeSeriesSet> {
    let c = spec.channels;
    if c == 0 {
        return Err(Error::Usage("synthetic data needs at least one channel".into()));
    }
    if let Some(&bad) = spec.relevant_channels.iter().find(|&&ch| ch >= c) {
        return Err(Error::Usage(format!("relevant channel {bad} out of range 0..{c}")));
    }
    let mut segments = spec.anomaly_segments.clone();
    segments.sort_unstable();
    for w in segments.windows(2) {
        if w[0].0 + w[0].1 > w[1].0 {
            return Err(Error::Usage(format!("anomaly segments {:?} and {:?} overlap", w[0], w[1])));
        }
    }
    if let Some(&(s, l)) = segments.iter().find(|&&(s, l)| l == 0 || s + l > spec.t_test) {
        return Err(Error::Usage(format!(
            "segment ({s}, {l}) is empty or exceeds the {} test points",
            spec.t_test
        )));
    }

    let mut rng = Prng::new(spec.seed);
    let tones: Vec<Vec<Tone>> = (0..c)
        .map(|_| {
            let count = 1 + (rng.uniform() * 3.0) as usize;
            (0..count)
                .map(|_| Tone {
                    amplitude: rng.uniform_range(0.5, 1.5),
                    period: rng.uniform_range(8.0, 32.0),
                    phase: rng.uniform_range(0.0, std::f64::consts::TAU),
                })
                .collect()
        })
        .collect();
    let first_spike = rng.uniform() < 0.5;
    let kinds: Vec<Corruption> = (0..segments.len())
        .map(|i| {
            if (i % 2 == 0) == first_spike {
                Corruption::AmplitudeSpike
            } else {
                Corruption::FrequencyDoubling
            }
        })
        .collect();

    let mut noise = Prng::substream(spec.seed, &[1]);
    let mut train = Matrix::zeros(spec.t_train, c);
    for t in 0..spec.t_train {
        for ch in 0..c {
            train.data[t * c + ch] = clean_value(&tones[ch], t as f64) + SYNTHETIC_NOISE_STD * noise.normal();
        }
    }

    let relevant: Vec<bool> = (0..c).map(|ch| spec.relevant_channels.contains(&ch)).collect();
    let mut labels = vec![0u8; spec.t_test];
    let mut kind_at = vec![None; spec.t_test];
    for (&(s, l), &kind) in segments.iter().zip(&kinds) {
        for t in s..s + l {
            labels[t] = 1;
            kind_at[t] = Some(kind);
        }
    }
    let shift_range = if spec.shift { shift_stretch(spec.t_test, &segments) } else { None };

    let mut test = Matrix::zeros(spec.t_test, c);
    for t in 0..spec.t_test {
        // Test continues the training timeline.
        let time = (spec.t_train + t) as f64;
        for ch in 0..c {
            let mut v = match (kind_at[t], relevant[ch]) {
                (Some(Corruption::AmplitudeSpike), true) => 3.0 * clean_value(&tones[ch], time).abs(),
                (Some(Corruption::FrequencyDoubling), true) => clean_value(&tones[ch], 2.0 * time),
                _ => clean_value(&tones[ch], time),
            };
            if let Some((a, b)) = shift_range {
                if !relevant[ch] && (a..b).contains(&t) {
                    v += 1.5;
                }
            }
            test.data[t * c + ch] = v + SYNTHETIC_NOISE_STD * noise.normal();
        }
    }

    let set = TimeSeriesSet {
        train,
        test,
        test_labels: labels,
        channel_names: (0..c).map(|ch| format!("c{ch}")).collect(),
        entity_id: format!("synthetic-{}", spec.seed),
        relevant_channels: Some(spec.relevant_channels.clone()),
    };
    set.validate()?;
    Ok(set)
}

/// Longest anomaly-free stretch of the test range, capped at 10% of it.
fn shift_stretch(t_test: usize, segments: &[(usize, usize)]) -> Option<(usize, usize)> {
    let mut best = (0, 0);
    let mut cursor = 0;
    for &(s, l) in segments.iter().chain(std::iter::once(&(t_test, 0))) {
        if s > cursor && s - cursor > best.1 - best.0 {
            best = (cursor, s);
        }
        cursor = cursor.max(s + l);
    }
    let len = (best.1 - best.0).min(t_test / 10);
    (len > 0).then(|| {
        let mid = (best.0 + best.1) / 2;
        (mid - len / 2, mid - len / 2 + len)
    })
}
