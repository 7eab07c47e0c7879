//! Multi-resolution extractor stack.
//!
//! Each level module is named by the duration its features summarize: the
//! hourly module reads twelve 5-minute points, the daily module reads 24
//! hourly points, and so on. A module input is either raw data
//! (`[0, …, 0, x]` per position) or the previous level's features together
//! with their segment means (`[z, x̄]`), with the mean always in the last
//! channel.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Resolution, SeriesBatch, TRANSIENT_LEN};
use crate::data::synth::FaultKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{ConvSpec, LayerSpec, Module, Network, Tensor3};
use crate::scalar::Scalar;
use crate::training::{Heads, TargetNorm};

/// Segments per forward pass during extraction.
const EXTRACT_CHUNK: usize = 256;

/// How a module reduces its last feature map before the projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Average over positions.
    #[default]
    GlobalAvg,
    /// Keep every position; the projection sees `width·L` inputs.
    Flatten,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_avg" | "gap" => Ok(Pooling::GlobalAvg),
            "flatten" => Ok(Pooling::Flatten),
            _ => Err(Error::invalid(format!("unknown pooling '{s}' (expected global_avg or flatten)"))),
        }
    }
}

/// Shape of every steady-state level module and the label space it is
/// trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    /// Levels to train, finest first.
    pub levels: Vec<Resolution>,
    /// Input channels `D`; modules emit `D − 1` features so that the next
    /// level sees `D` channels after the mean is appended.
    pub channels: usize,
    pub width: usize,
    pub blocks: usize,
    pub pooling: Pooling,
    /// Per-level pooling overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub level_pooling: BTreeMap<Resolution, Pooling>,
    /// Source categories; a batch's `source` selects its class index.
    pub classes: Vec<String>,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            levels: vec![Resolution::Hourly, Resolution::Daily],
            channels: 8,
            width: 32,
            blocks: 2,
            pooling: Pooling::GlobalAvg,
            level_pooling: BTreeMap::new(),
            classes: ["solar", "wind", "load", "ev"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("stack needs at least one level"));
        }
        for l in &self.levels {
            if !l.is_level() {
                return Err(Error::invalid(format!("{l} is not an extractor level")));
            }
        }
        let first = Resolution::LEVELS.iter().position(|l| *l == self.levels[0]).expect("checked");
        if Resolution::LEVELS[first..].iter().take(self.levels.len()).ne(self.levels.iter()) {
            return Err(Error::invalid(format!(
                "levels must be contiguous and ordered finest first, got {:?}",
                self.levels.iter().map(|l| l.as_str()).collect::<Vec<_>>()
            )));
        }
        if self.channels < 2 || self.width == 0 {
            return Err(Error::invalid("need at least 2 input channels and a positive width"));
        }
        if self.classes.len() < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.channels - 1
    }

    pub fn pooling_for(&self, level: Resolution) -> Pooling {
        self.level_pooling.get(&level).copied().unwrap_or(self.pooling)
    }

    pub fn class_of(&self, source: Option<&str>) -> Result<usize> {
        let source = source.ok_or_else(|| Error::invalid("training batch has no source label"))?;
        self.classes
            .iter()
            .position(|c| c == source)
            .ok_or_else(|| Error::invalid(format!("source '{source}' is not one of the classes {:?}", self.classes)))
    }

    /// Layer sequence of the module for `level`: stem conv, residual
    /// blocks, pooling, linear projection to `D − 1` features.
    pub fn level_specs(&self, level: Resolution) -> Result<Vec<LayerSpec>> {
        let l = level.segment_len()?;
        let w = self.width;
        let mut specs = vec![
            LayerSpec::Conv1d(ConvSpec::new(self.channels, w, 3, 1, 1)),
            LayerSpec::Batchnorm1d { channels: w },
            LayerSpec::Relu,
        ];
        for _ in 0..self.blocks {
            specs.push(LayerSpec::ResidualBlock {
                in_channels: w,
                out_channels: w,
                stride: 1,
                projection: false,
            });
        }
        let in_features = match self.pooling_for(level) {
            Pooling::GlobalAvg => {
                specs.push(LayerSpec::GlobalAvgPool);
                w
            }
            Pooling::Flatten => w * l,
        };
        specs.push(LayerSpec::Linear {
            in_features,
            out_features: self.feature_dim(),
        });
        Ok(specs)
    }
}

pub const TRANSIENT_FEATURES: usize = 2048;
pub const TRANSIENT_WIDTH: usize = 32;
pub const TRANSIENT_STAGES: usize = 4;

/// Stem conv to 32 channels, four stride-2 conv-bn-relu stages, then a
/// linear map of the flattened map to 2048 features.
pub fn transient_specs() -> Vec<LayerSpec> {
    let w = TRANSIENT_WIDTH;
    let mut specs = vec![
        LayerSpec::Conv1d(ConvSpec::new(3, w, 3, 1, 1)),
        LayerSpec::Batchnorm1d { channels: w },
        LayerSpec::Relu,
    ];
    let mut len = TRANSIENT_LEN;
    for _ in 0..TRANSIENT_STAGES {
        let conv = ConvSpec::new(w, w, 3, 2, 1);
        len = conv.output_length(len).expect("fixed transient length");
        specs.push(LayerSpec::Conv1d(conv));
        specs.push(LayerSpec::Batchnorm1d { channels: w });
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::Linear {
        in_features: w * len,
        out_features: TRANSIENT_FEATURES,
    });
    specs
}

/// A trained (or training) level module.
pub struct LevelModule<T> {
    pub level: Resolution,
    pub net: Network<T>,
    pub target_norm: TargetNorm,
    /// Task heads; present until the stack is finalized.
    pub heads: Option<Heads<T>>,
}

pub struct TransientModule<T> {
    pub net: Network<T>,
    pub target_norm: TargetNorm,
    pub classes: Vec<FaultKind>,
    pub heads: Option<Heads<T>>,
}

/// Per-level modules plus the optional transient module.
pub struct ExtractorStack<T> {
    pub config: StackConfig,
    pub modules: BTreeMap<Resolution, LevelModule<T>>,
    pub transient: Option<TransientModule<T>>,
    /// Hash of the training configuration that produced the weights.
    pub train_config_hash: String,
    frozen: bool,
    fingerprint: Option<String>,
}

impl<T: Scalar> ExtractorStack<T> {
    pub fn new(config: StackConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            modules: BTreeMap::new(),
            transient: None,
            train_config_hash: String::new(),
            frozen: false,
            fingerprint: None,
        })
    }

    /// Untrained module for `level`, initialized from `seed`.
    pub fn init_level(&self, level: Resolution, seed: u64) -> Result<Network<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::build(&self.config.level_specs(level)?, &mut rng)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn module(&self, level: Resolution) -> Result<&LevelModule<T>> {
        self.modules
            .get(&level)
            .ok_or_else(|| Error::MissingLevel(level.to_string()))
    }

    /// Drops every task head and freezes the stack. Fails if a scheduled
    /// level was never trained. Calling it again is a no-op.
    pub fn finalize(&mut self) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        if let Some(missing) = self.config.levels.iter().find(|l| !self.modules.contains_key(l)) {
            return Err(Error::MissingLevel(format!("{missing} (scheduled but not trained)")));
        }
        for m in self.modules.values_mut() {
            m.heads = None;
        }
        if let Some(t) = &mut self.transient {
            t.heads = None;
        }
        self.frozen = true;
        self.fingerprint = Some(self.compute_fingerprint());
        Ok(())
    }

    pub(crate) fn mark_frozen(&mut self) {
        self.frozen = true;
        self.fingerprint = Some(self.compute_fingerprint());
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for m in self.modules.values() {
            h.update(m.level.as_str().as_bytes());
            for t in m.net.state() {
                for v in t {
                    h.update(v.to_f64_lossy().to_le_bytes());
                }
            }
        }
        if let Some(t) = &self.transient {
            h.update(b"transient");
            for s in t.net.state() {
                for v in s {
                    h.update(v.to_f64_lossy().to_le_bytes());
                }
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Short hash of configuration and weights, tagging extracted features.
    pub fn version(&self) -> String {
        self.fingerprint.clone().unwrap_or_else(|| "unfrozen".into())
    }

    /// Runs the module for `input.level` over every segment.
    pub fn extract_at(&self, input: &LevelInput<T>) -> Result<FeatureSet<T>> {
        let module = self.module(input.level)?;
        let (n, c, l) = input.tensor.shape();
        let width = c * l;
        let mut rows = Vec::new();
        let mut dim = 0;
        for start in (0..n).step_by(EXTRACT_CHUNK) {
            let end = (start + EXTRACT_CHUNK).min(n);
            let chunk = Tensor3::new(
                end - start,
                c,
                l,
                input.tensor.as_slice()[start * width..end * width].to_vec(),
            )?;
            let out = module.net.infer(&chunk)?;
            dim = out.sample_len();
            rows.extend_from_slice(out.as_slice());
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} features", input.level)));
        }
        Ok(FeatureSet {
            rows: Matrix::new(n, dim, rows)?,
            means: input.means.clone(),
            sample_of: input.sample_of.clone(),
            resolution: input.level,
            version: self.version(),
        })
    }

    /// Walks the hierarchy from data at resolution `entry` up to features of
    /// duration `target`: raw data enters the module that consumes `entry`,
    /// and each later module reads the previous features and their means.
    pub fn extract_hierarchical(&self, x: &SeriesBatch, entry: Resolution, target: Resolution) -> Result<FeatureSet<T>> {
        if x.resolution != entry {
            return Err(Error::invalid(format!("data is at {} resolution, not {entry}", x.resolution)));
        }
        let first = entry.consumer_level()?;
        if !target.is_level() || target < first {
            return Err(Error::invalid(format!(
                "cannot reach {target} features from {entry} data (first reachable level is {first})"
            )));
        }
        let input = build_input(None, Some(x), first, self.config.channels)?;
        let mut features = self.extract_at(&input)?;
        while features.resolution < target {
            let level = features.resolution.consumer_level()?;
            let input = build_input(Some(&features), None, level, self.config.channels)?;
            features = self.extract_at(&input)?;
        }
        Ok(features)
    }

    /// 2048-dimensional features of 3-channel, 960-point recordings.
    pub fn extract_transient(&self, x: &SeriesBatch) -> Result<FeatureSet<T>> {
        let module = self
            .transient
            .as_ref()
            .ok_or_else(|| Error::MissingLevel("transient".into()))?;
        let tensor = transient_tensor(x)?;
        let (n, c, l) = tensor.shape();
        let mut rows = Vec::with_capacity(n * TRANSIENT_FEATURES);
        for start in (0..n).step_by(EXTRACT_CHUNK) {
            let end = (start + EXTRACT_CHUNK).min(n);
            let chunk = Tensor3::new(end - start, c, l, tensor.as_slice()[start * c * l..end * c * l].to_vec())?;
            rows.extend_from_slice(module.net.infer(&chunk)?.as_slice());
        }
        Ok(FeatureSet {
            rows: Matrix::new(n, TRANSIENT_FEATURES, rows)?,
            means: vec![T::zero(); n],
            sample_of: (0..n).collect(),
            resolution: Resolution::Transient,
            version: self.version(),
        })
    }
}

pub(crate) fn transient_tensor<T: Scalar>(x: &SeriesBatch) -> Result<Tensor3<T>> {
    if x.channels() != 3 || x.len() != TRANSIENT_LEN {
        return Err(Error::dim(format!(
            "transient input must be 3 channels x {TRANSIENT_LEN} points, got {} x {}",
            x.channels(),
            x.len()
        )));
    }
    Tensor3::new(
        x.n_samples(),
        3,
        TRANSIENT_LEN,
        x.as_slice().iter().map(|&v| T::of(v)).collect(),
    )
}

/// Which side of the switch produced a level input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputForm {
    FromFeatures,
    FromRaw,
}

/// Input `I` of one level module: `(segments, D, L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelInput<T> {
    pub level: Resolution,
    pub form: InputForm,
    pub tensor: Tensor3<T>,
    /// Unpadded positions per segment.
    pub valid: Vec<usize>,
    /// Originating window (or window group) per segment.
    pub sample_of: Vec<usize>,
    /// Mean of the value channel over each segment's unpadded positions.
    pub means: Vec<T>,
}

/// Feature rows emitted by one level, one per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet<T> {
    pub rows: Matrix<T>,
    /// `x̄` for each row: the mean of the values the row summarizes.
    pub means: Vec<T>,
    pub sample_of: Vec<usize>,
    pub resolution: Resolution,
    pub version: String,
}

/// Arithmetic mean of the last channel over the first `valid[s]` positions
/// of each segment.
pub fn level_mean<T: Scalar>(tensor: &Tensor3<T>, valid: &[usize]) -> Result<Vec<T>> {
    let (n, c, l) = tensor.shape();
    if n == 0 || c == 0 || l == 0 {
        return Err(Error::Empty("level mean of empty segments".into()));
    }
    if valid.len() != n {
        return Err(Error::dim(format!("{} valid lengths for {n} segments", valid.len())));
    }
    (0..n)
        .map(|s| {
            let v = valid[s];
            if v == 0 || v > l {
                return Err(Error::invalid(format!("segment {s} has {v} valid points of {l}")));
            }
            let row = &tensor.sample(s)[(c - 1) * l..(c - 1) * l + v];
            Ok(row.iter().copied().sum::<T>() / T::of(v as f64))
        })
        .collect()
}

/// Builds the input of `level` from exactly one of: features of the level
/// below, or raw data at the level's input resolution.
pub fn build_input<T: Scalar>(
    prev: Option<&FeatureSet<T>>,
    raw: Option<&SeriesBatch>,
    level: Resolution,
    channels: usize,
) -> Result<LevelInput<T>> {
    let l = level.segment_len()?;
    let expected = level.level_input()?;
    let (data, valid, sample_of, form) = match (prev, raw) {
        (Some(f), None) => {
            if f.resolution != expected {
                return Err(Error::invalid(format!(
                    "{level} input needs {expected} features, got {}",
                    f.resolution
                )));
            }
            let (d, v, s) = from_features(f, l, channels)?;
            (d, v, s, InputForm::FromFeatures)
        }
        (None, Some(x)) => {
            if x.resolution != expected {
                return Err(Error::invalid(format!(
                    "{level} input needs {expected} data, got {}",
                    x.resolution
                )));
            }
            let (d, v, s) = from_raw(x, level, l, channels)?;
            (d, v, s, InputForm::FromRaw)
        }
        (Some(_), Some(_)) => return Err(Error::invalid("give either previous features or raw data, not both")),
        (None, None) => return Err(Error::invalid("give previous features or raw data")),
    };
    let tensor = Tensor3::new(valid.len(), channels, l, data)?;
    let means = level_mean(&tensor, &valid)?;
    Ok(LevelInput {
        level,
        form,
        tensor,
        valid,
        sample_of,
        means,
    })
}

type Assembled<T> = (Vec<T>, Vec<usize>, Vec<usize>);

fn from_raw<T: Scalar>(x: &SeriesBatch, level: Resolution, l: usize, channels: usize) -> Result<Assembled<T>> {
    if x.channels() != 1 {
        return Err(Error::dim(format!("steady-state data must have 1 channel, got {}", x.channels())));
    }
    let t = x.len();
    let padded_month = level == Resolution::Monthly && t <= l;
    if t % l != 0 && !padded_month {
        return Err(Error::invalid(format!(
            "{t}-point {} windows do not split into {level} segments of {l}",
            x.resolution
        )));
    }
    let per_sample = if padded_month { 1 } else { t / l };
    let n = x.n_samples() * per_sample;
    let mut data = vec![T::zero(); n * channels * l];
    let mut valid = Vec::with_capacity(n);
    let mut sample_of = Vec::with_capacity(n);
    for i in 0..x.n_samples() {
        let window = x.sample(i);
        for s in 0..per_sample {
            let seg = i * per_sample + s;
            let take = if padded_month { x.valid(i).min(t) } else { l };
            let base = seg * channels * l + (channels - 1) * l;
            for (dst, &v) in data[base..base + take].iter_mut().zip(&window[s * l..s * l + take]) {
                *dst = T::of(v);
            }
            valid.push(take);
            sample_of.push(i);
        }
    }
    Ok((data, valid, sample_of))
}

fn from_features<T: Scalar>(f: &FeatureSet<T>, l: usize, channels: usize) -> Result<Assembled<T>> {
    let n_rows = f.rows.rows();
    if f.rows.cols() + 1 != channels {
        return Err(Error::dim(format!(
            "{}-dimensional features cannot fill {channels} channels",
            f.rows.cols()
        )));
    }
    if n_rows == 0 {
        return Err(Error::Empty("feature set".into()));
    }
    // consecutive runs of rows from the same window
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &s in &f.sample_of {
        match runs.last_mut() {
            Some((sample, len)) if *sample == s => *len += 1,
            _ => runs.push((s, 1)),
        }
    }
    let groups: Vec<(usize, usize)> = if runs.iter().all(|&(_, len)| len % l == 0) {
        let mut g = Vec::new();
        let mut start = 0;
        for &(sample, len) in &runs {
            for k in 0..len / l {
                g.push((start + k * l, sample));
            }
            start += len;
        }
        g
    } else if runs.iter().all(|&(_, len)| len == 1) && n_rows % l == 0 {
        (0..n_rows / l).map(|k| (k * l, k)).collect()
    } else {
        return Err(Error::invalid(format!(
            "{} feature rows do not group into whole segments of {l}; windows are shorter than one unit of the next level",
            f.resolution
        )));
    };
    let d = f.rows.cols();
    let mut data = vec![T::zero(); groups.len() * channels * l];
    for (g, &(start, _)) in groups.iter().enumerate() {
        let base = g * channels * l;
        for p in 0..l {
            let row = f.rows.row(start + p);
            for c in 0..d {
                data[base + c * l + p] = row[c];
            }
            data[base + d * l + p] = f.means[start + p];
        }
    }
    Ok((data, vec![l; groups.len()], groups.iter().map(|&(_, s)| s).collect()))
}
