//! Time-series containers, ingestion, generators and model persistence.

pub mod artifact;
pub mod csv_io;
pub mod resample;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use artifact::{load_stack, save_stack, ARTIFACT_MAGIC, ARTIFACT_VERSION};
pub use csv_io::{load_csv, write_csv, DatasetManifest, LoadReport};
pub use resample::{aggregate, resample};
pub use synth::{synth_series, synth_transient, FaultKind, SourceKind, TransientSet, TRANSIENT_LEN};

/// Sampling interval of a series, and the duration a feature summarizes.
///
/// Steady-state resolutions are ordered from finest to coarsest. `TenMin`
/// only exists for ingestion and resampling; it has no extractor level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "5min")]
    FiveMin,
    #[serde(rename = "10min")]
    TenMin,
    #[serde(rename = "hourly")]
    Hourly,
    #[serde(rename = "daily")]
    Daily,
    #[serde(rename = "monthly")]
    Monthly,
    #[serde(rename = "yearly")]
    Yearly,
    #[serde(rename = "transient")]
    Transient,
}

impl Resolution {
    pub const STEADY: [Resolution; 6] = [
        Resolution::FiveMin,
        Resolution::TenMin,
        Resolution::Hourly,
        Resolution::Daily,
        Resolution::Monthly,
        Resolution::Yearly,
    ];

    /// Extractor levels, named by the duration their features summarize.
    pub const LEVELS: [Resolution; 4] = [
        Resolution::Hourly,
        Resolution::Daily,
        Resolution::Monthly,
        Resolution::Yearly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::FiveMin => "5min",
            Resolution::TenMin => "10min",
            Resolution::Hourly => "hourly",
            Resolution::Daily => "daily",
            Resolution::Monthly => "monthly",
            Resolution::Yearly => "yearly",
            Resolution::Transient => "transient",
        }
    }

    pub fn is_level(self) -> bool {
        Self::LEVELS.contains(&self)
    }

    /// Resolution of the data consumed by the extractor level `self`.
    pub fn level_input(self) -> Result<Resolution> {
        match self {
            Resolution::Hourly => Ok(Resolution::FiveMin),
            Resolution::Daily => Ok(Resolution::Hourly),
            Resolution::Monthly => Ok(Resolution::Daily),
            Resolution::Yearly => Ok(Resolution::Monthly),
            other => Err(Error::invalid(format!("{other} is not an extractor level"))),
        }
    }

    /// The extractor level that consumes data at resolution `self`.
    pub fn consumer_level(self) -> Result<Resolution> {
        match self {
            Resolution::FiveMin => Ok(Resolution::Hourly),
            Resolution::Hourly => Ok(Resolution::Daily),
            Resolution::Daily => Ok(Resolution::Monthly),
            Resolution::Monthly => Ok(Resolution::Yearly),
            other => Err(Error::invalid(format!("no extractor level consumes {other} data"))),
        }
    }

    /// Segment length `L` of the input to level `self`: input points per
    /// emitted unit (months padded to 31 days).
    pub fn segment_len(self) -> Result<usize> {
        match self {
            Resolution::Hourly => Ok(12),
            Resolution::Daily => Ok(24),
            Resolution::Monthly => Ok(31),
            Resolution::Yearly => Ok(12),
            Resolution::Transient => Ok(960),
            other => Err(Error::invalid(format!("{other} is not an extractor level"))),
        }
    }

    /// Sampling interval in minutes for sub-daily resolutions.
    pub fn minutes(self) -> Option<u32> {
        match self {
            Resolution::FiveMin => Some(5),
            Resolution::TenMin => Some(10),
            Resolution::Hourly => Some(60),
            _ => None,
        }
    }

    pub fn intervals_per_hour(self) -> Result<usize> {
        self.minutes()
            .map(|m| (60 / m) as usize)
            .ok_or_else(|| Error::invalid(format!("{self} data has no intra-hour clock positions")))
    }

    pub fn points_per_day(self) -> Option<usize> {
        self.minutes().map(|m| (1440 / m) as usize)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "5min" | "5m" | "five_min" => Ok(Resolution::FiveMin),
            "10min" | "10m" | "ten_min" => Ok(Resolution::TenMin),
            "hourly" | "1h" | "hour" => Ok(Resolution::Hourly),
            "daily" | "1d" | "day" => Ok(Resolution::Daily),
            "monthly" | "month" => Ok(Resolution::Monthly),
            "yearly" | "year" => Ok(Resolution::Yearly),
            "transient" => Ok(Resolution::Transient),
            _ => Err(Error::invalid(format!(
                "unknown resolution '{s}' (expected 5min, 10min, hourly, daily, monthly, yearly or transient)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each window divided by its own maximum.
    #[default]
    PerSample,
    /// Every window divided by the dataset maximum.
    PerDataset,
    None,
}

/// Clock hours `[start, end)` regarded as night; wraps past midnight when
/// `start > end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightWindow {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for NightWindow {
    fn default() -> Self {
        Self {
            start_hour: 22,
            end_hour: 5,
        }
    }
}

impl NightWindow {
    pub fn new(start_hour: u32, end_hour: u32) -> Result<Self> {
        if start_hour >= 24 || end_hour >= 24 || start_hour == end_hour {
            return Err(Error::invalid(format!(
                "night window {start_hour}:00-{end_hour}:00 is not a proper sub-day interval"
            )));
        }
        Ok(Self { start_hour, end_hour })
    }

    pub fn hours(&self) -> u32 {
        (self.end_hour + 24 - self.start_hour) % 24
    }

    pub fn contains_minute(&self, minute_of_day: u32) -> bool {
        let h = (minute_of_day / 60) % 24;
        if self.start_hour < self.end_hour {
            (self.start_hour..self.end_hour).contains(&h)
        } else {
            h >= self.start_hour || h < self.end_hour
        }
    }
}

/// `N` windows of `T` points with `C` channels, stored sample-major then
/// channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesBatch {
    pub resolution: Resolution,
    channels: usize,
    len: usize,
    data: Vec<f64>,
    /// Source category, e.g. "solar".
    pub source: Option<String>,
    pub normalization: Normalization,
    pub night_window: Option<NightWindow>,
    /// Per-window count of real points when windows are zero-padded
    /// (calendar months at daily resolution).
    pub valid_len: Option<Vec<usize>>,
}

impl SeriesBatch {
    pub fn new(resolution: Resolution, channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(Error::Empty("series windows need at least one channel and point".into()));
        }
        if data.len() % (channels * len) != 0 {
            return Err(Error::dim(format!(
                "{} values do not form whole windows of {channels}x{len}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series value at flat index {i}")));
        }
        Ok(Self {
            resolution,
            channels,
            len,
            data,
            source: None,
            normalization: Normalization::None,
            night_window: None,
            valid_len: None,
        })
    }

    pub fn from_windows(resolution: Resolution, windows: &[Vec<f64>]) -> Result<Self> {
        let len = windows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Empty("no windows".into()))?;
        if let Some(w) = windows.iter().find(|w| w.len() != len) {
            return Err(Error::dim(format!("window of length {} among windows of length {len}", w.len())));
        }
        Self::new(resolution, 1, len, windows.concat())
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn with_valid_len(mut self, valid: Vec<usize>) -> Result<Self> {
        if valid.len() != self.n_samples() || valid.iter().any(|&v| v == 0 || v > self.len) {
            return Err(Error::invalid(format!(
                "valid lengths must be one per window within 1..={}",
                self.len
            )));
        }
        self.valid_len = Some(valid);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / (self.channels * self.len)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Points per window (`T`).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// All channels of window `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.channels * self.len;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.channels * self.len;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channels * self.len)
    }

    pub fn samples_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.data.chunks_exact_mut(self.channels * self.len)
    }

    pub fn valid(&self, i: usize) -> usize {
        self.valid_len.as_ref().map_or(self.len, |v| v[i])
    }

    /// A copy with the same metadata and new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.resolution, self.channels, self.len, data)?;
        out.source = self.source.clone();
        out.normalization = self.normalization;
        out.night_window = self.night_window;
        if self.valid_len.is_some() && out.n_samples() == self.n_samples() {
            out.valid_len = self.valid_len.clone();
        }
        Ok(out)
    }

    /// Windows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut out = self.with_data(data).expect("selected windows are valid");
        out.valid_len = self.valid_len.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        out
    }

    /// Windows of `self` followed by those of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.resolution != other.resolution || self.channels != other.channels || self.len != other.len {
            return Err(Error::dim(format!(
                "cannot concatenate {}x{} {} windows with {}x{} {} windows",
                self.channels, self.len, self.resolution, other.channels, other.len, other.resolution
            )));
        }
        let mut out = self.with_data([self.data.as_slice(), other.data.as_slice()].concat())?;
        out.valid_len = match (&self.valid_len, &other.valid_len) {
            (None, None) => None,
            _ => Some(
                (0..self.n_samples())
                    .map(|i| self.valid(i))
                    .chain((0..other.n_samples()).map(|i| other.valid(i)))
                    .collect(),
            ),
        };
        Ok(out)
    }

    /// One row per window, channels concatenated.
    pub fn to_matrix(&self) -> Matrix<f64> {
        Matrix::new(self.n_samples(), self.channels * self.len, self.data.clone()).expect("finite series")
    }

    /// SHA-256 over shape and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolution.as_str().as_bytes());
        h.update((self.channels as u64).to_le_bytes());
        h.update((self.len as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Divides every window by its maximum (per-sample) or by the batch
/// maximum (per-dataset). All-zero windows are left as they are.
pub fn normalize(batch: &mut SeriesBatch, mode: Normalization) {
    match mode {
        Normalization::None => {}
        Normalization::PerSample => {
            for w in batch.samples_mut() {
                let max = w.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                if max > 0.0 {
                    w.iter_mut().for_each(|v| *v /= max);
                }
            }
        }
        Normalization::PerDataset => {
            let max = batch.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if max > 0.0 {
                batch.data.iter_mut().for_each(|v| *v /= max);
            }
        }
    }
    batch.normalization = mode;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_names_round_trip() {
        for r in Resolution::STEADY.into_iter().chain([Resolution::Transient]) {
            assert_eq!(r.as_str().parse::<Resolution>().unwrap(), r);
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(json, format!("\"{}\"", r.as_str()));
        }
        assert!("weekly".parse::<Resolution>().is_err());
    }

    #[test]
    fn level_chain() {
        assert_eq!(Resolution::Hourly.level_input().unwrap(), Resolution::FiveMin);
        assert_eq!(Resolution::FiveMin.consumer_level().unwrap(), Resolution::Hourly);
        assert_eq!(Resolution::Monthly.segment_len().unwrap(), 31);
        assert!(Resolution::FiveMin < Resolution::Hourly && Resolution::Monthly < Resolution::Yearly);
        assert!(Resolution::TenMin.consumer_level().is_err());
    }

    #[test]
    fn night_window_wraps() {
        let w = NightWindow::default();
        assert_eq!(w.hours(), 7);
        assert!(w.contains_minute(23 * 60) && w.contains_minute(0) && w.contains_minute(4 * 60 + 55));
        assert!(!w.contains_minute(5 * 60) && !w.contains_minute(12 * 60));
        assert!(NightWindow::new(3, 3).is_err());
    }

    #[test]
    fn batch_shape_checks() {
        assert!(SeriesBatch::new(Resolution::Hourly, 1, 24, vec![0.0; 47]).is_err());
        assert!(SeriesBatch::new(Resolution::Hourly, 1, 2, vec![0.0, f64::NAN]).is_err());
        let b = SeriesBatch::new(Resolution::Hourly, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(b.n_samples(), 2);
        assert_eq!(b.select(&[1, 0]).as_slice(), &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(b.concat(&b).unwrap().n_samples(), 4);
    }

    #[test]
    fn per_sample_normalization() {
        let mut b = SeriesBatch::new(Resolution::Hourly, 1, 2, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        normalize(&mut b, Normalization::PerSample);
        assert_eq!(b.as_slice(), &[0.5, 1.0, 0.0, 0.0]);
    }
}
