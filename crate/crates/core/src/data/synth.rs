//! Seeded stand-ins for solar, wind, load and EV-station series, and for
//! 3-channel transient event recordings.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::resample::aggregate;
use super::{normalize, NightWindow, Normalization, Resolution, SeriesBatch};
use crate::error::{Error, Result};

const STEPS_PER_DAY: usize = 288;
/// Days per month of a non-leap year, used to group daily values.
const MONTH_DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Solar,
    Wind,
    Load,
    Ev,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [SourceKind::Solar, SourceKind::Wind, SourceKind::Load, SourceKind::Ev];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Solar => "solar",
            SourceKind::Wind => "wind",
            SourceKind::Load => "load",
            SourceKind::Ev => "ev",
        }
    }

    fn salt(self) -> u64 {
        match self {
            SourceKind::Solar => 0x501a,
            SourceKind::Wind => 0x3171,
            SourceKind::Load => 0x10ad,
            SourceKind::Ev => 0xe7e7,
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown source kind '{s}' (expected solar, wind, load or ev)")))
    }
}

fn rng_for(kind_salt: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ kind_salt)
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((hour - center) / width).powi(2)).exp()
}

fn hour_of(step: usize) -> f64 {
    step as f64 * 5.0 / 60.0
}

fn solar_day(rng: &mut ChaCha8Rng, day: usize) -> Vec<f64> {
    let season = (2.0 * PI * day as f64 / 365.0).cos();
    let rise = (6.2 + 0.7 * season + rng.random_range(-0.3..0.3)).max(5.5);
    let set = (18.8 - 0.7 * season + rng.random_range(-0.3..0.3)).min(20.5);
    let cloudiness: f64 = rng.random_range(0.0..0.7);
    let shock = Normal::<f64>::new(0.0, 0.03).expect("valid normal");
    let mut cloud = rng.random_range(0.0..1.0);
    (0..STEPS_PER_DAY)
        .map(|s| {
            cloud = (0.95 * cloud + shock.sample(rng)).clamp(0.0, 1.0);
            let h = hour_of(s);
            if h <= rise || h >= set {
                return 0.0;
            }
            let clear = (PI * (h - rise) / (set - rise)).sin();
            clear * (1.0 - cloudiness * cloud).max(0.05)
        })
        .collect()
}

struct WindState {
    level: f64,
}

fn wind_day(rng: &mut ChaCha8Rng, state: &mut WindState) -> Vec<f64> {
    let shock = Normal::new(0.0, 0.02).expect("valid normal");
    let gust = Normal::new(0.0, 0.04).expect("valid normal");
    let phase: f64 = rng.random_range(-1.5..1.5);
    (0..STEPS_PER_DAY)
        .map(|s| {
            state.level = (0.99 * state.level + 0.01 * 0.45 + shock.sample(rng)).clamp(0.0, 1.0);
            let diurnal = 0.25 * (1.0 + (2.0 * PI * (hour_of(s) - 3.0 - phase) / 24.0).cos());
            (state.level + diurnal + gust.sample(rng)).max(0.0)
        })
        .collect()
}

fn load_day(rng: &mut ChaCha8Rng, day: usize) -> Vec<f64> {
    let weekend = day % 7 >= 5;
    let season = 1.0 + 0.1 * (2.0 * PI * day as f64 / 365.0).cos();
    let morning = rng.random_range(7.0..8.5);
    let evening = rng.random_range(18.0..20.0);
    let shock = Normal::new(0.0, 0.015).expect("valid normal");
    let white = Normal::new(0.0, 0.008).expect("valid normal");
    let mut ar = 0.0;
    (0..STEPS_PER_DAY)
        .map(|s| {
            let h = hour_of(s);
            let shape = if weekend {
                0.45 + 0.25 * bump(h, 11.0, 3.0) + 0.35 * bump(h, evening + 0.5, 2.0)
            } else {
                0.4 + 0.35 * bump(h, morning, 1.3) + 0.5 * bump(h, evening, 1.8)
            };
            ar = 0.9 * ar + shock.sample(rng);
            (season * shape + ar + white.sample(rng)).max(0.0)
        })
        .collect()
}

fn ev_day(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sessions = Poisson::new(14.0).expect("valid poisson").sample(rng) as usize;
    let evening = Normal::new(18.5, 1.5).expect("valid normal");
    let midday = Normal::new(12.5, 2.0).expect("valid normal");
    let mut day = vec![0.02; STEPS_PER_DAY];
    for _ in 0..sessions {
        let start: f64 = if rng.random_bool(0.7) {
            evening.sample(rng)
        } else {
            midday.sample(rng)
        };
        let duration: f64 = rng.random_range(1.0..4.0);
        let power: f64 = rng.random_range(0.5..1.0);
        for (s, v) in day.iter_mut().enumerate() {
            let h = hour_of(s);
            if h >= start && h < start + duration {
                *v += power;
            }
        }
    }
    day
}

/// `days` consecutive 5-minute days of one source, per-day max-normalized.
fn five_min_days(kind: SourceKind, days: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(kind.salt(), seed);
    let mut wind = WindState {
        level: rng.random_range(0.2..0.7),
    };
    (0..days)
        .map(|d| match kind {
            SourceKind::Solar => solar_day(&mut rng, d),
            SourceKind::Wind => wind_day(&mut rng, &mut wind),
            SourceKind::Load => load_day(&mut rng, d),
            SourceKind::Ev => ev_day(&mut rng),
        })
        .collect()
}

/// A seeded batch of `days` windows of one source category.
///
/// Sub-daily resolutions give one window per day (5-minute data averaged
/// down for coarser steps). Daily resolution gives one window per calendar
/// month of daily means, zero-padded to 31 with the true length recorded.
/// Values are normalized per window to `[0, 1]`.
pub fn synth_series(kind: SourceKind, days: usize, resolution: Resolution, seed: u64) -> Result<SeriesBatch> {
    if days == 0 {
        return Err(Error::invalid("need at least one day"));
    }
    let raw = five_min_days(kind, days, seed);
    let mut batch = SeriesBatch::from_windows(Resolution::FiveMin, &raw)?;
    normalize(&mut batch, Normalization::PerSample);
    let mut batch = match resolution {
        Resolution::FiveMin => batch,
        Resolution::TenMin | Resolution::Hourly => aggregate(&batch, resolution)?,
        Resolution::Daily => daily_months(&batch)?,
        other => return Err(Error::invalid(format!("cannot generate {other} series"))),
    };
    if resolution != Resolution::FiveMin {
        normalize(&mut batch, Normalization::PerSample);
    }
    batch.source = Some(kind.as_str().to_string());
    if kind == SourceKind::Solar {
        batch.night_window = Some(NightWindow::default());
    }
    Ok(batch)
}

fn daily_months(five_min: &SeriesBatch) -> Result<SeriesBatch> {
    let means: Vec<f64> = five_min.samples().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect();
    let mut windows = Vec::new();
    let mut valid = Vec::new();
    let mut start = 0;
    for &days in MONTH_DAYS.iter().cycle() {
        if start >= means.len() {
            break;
        }
        let end = (start + days).min(means.len());
        let mut w = means[start..end].to_vec();
        valid.push(w.len());
        w.resize(31, 0.0);
        windows.push(w);
        start = end;
    }
    SeriesBatch::from_windows(Resolution::Daily, &windows)?.with_valid_len(valid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    None,
    Sag,
    Swell,
    FrequencyDip,
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FaultKind::None),
            "sag" => Ok(FaultKind::Sag),
            "swell" => Ok(FaultKind::Swell),
            "frequency_dip" => Ok(FaultKind::FrequencyDip),
            _ => Err(Error::invalid(format!(
                "unknown fault kind '{s}' (expected none, sag, swell or frequency_dip)"
            ))),
        }
    }
}

/// Transient recordings with their supervision labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientSet {
    /// `(n, 3, 960)`: voltage magnitude, phase angle, frequency in per-unit.
    pub batch: SeriesBatch,
    /// Class vocabulary; `labels` index into it.
    pub classes: Vec<FaultKind>,
    pub labels: Vec<usize>,
    pub min_amplitude: Vec<f64>,
    pub max_amplitude: Vec<f64>,
}

pub const TRANSIENT_LEN: usize = 960;

/// Ramp of `edge` samples into and out of an event spanning `[start, end)`.
fn envelope(t: usize, start: usize, end: usize, edge: usize) -> f64 {
    if t < start || t >= end {
        0.0
    } else {
        let rise = (t - start + 1) as f64 / edge as f64;
        let fall = (end - t) as f64 / edge as f64;
        rise.min(fall).min(1.0)
    }
}

/// `n` seeded 8-second 120 Hz recordings, each with one event drawn
/// uniformly from `fault_mix`.
pub fn synth_transient(n: usize, seed: u64, fault_mix: &[FaultKind]) -> Result<TransientSet> {
    if fault_mix.is_empty() {
        return Err(Error::invalid("fault mix is empty"));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one transient sample"));
    }
    let mut classes = fault_mix.to_vec();
    classes.sort();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a45_13e7);
    let noise = Normal::new(0.0, 0.002).expect("valid normal");
    let mut data = Vec::with_capacity(n * 3 * TRANSIENT_LEN);
    let (mut labels, mut min_amp, mut max_amp) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let kind = fault_mix[rng.random_range(0..fault_mix.len())];
        let start = rng.random_range(120..600);
        let end = start + rng.random_range(60..300);
        let (mag_shift, ang_shift, freq_shift) = match kind {
            FaultKind::None => (0.0, 0.0, 0.0),
            FaultKind::Sag => (-rng.random_range(0.1..0.5), -rng.random_range(0.05..0.2), 0.0),
            FaultKind::Swell => (rng.random_range(0.1..0.4), rng.random_range(0.02..0.1), 0.0),
            FaultKind::FrequencyDip => (-rng.random_range(0.01..0.05), 0.0, -rng.random_range(0.01..0.03)),
        };
        let mut channels = [vec![0.0; TRANSIENT_LEN], vec![0.0; TRANSIENT_LEN], vec![0.0; TRANSIENT_LEN]];
        for t in 0..TRANSIENT_LEN {
            let e = envelope(t, start, end, 6);
            // frequency recovers slowly after the dip
            let f = if kind == FaultKind::FrequencyDip && t >= end {
                (-((t - end) as f64) / 60.0).exp()
            } else {
                e
            };
            channels[0][t] = (1.0 + mag_shift * e + noise.sample(&mut rng)).clamp(0.0, 1.5);
            channels[1][t] = (1.0 + ang_shift * e + noise.sample(&mut rng)).clamp(0.0, 1.5);
            channels[2][t] = (1.0 + freq_shift * f + 0.25 * noise.sample(&mut rng)).clamp(0.0, 1.5);
        }
        min_amp.push(channels[0].iter().copied().fold(f64::INFINITY, f64::min));
        max_amp.push(channels[0].iter().copied().fold(f64::NEG_INFINITY, f64::max));
        labels.push(classes.binary_search(&kind).expect("kind drawn from mix"));
        data.extend(channels.concat());
    }
    let mut batch = SeriesBatch::new(Resolution::Transient, 3, TRANSIENT_LEN, data)?;
    batch.source = Some("transient".into());
    Ok(TransientSet {
        batch,
        classes,
        labels,
        min_amplitude: min_amp,
        max_amplitude: max_amp,
    })
}
