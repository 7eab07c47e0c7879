//! Seeded perturbations of a [`SeriesBatch`] and the ramp-rate labeler.
//!
//! Every disturbance acts on each (window, channel) row over the window's
//! unpadded prefix, draws from one `ChaCha8Rng` seeded with `seed` in row
//! order, and returns an exact copy of its input at level zero.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SeriesBatch;
use crate::error::{Error, Result};
use crate::linalg::{batch_cov, batch_mean, cholesky, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    GaussianNoise,
    MissingData,
    Contamination,
    GaussianSmooth,
    ErrorAccumulate,
    TimeShift,
    PeriodOffset,
    NighttimeViolation,
    MomentMatchedFabricate,
}

impl DisturbanceKind {
    pub const ALL: [DisturbanceKind; 9] = [
        DisturbanceKind::GaussianNoise,
        DisturbanceKind::MissingData,
        DisturbanceKind::Contamination,
        DisturbanceKind::GaussianSmooth,
        DisturbanceKind::ErrorAccumulate,
        DisturbanceKind::TimeShift,
        DisturbanceKind::PeriodOffset,
        DisturbanceKind::NighttimeViolation,
        DisturbanceKind::MomentMatchedFabricate,
    ];

    /// The six kinds of the progressive-disturbance benchmark.
    pub const FIG2: [DisturbanceKind; 6] = [
        DisturbanceKind::GaussianNoise,
        DisturbanceKind::MissingData,
        DisturbanceKind::Contamination,
        DisturbanceKind::GaussianSmooth,
        DisturbanceKind::ErrorAccumulate,
        DisturbanceKind::TimeShift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DisturbanceKind::GaussianNoise => "gaussian_noise",
            DisturbanceKind::MissingData => "missing_data",
            DisturbanceKind::Contamination => "contamination",
            DisturbanceKind::GaussianSmooth => "gaussian_smooth",
            DisturbanceKind::ErrorAccumulate => "error_accumulate",
            DisturbanceKind::TimeShift => "time_shift",
            DisturbanceKind::PeriodOffset => "period_offset",
            DisturbanceKind::NighttimeViolation => "nighttime_violation",
            DisturbanceKind::MomentMatchedFabricate => "moment_matched_fabricate",
        }
    }

    /// Levels of the `fig2` preset, lowest first.
    pub fn fig2_grid(self) -> Option<&'static [f64]> {
        match self {
            DisturbanceKind::GaussianNoise => Some(&[0.0, 0.16, 1.6, 4.0]),
            DisturbanceKind::MissingData => Some(&[0.0, 0.1, 0.25, 0.5]),
            DisturbanceKind::Contamination => Some(&[0.0, 0.25, 0.5, 0.75]),
            DisturbanceKind::GaussianSmooth => Some(&[0.0, 10.0, 20.0, 30.0]),
            DisturbanceKind::ErrorAccumulate => Some(&[0.0, 0.005, 0.01, 0.03]),
            DisturbanceKind::TimeShift => Some(&[0.0, 40.0, 60.0, 80.0]),
            _ => None,
        }
    }

    /// Rejects levels outside the kind's domain. Shift bounds that depend
    /// on the window length are checked when the disturbance is applied.
    pub fn check_level(self, alpha: f64) -> Result<()> {
        let name = self.as_str();
        match self {
            DisturbanceKind::MissingData | DisturbanceKind::Contamination => check_level(name, alpha, Some(1.0)),
            DisturbanceKind::TimeShift | DisturbanceKind::NighttimeViolation => whole(self, alpha).map(|_| ()),
            DisturbanceKind::MomentMatchedFabricate if alpha == 0.0 || alpha == 1.0 => Ok(()),
            DisturbanceKind::MomentMatchedFabricate => Err(Error::invalid(format!(
                "{name} level is 0 (original data) or 1 (fabricated), got {alpha}"
            ))),
            _ => check_level(name, alpha, None),
        }
    }

    /// Levels of the solar physical-plausibility probes, in hours.
    pub fn solar_grid(self) -> Option<&'static [f64]> {
        match self {
            DisturbanceKind::PeriodOffset => Some(&[0.0, 2.0, 4.0]),
            DisturbanceKind::NighttimeViolation => Some(&[0.0, 2.0, 3.0]),
            _ => None,
        }
    }
}

impl fmt::Display for DisturbanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisturbanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "missing" {
            return Ok(Self::MissingData);
        }
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                Error::invalid(format!("unknown disturbance '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// What contamination replaces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationMode {
    /// Whole windows.
    #[default]
    Sample,
    /// Individual positions within each window.
    Point,
}

fn check_level(name: &str, alpha: f64, max: Option<f64>) -> Result<()> {
    let ok = alpha.is_finite() && alpha >= 0.0 && max.is_none_or(|m| alpha <= m);
    if ok {
        Ok(())
    } else {
        let range = max.map_or("[0, inf)".to_string(), |m| format!("[0, {m}]"));
        Err(Error::invalid(format!("{name} level {alpha} is outside {range}")))
    }
}

/// Calls `f` on the unpadded prefix of every (window, channel) row.
fn for_each_row(x: &mut SeriesBatch, mut f: impl FnMut(&mut [f64]) -> Result<()>) -> Result<()> {
    let (c, t) = (x.channels(), x.len());
    let valid: Vec<usize> = (0..x.n_samples()).map(|i| x.valid(i)).collect();
    for (sample, v) in x.samples_mut().zip(valid) {
        for ch in 0..c {
            f(&mut sample[ch * t..ch * t + v])?;
        }
    }
    Ok(())
}

/// Adds i.i.d. `N(0, alpha)` noise; `alpha` is the variance.
pub fn gaussian_noise(x: &SeriesBatch, alpha: f64, seed: u64) -> Result<SeriesBatch> {
    check_level("gaussian_noise", alpha, None)?;
    let mut out = x.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, alpha.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    for_each_row(&mut out, |row| {
        for v in row {
            *v += noise.sample(&mut rng);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Zeroes exactly `⌊alpha·T⌋` distinct positions of every row.
pub fn missing_data(x: &SeriesBatch, alpha: f64, seed: u64) -> Result<SeriesBatch> {
    check_level("missing_data", alpha, Some(1.0))?;
    let mut out = x.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for_each_row(&mut out, |row| {
        let k = (alpha * row.len() as f64).floor() as usize;
        for i in sample_indices(&mut rng, row.len(), k) {
            row[i] = 0.0;
        }
        Ok(())
    })?;
    Ok(out)
}

/// Replaces `⌊alpha·N⌋` windows of `x` (or, in point mode, `⌊alpha·T⌋`
/// positions of every row) with the corresponding windows or positions of
/// `y`.
pub fn contamination(
    x: &SeriesBatch,
    y: &SeriesBatch,
    alpha: f64,
    seed: u64,
    mode: ContaminationMode,
) -> Result<SeriesBatch> {
    check_level("contamination", alpha, Some(1.0))?;
    if y.channels() != x.channels() || y.len() != x.len() {
        return Err(Error::dim(format!(
            "contaminating data has {}x{} windows, target has {}x{}",
            y.channels(),
            y.len(),
            x.channels(),
            x.len()
        )));
    }
    let mut out = x.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    if y.is_empty() {
        return Err(Error::Empty("contaminating data has no windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.n_samples();
    match mode {
        ContaminationMode::Sample => {
            let k = (alpha * n as f64).floor() as usize;
            let targets = sample_indices(&mut rng, n, k).into_vec();
            // draw distinct donor windows when there are enough of them
            let donors: Vec<usize> = if y.n_samples() >= k {
                sample_indices(&mut rng, y.n_samples(), k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..y.n_samples())).collect()
            };
            for (&i, &j) in targets.iter().zip(&donors) {
                out.sample_mut(i).copy_from_slice(y.sample(j));
                if let Some(v) = out.valid_len.as_mut() {
                    v[i] = y.valid(j);
                }
            }
        }
        ContaminationMode::Point => {
            let (c, t) = (x.channels(), x.len());
            for i in 0..n {
                let donor = y.sample(i % y.n_samples());
                let valid = x.valid(i).min(y.valid(i % y.n_samples()));
                let k = (alpha * valid as f64).floor() as usize;
                let sample = out.sample_mut(i);
                for ch in 0..c {
                    for p in sample_indices(&mut rng, valid, k) {
                        sample[ch * t + p] = donor[ch * t + p];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Normalized Gaussian kernel with standard deviation `sigma`, truncated at
/// `⌈4σ⌉` taps on each side.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Index into a row extended by mirror images `… c b a | a b c … | c b a …`.
fn reflect(i: i64, n: i64) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Gaussian filter with standard deviation `alpha` positions.
pub fn gaussian_smooth(x: &SeriesBatch, alpha: f64) -> Result<SeriesBatch> {
    check_level("gaussian_smooth", alpha, None)?;
    let mut out = x.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    let kernel = gaussian_kernel(alpha);
    let radius = (kernel.len() / 2) as i64;
    for_each_row(&mut out, |row| {
        let n = row.len() as i64;
        let src = row.to_vec();
        for (i, dst) in row.iter_mut().enumerate() {
            *dst = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * src[reflect(i as i64 + k as i64 - radius, n)])
                .sum();
        }
        Ok(())
    })?;
    Ok(out)
}

/// Cumulative factors `E_0 = 1`, `E_t = E_{t−1}·ε_t` with `ε_t ~ N(1, alpha)`
/// (`alpha` is the standard deviation). Draws `len − 1` values from `rng`.
pub fn accumulation_factors<R: Rng + ?Sized>(len: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let mut e = 1.0;
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            let z: f64 = StandardNormal.sample(rng);
            e *= 1.0 + alpha * z;
        }
        out.push(e);
    }
    out
}

/// Multiplies each row by its own multiplicative random walk.
pub fn error_accumulate(x: &SeriesBatch, alpha: f64, seed: u64) -> Result<SeriesBatch> {
    check_level("error_accumulate", alpha, None)?;
    let mut out = x.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for_each_row(&mut out, |row| {
        let e = accumulation_factors(row.len(), alpha, &mut rng);
        for (v, f) in row.iter_mut().zip(e) {
            *v *= f;
        }
        Ok(())
    })?;
    Ok(out)
}

/// Circular forward shift: position `i` moves to `(i + alpha) mod T`.
pub fn time_shift(x: &SeriesBatch, alpha: usize) -> Result<SeriesBatch> {
    let mut out = x.clone();
    for_each_row(&mut out, |row| {
        if alpha >= row.len() {
            return Err(Error::invalid(format!(
                "shift of {alpha} is not smaller than the {}-point window",
                row.len()
            )));
        }
        row.rotate_right(alpha);
        Ok(())
    })?;
    Ok(out)
}

/// Shifts a series by `hours` of clock time.
pub fn period_offset(x: &SeriesBatch, hours: f64) -> Result<SeriesBatch> {
    check_level("period_offset", hours, None)?;
    let steps = hours * x.resolution.intervals_per_hour()? as f64;
    if steps.fract() != 0.0 {
        return Err(Error::invalid(format!(
            "{hours} h is not a whole number of {} intervals",
            x.resolution
        )));
    }
    time_shift(x, steps as usize)
}

/// Forces `hours` contiguous night hours of every day to positive output:
/// each affected point becomes a uniform 0.2–0.8 fraction of the window's
/// peak. The block's start is drawn uniformly within the night window.
pub fn nighttime_violation(x: &SeriesBatch, hours: usize, seed: u64) -> Result<SeriesBatch> {
    let night = x.night_window.unwrap_or_default();
    if hours > night.hours() as usize {
        return Err(Error::invalid(format!(
            "{hours} violation hours exceed the {}-hour night window",
            night.hours()
        )));
    }
    let mut out = x.clone();
    if hours == 0 {
        return Ok(out);
    }
    let per_day = x
        .resolution
        .points_per_day()
        .ok_or_else(|| Error::invalid(format!("{} data has no time of day", x.resolution)))?;
    let per_hour = x.resolution.intervals_per_hour()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for_each_row(&mut out, |row| {
        if row.len() % per_day != 0 {
            return Err(Error::invalid(format!(
                "{}-point window is not a whole number of {per_day}-point days",
                row.len()
            )));
        }
        let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::invalid("window has no positive output to scale the violation by"));
        }
        for day in row.chunks_exact_mut(per_day) {
            let start_hour = night.start_hour as usize + rng.random_range(0..=night.hours() as usize - hours);
            for k in 0..hours * per_hour {
                let pos = (start_hour * per_hour + k) % per_day;
                day[pos] = rng.random_range(0.2..=0.8) * peak;
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Output of [`moment_matched_fabricate`].
#[derive(Clone, Debug)]
pub struct Fabricated {
    pub batch: SeriesBatch,
    /// Ridge added to the covariance diagonal when it was not positive
    /// definite.
    pub regularization: Option<f64>,
}

/// Draws as many windows as `x` has from the Gaussian with the mean and
/// covariance of its raw windows.
pub fn moment_matched_fabricate(x: &SeriesBatch, seed: u64) -> Result<Fabricated> {
    let m: Matrix<f64> = x.to_matrix();
    let d = m.cols();
    if m.rows() < d + 1 {
        return Err(Error::invalid(format!(
            "need at least {} windows to estimate a {d}-dimensional covariance, got {}",
            d + 1,
            m.rows()
        )));
    }
    let mean = batch_mean(&m)?;
    let cov = batch_cov(&m)?;
    let (l, regularization) = match cholesky(&cov) {
        Some(l) => (l, None),
        None => {
            let ridge = 1e-8 * cov.trace().max(f64::MIN_POSITIVE);
            let mut reg = cov.clone();
            reg.add_to_diag(ridge);
            let l = cholesky(&reg).ok_or(Error::Singular)?;
            (l, Some(ridge))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(m.rows() * d);
    for _ in 0..m.rows() {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..d {
            let lz: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            data.push(mean[i] + lz);
        }
    }
    let mut batch = x.with_data(data)?;
    batch.valid_len = None;
    Ok(Fabricated { batch, regularization })
}

/// One disturbance with its level and seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub alpha: f64,
    pub seed: u64,
}

fn whole(kind: DisturbanceKind, alpha: f64) -> Result<usize> {
    if alpha >= 0.0 && alpha.fract() == 0.0 && alpha.is_finite() {
        Ok(alpha as usize)
    } else {
        Err(Error::invalid(format!("{kind} level must be a whole number, got {alpha}")))
    }
}

impl Disturbance {
    pub fn new(kind: DisturbanceKind, alpha: f64, seed: u64) -> Self {
        Self { kind, alpha, seed }
    }

    /// Applies the disturbance. `aux` is the contaminating data and is
    /// required only for contamination.
    pub fn apply(&self, x: &SeriesBatch, aux: Option<&SeriesBatch>, mode: ContaminationMode) -> Result<SeriesBatch> {
        let (a, s) = (self.alpha, self.seed);
        match self.kind {
            DisturbanceKind::GaussianNoise => gaussian_noise(x, a, s),
            DisturbanceKind::MissingData => missing_data(x, a, s),
            DisturbanceKind::Contamination => {
                let y = aux.ok_or_else(|| Error::invalid("contamination needs a second dataset"))?;
                contamination(x, y, a, s, mode)
            }
            DisturbanceKind::GaussianSmooth => gaussian_smooth(x, a),
            DisturbanceKind::ErrorAccumulate => error_accumulate(x, a, s),
            DisturbanceKind::TimeShift => time_shift(x, whole(self.kind, a)?),
            DisturbanceKind::PeriodOffset => period_offset(x, a),
            DisturbanceKind::NighttimeViolation => nighttime_violation(x, whole(self.kind, a)?, s),
            DisturbanceKind::MomentMatchedFabricate => {
                self.kind.check_level(a)?;
                if a == 0.0 {
                    return Ok(x.clone());
                }
                Ok(moment_matched_fabricate(x, s)?.batch)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampCategory {
    StrongDown,
    ModerateDown,
    MildDown,
    Neutral,
    MildUp,
    ModerateUp,
    StrongUp,
}

impl RampCategory {
    pub const ALL: [RampCategory; 7] = [
        RampCategory::StrongDown,
        RampCategory::ModerateDown,
        RampCategory::MildDown,
        RampCategory::Neutral,
        RampCategory::MildUp,
        RampCategory::ModerateUp,
        RampCategory::StrongUp,
    ];
}

/// Threshold set used to categorize ramp rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RampScenario {
    One,
    Two,
}

impl RampScenario {
    /// Mild, moderate and strong magnitude thresholds.
    pub fn thresholds(self) -> [f64; 3] {
        match self {
            RampScenario::One => [0.25, 0.33, 0.50],
            RampScenario::Two => [0.10, 0.20, 0.30],
        }
    }
}

impl FromStr for RampScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(RampScenario::One),
            "2" => Ok(RampScenario::Two),
            _ => Err(Error::invalid(format!("ramp scenario must be 1 or 2, got '{s}'"))),
        }
    }
}

/// Neutral is closed on both sides; down-ramp bins are closed below and up-ramp
/// bins closed above.
pub fn classify_ramp(r: f64, scenario: RampScenario) -> Result<RampCategory> {
    if !r.is_finite() {
        return Err(Error::NonFinite(format!("ramp rate {r}")));
    }
    let [mild, moderate, strong] = scenario.thresholds();
    Ok(if r < -strong {
        RampCategory::StrongDown
    } else if r < -moderate {
        RampCategory::ModerateDown
    } else if r < -mild {
        RampCategory::MildDown
    } else if r <= mild {
        RampCategory::Neutral
    } else if r <= moderate {
        RampCategory::MildUp
    } else if r <= strong {
        RampCategory::ModerateUp
    } else {
        RampCategory::StrongUp
    })
}

/// `(P_last − P_first) / p_max` over a six-point hourly window of 10-minute
/// values.
pub fn ramp_rate(window: &[f64], p_max: f64) -> Result<f64> {
    if window.len() != 6 {
        return Err(Error::dim(format!("ramp window needs 6 values, got {}", window.len())));
    }
    if !(p_max > 0.0) {
        return Err(Error::invalid(format!("rated power must be positive, got {p_max}")));
    }
    Ok((window[5] - window[0]) / p_max)
}

pub fn ramp_label(window: &[f64], p_max: f64, scenario: RampScenario) -> Result<RampCategory> {
    classify_ramp(ramp_rate(window, p_max)?, scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Resolution;

    fn batch(values: Vec<Vec<f64>>) -> SeriesBatch {
        SeriesBatch::from_windows(Resolution::FiveMin, &values).unwrap()
    }

    #[test]
    fn shift_hand_case() {
        let x = batch(vec![vec![1.0, 2.0, 3.0]]);
        assert_eq!(time_shift(&x, 1).unwrap().as_slice(), &[3.0, 1.0, 2.0]);
        assert!(time_shift(&x, 3).is_err());
    }

    #[test]
    fn impulse_gives_kernel() {
        let mut row = vec![0.0; 41];
        row[20] = 1.0;
        let out = gaussian_smooth(&batch(vec![row]), 2.0).unwrap();
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 17);
        for (i, w) in k.iter().enumerate() {
            assert!((out.as_slice()[12 + i] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-3..6).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 2, 1, 0]);
    }

    #[test]
    fn period_offset_steps() {
        let x = batch(vec![(0..288).map(f64::from).collect()]);
        let y = period_offset(&x, 2.0).unwrap();
        assert_eq!(y.as_slice()[24], 0.0);
        assert!(period_offset(&x, 0.01).is_err());
    }

    #[test]
    fn violation_hits_night_only() {
        let row: Vec<f64> = (0..288)
            .map(|i| if (72..216).contains(&i) { 1.0 } else { 0.0 })
            .collect();
        let x = batch(vec![row.clone(), row]);
        let y = nighttime_violation(&x, 3, 4).unwrap();
        for s in 0..2 {
            let changed: Vec<usize> = (0..288).filter(|&i| y.sample(s)[i] != x.sample(s)[i]).collect();
            assert_eq!(changed.len(), 36);
            assert!(changed.iter().all(|&i| i < 60 || i >= 264));
            assert!(changed.iter().all(|&i| (0.2..=0.8).contains(&y.sample(s)[i])));
        }
        assert!(nighttime_violation(&x, 8, 4).is_err());
    }

    #[test]
    fn fabricate_regularizes_degenerate_windows() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![0.0, i as f64, (i * i) as f64 % 7.0]).collect();
        let f = moment_matched_fabricate(&batch(rows), 1).unwrap();
        assert!(f.regularization.is_some());
        assert_eq!(f.batch.n_samples(), 10);
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(classify_ramp(0.6, RampScenario::One).unwrap(), RampCategory::StrongUp);
        assert_eq!(classify_ramp(0.0, RampScenario::Two).unwrap(), RampCategory::Neutral);
        assert_eq!(classify_ramp(-0.25, RampScenario::Two).unwrap(), RampCategory::ModerateDown);
        assert_eq!(classify_ramp(-0.25, RampScenario::One).unwrap(), RampCategory::Neutral);
        assert_eq!(classify_ramp(0.5, RampScenario::One).unwrap(), RampCategory::ModerateUp);
        assert_eq!(
            ramp_label(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.25], 1.0, RampScenario::Two).unwrap(),
            RampCategory::ModerateUp
        );
        assert!(ramp_rate(&[0.0; 6], 0.0).is_err());
        assert!(ramp_rate(&[0.0; 5], 1.0).is_err());
    }
}
