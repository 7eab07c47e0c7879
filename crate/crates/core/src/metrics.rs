//! Distances between feature (or raw-window) distributions.
//!
//! Closed-form metrics work on [`GaussianEmbedding`]s fitted to feature rows.
//! Sample-based metrics (MMD, CRPS, energy score, MAPE) work on the rows
//! directly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{
    batch_cov, batch_mean, cholesky, cholesky_inverse, cholesky_log_det, cholesky_solve, cross_sqrt_trace, Matrix,
};
use crate::scalar::Scalar;

/// Mean and population covariance of a set of feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEmbedding<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
    pub n: usize,
}

impl<T: Scalar> GaussianEmbedding<T> {
    pub fn fit(z: &Matrix<T>) -> Result<Self> {
        if z.rows() < 2 {
            return Err(Error::Empty(format!(
                "fitting a Gaussian needs at least 2 rows, got {}",
                z.rows()
            )));
        }
        Ok(Self {
            mean: batch_mean(z)?,
            cov: batch_cov(z)?,
            n: z.rows(),
        })
    }

    pub fn from_moments(mean: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(Error::dim(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.rows(),
                cov.cols()
            )));
        }
        Ok(Self { mean, cov, n: 0 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_pair(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::dim(format!(
                "embeddings have dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Fréchet distance `‖m₁−m₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// Rounding can leave a result slightly below zero; values in `(−1e-8, 0)`
/// are reported as 0.
pub fn fpd<T: Scalar>(g1: &GaussianEmbedding<T>, g2: &GaussianEmbedding<T>) -> Result<T> {
    g1.check_pair(g2)?;
    let cross = cross_sqrt_trace(&g1.cov, &g2.cov)?;
    let value = sq_dist(&g1.mean, &g2.mean) + g1.cov.trace() + g2.cov.trace() - T::of(2.0) * cross;
    if value < T::zero() && value > T::of(-1e-8) {
        return Ok(T::zero());
    }
    Ok(value)
}

/// A divergence value together with the diagonal shift (if any) that was
/// needed to make the covariances invertible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergence<T> {
    pub value: T,
    pub regularization: T,
}

impl<T: Scalar> Divergence<T> {
    pub fn regularized(&self) -> bool {
        self.regularization > T::zero()
    }
}

/// Cholesky factor of `cov`, retrying once with `+1e-10·trace·I`.
fn factor_regularized<T: Scalar>(cov: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    if let Some(l) = cholesky(cov) {
        return Ok((l, T::zero()));
    }
    let mut shift = T::of(1e-10) * cov.trace().abs();
    if shift == T::zero() {
        shift = T::min_positive_value().sqrt();
    }
    let mut shifted = cov.clone();
    shifted.add_to_diag(shift);
    cholesky(&shifted).map(|l| (l, shift)).ok_or(Error::Singular)
}

/// Closed-form `KL(N(m₁,Σ₁) ‖ N(m₂,Σ₂))`.
pub fn kl_gaussian<T: Scalar>(g1: &GaussianEmbedding<T>, g2: &GaussianEmbedding<T>) -> Result<Divergence<T>> {
    g1.check_pair(g2)?;
    let d = g1.dim();
    let (l2, r2) = factor_regularized(&g2.cov)?;
    let (l1, r1) = factor_regularized(&g1.cov)?;
    let inv2 = cholesky_inverse(&l2);
    // tr(Σ₂⁻¹ Σ₁) with Σ₁ shifted consistently with its log-determinant
    let mut trace = T::zero();
    for i in 0..d {
        for k in 0..d {
            trace += inv2[(i, k)] * g1.cov[(k, i)];
        }
    }
    trace += r1 * inv2.trace();
    let diff: Vec<T> = g2.mean.iter().zip(&g1.mean).map(|(&a, &b)| a - b).collect();
    let solved = cholesky_solve(&l2, &diff);
    let maha: T = diff.iter().zip(&solved).map(|(&a, &b)| a * b).sum();
    let value = T::of(0.5) * (trace + maha - T::of(d as f64) + cholesky_log_det(&l2) - cholesky_log_det(&l1));
    Ok(Divergence {
        value: value.max(T::zero()),
        regularization: r1.max(r2),
    })
}

/// Jensen–Shannon divergence through the moment-matched Gaussian
/// `M = N(½(m₁+m₂), ½(Σ₁+Σ₂))` rather than the true mixture.
pub fn js_gaussian<T: Scalar>(g1: &GaussianEmbedding<T>, g2: &GaussianEmbedding<T>) -> Result<Divergence<T>> {
    g1.check_pair(g2)?;
    let half = T::of(0.5);
    let mean = g1.mean.iter().zip(&g2.mean).map(|(&a, &b)| half * (a + b)).collect();
    let mut cov = g1.cov.add(&g2.cov)?.scale(half);
    cov.symmetrize();
    let mixture = GaussianEmbedding { mean, cov, n: 0 };
    let a = kl_gaussian(g1, &mixture)?;
    let b = kl_gaussian(g2, &mixture)?;
    Ok(Divergence {
        value: half * (a.value + b.value),
        regularization: a.regularization.max(b.regularization),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−‖x−y‖² / 2σ²)`; `None` selects the median pairwise distance of
    /// the pooled rows.
    Rbf { bandwidth: Option<f64> },
    Linear,
}

impl Kernel {
    fn eval<T: Scalar>(&self, x: &[T], y: &[T], sigma: T) -> T {
        match self {
            Kernel::Rbf { .. } => (-sq_dist(x, y) / (T::of(2.0) * sigma * sigma)).exp(),
            Kernel::Linear => x.iter().zip(y).map(|(&a, &b)| a * b).sum(),
        }
    }
}

/// Median of the pairwise Euclidean distances over the rows of both sets.
/// Falls back to 1 when every pair coincides.
pub fn median_bandwidth<T: Scalar>(z1: &Matrix<T>, z2: &Matrix<T>) -> T {
    let rows: Vec<&[T]> = z1.row_iter().chain(z2.row_iter()).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return T::one();
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        (dists[k / 2 - 1] + dists[k / 2]) * T::of(0.5)
    };
    if median > T::zero() {
        median
    } else {
        T::one()
    }
}

/// Kernel distance between two equally sized sets of rows.
///
/// By default this is `‖m₁−m₂‖² + (1/N²) Σᵢⱼ [k(xᵢ,xⱼ) + k(yᵢ,yⱼ) − 2k(xᵢ,yⱼ)]`,
/// i.e. the biased MMD² plus an extra mean term. `textbook` drops the mean
/// term.
pub fn mmd<T: Scalar>(z1: &Matrix<T>, z2: &Matrix<T>, kernel: Kernel, textbook: bool) -> Result<T> {
    if z1.cols() != z2.cols() {
        return Err(Error::dim(format!("feature dims {} and {}", z1.cols(), z2.cols())));
    }
    if z1.rows() != z2.rows() {
        return Err(Error::invalid(format!(
            "mmd needs equally sized sets (got {} and {}); subsample the larger one",
            z1.rows(),
            z2.rows()
        )));
    }
    let n = z1.rows();
    if n == 0 {
        return Err(Error::Empty("mmd of empty sets".into()));
    }
    let sigma = match kernel {
        Kernel::Rbf { bandwidth: Some(b) } if b > 0.0 && b.is_finite() => T::of(b),
        Kernel::Rbf { bandwidth: Some(b) } => {
            return Err(Error::invalid(format!("rbf bandwidth must be positive and finite, got {b}")))
        }
        Kernel::Rbf { bandwidth: None } => median_bandwidth(z1, z2),
        Kernel::Linear => T::one(),
    };
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..n {
            total += kernel.eval(z1.row(i), z1.row(j), sigma) + kernel.eval(z2.row(i), z2.row(j), sigma)
                - T::of(2.0) * kernel.eval(z1.row(i), z2.row(j), sigma);
        }
    }
    let kernel_term = total / T::of((n * n) as f64);
    if textbook {
        return Ok(kernel_term);
    }
    Ok(sq_dist(&batch_mean(z1)?, &batch_mean(z2)?) + kernel_term)
}

/// `Σᵢⱼ |xᵢ − xⱼ|` in O(n log n) from the sorted values.
fn pairwise_abs_sum<T: Scalar>(sorted: &[T]) -> T {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| T::of(2.0 * (2.0 * i as f64 - n + 1.0)) * x)
        .sum()
}

/// Empirical CRPS `E|X−y| − ½E|X−X′|`, averaged over time steps.
///
/// `ensemble[m][t]` is member `m` at step `t`. Both expectations are plain
/// averages over all members (and all member pairs, including each member
/// with itself).
pub fn crps<T: Scalar>(ensemble: &[Vec<T>], observation: &[T]) -> Result<T> {
    let m = ensemble.len();
    if m == 0 {
        return Err(Error::Empty("crps ensemble".into()));
    }
    if observation.is_empty() {
        return Err(Error::Empty("crps observation".into()));
    }
    if let Some(bad) = ensemble.iter().find(|e| e.len() != observation.len()) {
        return Err(Error::dim(format!(
            "ensemble member of length {} for an observation of length {}",
            bad.len(),
            observation.len()
        )));
    }
    let mf = T::of(m as f64);
    let mut column = vec![T::zero(); m];
    let mut total = T::zero();
    for (t, &y) in observation.iter().enumerate() {
        for (c, member) in column.iter_mut().zip(ensemble) {
            *c = member[t];
        }
        let spread_to_obs: T = column.iter().map(|&x| (x - y).abs()).sum::<T>() / mf;
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite ensemble"));
        let spread = pairwise_abs_sum(&column) / (mf * mf);
        total += spread_to_obs - T::of(0.5) * spread;
    }
    Ok(total / T::of(observation.len() as f64))
}

/// Mean CRPS of every observed window against the whole ensemble.
pub fn crps_dataset<T: Scalar>(observed: &Matrix<T>, ensemble: &Matrix<T>) -> Result<T> {
    if observed.rows() == 0 {
        return Err(Error::Empty("crps observations".into()));
    }
    let members: Vec<Vec<T>> = ensemble.row_iter().map(<[T]>::to_vec).collect();
    let mut total = T::zero();
    for obs in observed.row_iter() {
        total += crps(&members, obs)?;
    }
    Ok(total / T::of(observed.rows() as f64))
}

fn mean_pair_distance<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let mut total = T::zero();
    for x in a.row_iter() {
        for y in b.row_iter() {
            total += sq_dist(x, y).sqrt();
        }
    }
    total / T::of((a.rows() * b.rows()) as f64)
}

/// Energy score `E‖X−Y‖ − ½E‖X−X′‖ − ½E‖Y−Y′‖` with all expectations taken
/// as averages over every ordered pair.
pub fn energy_score<T: Scalar>(z1: &Matrix<T>, z2: &Matrix<T>) -> Result<T> {
    if z1.cols() != z2.cols() {
        return Err(Error::dim(format!("feature dims {} and {}", z1.cols(), z2.cols())));
    }
    if z1.rows() < 2 || z2.rows() < 2 {
        return Err(Error::Empty(format!(
            "energy score needs at least 2 rows per set, got {} and {}",
            z1.rows(),
            z2.rows()
        )));
    }
    let half = T::of(0.5);
    Ok(mean_pair_distance(z1, z2) - half * mean_pair_distance(z1, z1) - half * mean_pair_distance(z2, z2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pairing {
    /// Row `i` of the first set against row `i` of the second.
    Index,
    /// Row `i` against a seeded random permutation of the second set.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape<T> {
    pub value: T,
    pub counted: usize,
    pub excluded: usize,
}

/// Mean of `|x₁ − x₂| / |x₁|` over paired windows and time steps. Terms with
/// `|x₁| < eps` are left out and counted in `excluded`.
pub fn mape_paired<T: Scalar>(x1: &Matrix<T>, x2: &Matrix<T>, pairing: Pairing, eps: T) -> Result<Mape<T>> {
    if x1.rows() != x2.rows() || x1.cols() != x2.cols() {
        return Err(Error::dim(format!(
            "mape needs equal shapes, got {}x{} and {}x{}",
            x1.rows(),
            x1.cols(),
            x2.rows(),
            x2.cols()
        )));
    }
    let mut partner: Vec<usize> = (0..x2.rows()).collect();
    if let Pairing::Random { seed } = pairing {
        partner.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut total = T::zero();
    let (mut counted, mut excluded) = (0usize, 0usize);
    for (i, &j) in partner.iter().enumerate() {
        for (&a, &b) in x1.row(i).iter().zip(x2.row(j)) {
            if a.abs() < eps {
                excluded += 1;
            } else {
                total += ((a - b) / a).abs();
                counted += 1;
            }
        }
    }
    if counted == 0 {
        return Err(Error::invalid(format!(
            "every one of the {excluded} mape denominators is below {eps}"
        )));
    }
    Ok(Mape {
        value: total / T::of(counted as f64),
        counted,
        excluded,
    })
}

/// Fréchet distance between Gaussians fitted directly to the raw windows.
pub fn raw_frechet<T: Scalar>(x1: &Matrix<T>, x2: &Matrix<T>) -> Result<T> {
    if x1.cols() != x2.cols() {
        return Err(Error::dim(format!(
            "raw windows have lengths {} and {}",
            x1.cols(),
            x2.cols()
        )));
    }
    fpd(&GaussianEmbedding::fit(x1)?, &GaussianEmbedding::fit(x2)?)
}

/// Names accepted in a [`MetricReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Fpd,
    Js,
    MmdRbf,
    MmdLinear,
    Crps,
    Energy,
    Mape,
    RawFrechet,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::Fpd,
        MetricName::Js,
        MetricName::MmdRbf,
        MetricName::MmdLinear,
        MetricName::Crps,
        MetricName::Energy,
        MetricName::Mape,
        MetricName::RawFrechet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Fpd => "fpd",
            MetricName::Js => "js",
            MetricName::MmdRbf => "mmd_rbf",
            MetricName::MmdLinear => "mmd_linear",
            MetricName::Crps => "crps",
            MetricName::Energy => "energy",
            MetricName::Mape => "mape",
            MetricName::RawFrechet => "raw_frechet",
        }
    }

    /// Metrics computed on extracted features rather than raw windows.
    pub fn needs_features(self) -> bool {
        matches!(
            self,
            MetricName::Fpd | MetricName::Js | MetricName::MmdRbf | MetricName::MmdLinear
        )
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = MetricName::ALL.iter().map(|m| m.as_str()).collect();
                Error::invalid(format!("unknown metric '{s}' (known: {})", known.join(", ")))
            })
    }
}

/// Checksum of one input file or dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            name: name.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }

    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::of_bytes(path.display().to_string(), &bytes))
    }
}

/// SHA-256 of the JSON encoding of a configuration.
pub fn config_hash<C: Serialize + ?Sized>(config: &C) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
}

/// Named metric values plus enough provenance to reproduce them.
///
/// Serializes as one flat JSON object: metric keys at the top level next to
/// `provenance` and `notes`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    values: BTreeMap<MetricName, f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            values: BTreeMap::new(),
            provenance,
            notes: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: MetricName, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric {name} = {value}")));
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: MetricName) -> Option<f64> {
        self.values.get(&name).copied()
    }

    pub fn values(&self) -> &BTreeMap<MetricName, f64> {
        &self.values
    }
}
