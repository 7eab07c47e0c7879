//! End-to-end runs shared by the command-line tool and the test suites:
//! corpus generation, stack training, metric evaluation and the
//! disturbance benchmark.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{aggregate, synth_series, Resolution, SeriesBatch, SourceKind};
use crate::disturbances::{ContaminationMode, Disturbance, DisturbanceKind};
use crate::error::{Error, Result};
use crate::hierarchy::{ExtractorStack, StackConfig};
use crate::linalg::Matrix;
use crate::metrics::{
    crps_dataset, energy_score, fpd, js_gaussian, mape_paired, median_bandwidth, mmd, raw_frechet,
    GaussianEmbedding, Kernel, MetricName, Pairing,
};
use crate::scalar::Scalar;
use crate::training::{train_level, LevelHistory, TrainConfig};

/// Generates `days` of 5-minute data for every source kind, one batch per
/// kind with its source label set.
pub fn synth_corpus(kinds: &[SourceKind], days: usize, seed: u64) -> Result<Vec<SeriesBatch>> {
    kinds
        .iter()
        .map(|&k| synth_series(k, days, Resolution::FiveMin, seed))
        .collect()
}

/// Adds, for every sub-daily batch, its block-mean aggregate at each
/// scheduled level's input resolution, so that every level also learns
/// the raw-input form.
fn with_aggregates(config: &StackConfig, data: &[SeriesBatch]) -> Result<Vec<SeriesBatch>> {
    let mut out = data.to_vec();
    for level in &config.levels {
        let input = level.level_input()?;
        for b in data {
            let coarser = b.resolution < input && input.minutes().is_some();
            let exists = out
                .iter()
                .any(|o| o.resolution == input && o.source == b.source && o.n_samples() == b.n_samples());
            if coarser && !exists {
                if let Ok(agg) = aggregate(b, input) {
                    out.push(agg);
                }
            }
        }
    }
    Ok(out)
}

/// Trains every scheduled level finest first and finalizes the stack.
pub fn train_stack<T: Scalar>(
    config: StackConfig,
    data: &[SeriesBatch],
    cfg: &TrainConfig,
) -> Result<(ExtractorStack<T>, Vec<LevelHistory>)> {
    let mut stack = ExtractorStack::new(config)?;
    let histories = train_levels(&mut stack, data, cfg)?;
    stack.finalize()?;
    Ok((stack, histories))
}

/// Trains every scheduled level of `stack`, finest first, without
/// finalizing it.
///
/// Each level sees the batches already at its input resolution as raw
/// input, finer batches through the trained lower levels, and block-mean
/// aggregates of sub-daily batches as additional raw input. Data finer
/// than the first level's input is rejected.
pub fn train_levels<T: Scalar>(
    stack: &mut ExtractorStack<T>,
    data: &[SeriesBatch],
    cfg: &TrainConfig,
) -> Result<Vec<LevelHistory>> {
    let first = stack.config.levels[0];
    let lowest_input = first.level_input()?;
    if let Some(b) = data.iter().find(|b| b.resolution < lowest_input) {
        return Err(Error::MissingLevel(format!(
            "{} (needed to read {} data; the schedule starts at {first})",
            b.resolution.consumer_level()?,
            b.resolution
        )));
    }
    let data = with_aggregates(&stack.config, data)?;
    let mut histories = Vec::new();
    for level in stack.config.levels.clone() {
        let input = level.level_input()?;
        let usable: Vec<SeriesBatch> = data
            .iter()
            .filter(|b| {
                b.resolution == input
                    || (b.resolution < input && b.resolution.consumer_level().is_ok_and(|c| c >= first))
            })
            .cloned()
            .collect();
        if usable.is_empty() {
            return Err(Error::invalid(format!(
                "no batch can feed the {level} module (needs {input} data or finer)"
            )));
        }
        histories.push(train_level(stack, level, &usable, cfg)?);
    }
    Ok(histories)
}

/// What to compute when comparing two datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub entry: Resolution,
    pub target: Resolution,
    pub metrics: Vec<MetricName>,
    /// Fixed RBF bandwidth; the pooled median distance when absent.
    pub rbf_bandwidth: Option<f64>,
    pub pairing: Pairing,
    pub mape_eps: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            entry: Resolution::FiveMin,
            target: Resolution::Daily,
            metrics: vec![MetricName::Fpd, MetricName::Js, MetricName::MmdRbf, MetricName::MmdLinear],
            rbf_bandwidth: None,
            pairing: Pairing::Index,
            mape_eps: 1e-6,
        }
    }
}

/// Metric values with any caveats about how they were obtained.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub values: BTreeMap<MetricName, f64>,
    pub notes: Vec<String>,
}

fn to_f64(m: &Matrix<impl Scalar>) -> Result<Matrix<f64>> {
    Matrix::new(m.rows(), m.cols(), m.as_slice().iter().map(|v| v.to_f64_lossy()).collect())
}

fn head_rows(m: &Matrix<f64>, n: usize) -> Result<Matrix<f64>> {
    Matrix::new(n, m.cols(), m.as_slice()[..n * m.cols()].to_vec())
}

/// Metrics of feature sets `za` (reference) and `zb`, plus those of raw
/// windows `a` and `b`, restricted to `opts.metrics`.
pub fn compare(
    za: Option<&Matrix<f64>>,
    zb: Option<&Matrix<f64>>,
    a: &SeriesBatch,
    b: &SeriesBatch,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    let (ga, gb) = match (za, zb) {
        (Some(za), Some(zb)) => (Some(GaussianEmbedding::fit(za)?), Some(GaussianEmbedding::fit(zb)?)),
        _ => (None, None),
    };
    let feats = || -> Result<(&Matrix<f64>, &Matrix<f64>)> {
        za.zip(zb).ok_or_else(|| Error::invalid("feature metrics requested without features"))
    };
    for &m in &opts.metrics {
        let value = match m {
            MetricName::Fpd => fpd(ga.as_ref().expect("fitted"), gb.as_ref().expect("fitted"))?,
            MetricName::Js => {
                let d = js_gaussian(ga.as_ref().expect("fitted"), gb.as_ref().expect("fitted"))?;
                if d.regularized() {
                    out.notes.push(format!("js: covariance regularized by {:e}", d.regularization));
                }
                d.value
            }
            MetricName::MmdRbf | MetricName::MmdLinear => {
                let (za, zb) = feats()?;
                let n = za.rows().min(zb.rows());
                let (za, zb) = if za.rows() != zb.rows() {
                    out.notes.push(format!("{m}: computed on the first {n} rows of each set"));
                    (head_rows(za, n)?, head_rows(zb, n)?)
                } else {
                    (za.clone(), zb.clone())
                };
                let kernel = if m == MetricName::MmdRbf {
                    Kernel::Rbf {
                        bandwidth: Some(opts.rbf_bandwidth.unwrap_or_else(|| median_bandwidth(&za, &zb))),
                    }
                } else {
                    Kernel::Linear
                };
                mmd(&za, &zb, kernel, false)?
            }
            MetricName::Crps => crps_dataset(&a.to_matrix(), &b.to_matrix())?,
            MetricName::Energy => energy_score(&a.to_matrix(), &b.to_matrix())?,
            MetricName::Mape => {
                let r = mape_paired(&a.to_matrix(), &b.to_matrix(), opts.pairing, opts.mape_eps)?;
                if r.excluded > 0 {
                    out.notes.push(format!("mape: {} near-zero reference points excluded", r.excluded));
                }
                r.value
            }
            MetricName::RawFrechet => raw_frechet(&a.to_matrix(), &b.to_matrix())?,
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric {m}")));
        }
        out.values.insert(m, value);
    }
    Ok(out)
}

/// Extracts `target` features of `x` as an `f64` matrix.
pub fn features<T: Scalar>(stack: &ExtractorStack<T>, x: &SeriesBatch, entry: Resolution, target: Resolution) -> Result<Matrix<f64>> {
    if target == Resolution::Transient {
        return to_f64(&stack.extract_transient(x)?.rows);
    }
    to_f64(&stack.extract_hierarchical(x, entry, target)?.rows)
}

/// Compares dataset `b` against reference `a` through `stack`.
pub fn evaluate<T: Scalar>(stack: &ExtractorStack<T>, a: &SeriesBatch, b: &SeriesBatch, opts: &EvalOptions) -> Result<Evaluation> {
    let (za, zb) = if opts.metrics.iter().any(|m| m.needs_features()) {
        (
            Some(features(stack, a, opts.entry, opts.target)?),
            Some(features(stack, b, opts.entry, opts.target)?),
        )
    } else {
        (None, None)
    };
    compare(za.as_ref(), zb.as_ref(), a, b, opts)
}

/// One tidy benchmark record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub disturbance: DisturbanceKind,
    pub alpha: f64,
    pub metric: MetricName,
    pub value: f64,
    pub seed: u64,
}

/// A disturbance kind with the levels to sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub kind: DisturbanceKind,
    pub alphas: Vec<f64>,
}

impl Sweep {
    /// The six progressive disturbances with their published levels.
    pub fn fig2() -> Vec<Sweep> {
        DisturbanceKind::FIG2
            .iter()
            .map(|&kind| Sweep {
                kind,
                alphas: kind.fig2_grid().expect("fig2 kind").to_vec(),
            })
            .collect()
    }

    /// Period offset and nighttime violation over their hour grids.
    pub fn solar() -> Vec<Sweep> {
        [DisturbanceKind::PeriodOffset, DisturbanceKind::NighttimeViolation]
            .iter()
            .map(|&kind| Sweep {
                kind,
                alphas: kind.solar_grid().expect("solar kind").to_vec(),
            })
            .collect()
    }

    pub fn preset(name: &str) -> Result<Vec<Sweep>> {
        match name {
            "fig2" => Ok(Self::fig2()),
            "solar" => Ok(Self::solar()),
            "fabricated" => Ok(vec![Sweep {
                kind: DisturbanceKind::MomentMatchedFabricate,
                alphas: vec![0.0, 1.0],
            }]),
            _ => Err(Error::invalid(format!(
                "unknown preset '{name}' (expected fig2, solar or fabricated)"
            ))),
        }
    }
}

/// Rows produced so far and the sub-runs that failed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl BenchmarkResult {
    /// Values of `metric` for `kind`, in sweep order.
    pub fn series(&self, kind: DisturbanceKind, metric: MetricName) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.disturbance == kind && r.metric == metric)
            .map(|r| (r.alpha, r.value))
            .collect()
    }
}

/// Compares `x` with every disturbed copy of itself. The reference
/// features are extracted once. A failing sub-run is recorded and the
/// sweep of that kind stops; earlier rows are kept.
pub fn run_benchmark<T: Scalar>(
    stack: &ExtractorStack<T>,
    x: &SeriesBatch,
    aux: Option<&SeriesBatch>,
    sweeps: &[Sweep],
    opts: &EvalOptions,
    seed: u64,
) -> Result<BenchmarkResult> {
    let needs_features = opts.metrics.iter().any(|m| m.needs_features());
    let zx = if needs_features {
        Some(features(stack, x, opts.entry, opts.target)?)
    } else {
        None
    };
    let mut result = BenchmarkResult::default();
    for sweep in sweeps {
        for &alpha in &sweep.alphas {
            let run = || -> Result<Evaluation> {
                let y = Disturbance::new(sweep.kind, alpha, seed).apply(x, aux, ContaminationMode::Sample)?;
                let zy = if needs_features {
                    Some(features(stack, &y, opts.entry, opts.target)?)
                } else {
                    None
                };
                compare(zx.as_ref(), zy.as_ref(), x, &y, opts)
            };
            match run() {
                Ok(eval) => {
                    for (metric, value) in eval.values {
                        result.rows.push(BenchmarkRow {
                            disturbance: sweep.kind,
                            alpha,
                            metric,
                            value,
                            seed,
                        });
                    }
                    result
                        .notes
                        .extend(eval.notes.into_iter().map(|n| format!("{} alpha={alpha}: {n}", sweep.kind)));
                }
                Err(e) => {
                    result.failures.push(format!("{} alpha={alpha}: {e}", sweep.kind));
                    break;
                }
            }
        }
    }
    Ok(result)
}

/// `true` when `values` never decrease and the last exceeds the first.
pub fn is_monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0]) && values.last() > values.first()
}
