//! Joint regression + classification training of the level modules.
//!
//! Levels are trained one at a time from the finest up. While a level
//! trains, the modules below it are only run in inference mode, so their
//! parameters never change.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Resolution, SeriesBatch, TransientSet};
use crate::error::{Error, Result};
use crate::hierarchy::{build_input, transient_specs, ExtractorStack, LevelModule, TransientModule};
use crate::nn::{mse, softmax_cross_entropy, Adam, AdamConfig, Linear, Mode, Module, Network, Tensor3};
use crate::scalar::Scalar;

/// Number of regression statistics per segment.
pub const K: usize = 9;

pub const STAT_NAMES: [&str; K] = [
    "mean",
    "std",
    "min",
    "max",
    "range",
    "slope",
    "lag1_autocorr",
    "skewness",
    "zero_fraction",
];

/// Summary statistics used as regression targets: mean, population
/// standard deviation, min, max, range, least-squares slope per step, lag-1
/// autocorrelation, standardized third central moment and the fraction of
/// exact zeros. Degenerate ratios (constant segments) are 0.
pub fn regression_targets(segment: &[f64]) -> Result<[f64; K]> {
    let n = segment.len();
    if n < 2 {
        return Err(Error::invalid(format!("regression targets need at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mean = segment.iter().sum::<f64>() / nf;
    let var = segment.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let std = var.sqrt();
    let min = segment.iter().copied().fold(f64::INFINITY, f64::min);
    let max = segment.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_mean = (nf - 1.0) / 2.0;
    let sxx: f64 = (0..n).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let sxy: f64 = segment.iter().enumerate().map(|(t, v)| (t as f64 - t_mean) * (v - mean)).sum();
    let slope = sxy / sxx;
    let ss: f64 = segment.iter().map(|v| (v - mean).powi(2)).sum();
    let autocorr = if ss > 0.0 {
        segment.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ss
    } else {
        0.0
    };
    let skew = if std > 0.0 {
        segment.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf / std.powi(3)
    } else {
        0.0
    };
    let zeros = segment.iter().filter(|&&v| v == 0.0).count() as f64 / nf;
    Ok([mean, std, min, max, max - min, slope, autocorr, skew, zeros])
}

/// Per-target z-score constants fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetNorm {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Empty("no regression targets".into()))?;
        let k = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; k];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; k];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            std: vec![1.0; k],
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Regression and classification heads on top of a feature vector.
pub struct Heads<T> {
    pub reg: Linear<T>,
    pub clf: Linear<T>,
}

impl<T: Scalar> Heads<T> {
    pub fn new(features: usize, targets: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            reg: Linear::new(features, targets, rng),
            clf: Linear::new(features, classes, rng),
        }
    }

    fn zero_grad(&mut self) {
        self.reg.zero_grad();
        self.clf.zero_grad();
    }
}

/// Batch-averaged joint loss and the gradient it sends back into the
/// features.
pub struct JointLoss<T> {
    pub total: T,
    pub mse: T,
    pub ce: T,
    pub correct: usize,
    pub d_features: Tensor3<T>,
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `(1/B) Σ_b [Σ_k (f_reg(z_b)_k − y_bk)² − log softmax(f_clf(z_b))_{label_b}]`.
///
/// Runs both heads in train mode, accumulates their parameter gradients and
/// returns the gradient with respect to `features`.
pub fn joint_loss<T: Scalar>(
    features: &Tensor3<T>,
    heads: &mut Heads<T>,
    targets: &[Vec<T>],
    labels: &[usize],
) -> Result<JointLoss<T>> {
    let b = features.batch();
    if targets.len() != b || labels.len() != b {
        return Err(Error::dim(format!(
            "{b} feature rows with {} targets and {} labels",
            targets.len(),
            labels.len()
        )));
    }
    let reg = heads.reg.forward(features, Mode::Train)?;
    let clf = heads.clf.forward(features, Mode::Train)?;
    let inv_b = T::one() / T::of(b as f64);
    let mut d_reg = Vec::with_capacity(reg.as_slice().len());
    let mut d_clf = Vec::with_capacity(clf.as_slice().len());
    let (mut mse_sum, mut ce_sum) = (T::zero(), T::zero());
    let mut correct = 0;
    for i in 0..b {
        let (l, g) = mse(reg.sample(i), &targets[i])?;
        mse_sum += l;
        d_reg.extend(g.into_iter().map(|v| v * inv_b));
        let logits = clf.sample(i);
        let (l, g) = softmax_cross_entropy(logits, labels[i])?;
        ce_sum += l;
        d_clf.extend(g.into_iter().map(|v| v * inv_b));
        correct += usize::from(argmax(logits) == labels[i]);
    }
    let d_reg = Tensor3::new(b, reg.channels(), reg.length(), d_reg)?;
    let d_clf = Tensor3::new(b, clf.channels(), clf.length(), d_clf)?;
    let mut d_features = heads.reg.backward(&d_reg)?;
    d_features.add_assign(&heads.clf.backward(&d_clf)?)?;
    let mse_term = mse_sum * inv_b;
    let ce_term = ce_sum * inv_b;
    Ok(JointLoss {
        total: mse_term + ce_term,
        mse: mse_term,
        ce: ce_term,
        correct,
        d_features,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Fraction of windows held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("learning rate must be positive and val_fraction in [0, 1)"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Losses and accuracy after one epoch. Validation fields are absent when
/// nothing was held out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub level: String,
    pub epoch: usize,
    pub mse: f64,
    pub ce: f64,
    pub accuracy: f64,
    pub val_mse: Option<f64>,
    pub val_ce: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelHistory {
    pub level: String,
    pub train_segments: usize,
    pub val_segments: usize,
    pub epochs: Vec<EpochRecord>,
}

/// Segments ready for training: inputs, raw targets, labels, and the
/// window each segment came from (the unit of the train/validation split).
struct Prepared<T> {
    inputs: Tensor3<T>,
    targets: Vec<Vec<f64>>,
    labels: Vec<usize>,
    groups: Vec<usize>,
}

fn level_salt(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn split_groups(groups: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(rng);
    let n_val = if ids.len() >= 2 && fraction > 0.0 {
        ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1)
    } else {
        0
    };
    let mut is_val = vec![false; ids.iter().max().map_or(0, |m| m + 1)];
    for &g in &ids[..n_val] {
        is_val[g] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, &g) in groups.iter().enumerate() {
        if is_val[g] {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

fn evaluate<T: Scalar>(
    net: &Network<T>,
    heads: &Heads<T>,
    inputs: &Tensor3<T>,
    targets: &[Vec<T>],
    labels: &[usize],
    indices: &[usize],
) -> Result<(f64, f64, f64)> {
    let (mut mse_sum, mut ce_sum, mut correct) = (0.0, 0.0, 0usize);
    for chunk in indices.chunks(256) {
        let feats = net.infer(&inputs.select(chunk))?;
        let reg = heads.reg.infer(&feats)?;
        let clf = heads.clf.infer(&feats)?;
        for (j, &i) in chunk.iter().enumerate() {
            mse_sum += mse(reg.sample(j), &targets[i])?.0.to_f64_lossy();
            ce_sum += softmax_cross_entropy(clf.sample(j), labels[i])?.0.to_f64_lossy();
            correct += usize::from(argmax(clf.sample(j)) == labels[i]);
        }
    }
    let n = indices.len() as f64;
    Ok((mse_sum / n, ce_sum / n, correct as f64 / n))
}

fn fit<T: Scalar>(
    name: &str,
    net: &mut Network<T>,
    heads: &mut Heads<T>,
    data: &Prepared<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TargetNorm, LevelHistory)> {
    let (train, val) = split_groups(&data.groups, cfg.val_fraction, rng);
    if train.len() < 2 {
        return Err(Error::invalid(format!("{name}: need at least 2 training segments, got {}", train.len())));
    }
    let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| data.targets[i].clone()).collect();
    let norm = TargetNorm::fit(&train_rows)?;
    let targets: Vec<Vec<T>> = data
        .targets
        .iter()
        .map(|r| norm.apply(r).into_iter().map(T::of).collect())
        .collect();

    let mut adam = Adam::new(cfg.adam);
    let mut order = train.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut mse_sum, mut ce_sum, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // batch statistics are undefined for a single segment
            if chunk.len() < 2 {
                continue;
            }
            net.zero_grad();
            heads.zero_grad();
            let x = data.inputs.select(chunk);
            let feats = net.forward(&x, Mode::Train)?;
            let t: Vec<Vec<T>> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let l: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let loss = joint_loss(&feats, heads, &t, &l)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!("{name} training loss at epoch {epoch}, step {step}")));
            }
            net.backward(&loss.d_features)?;
            let mut params = net.params_and_grads();
            params.extend(heads.reg.params_and_grads());
            params.extend(heads.clf.params_and_grads());
            adam.step(params)?;
            let b = chunk.len() as f64;
            mse_sum += loss.mse.to_f64_lossy() * b;
            ce_sum += loss.ce.to_f64_lossy() * b;
            correct += loss.correct;
            seen += chunk.len();
        }
        let seen_f = seen.max(1) as f64;
        let (val_mse, val_ce, val_accuracy) = if val.is_empty() {
            (None, None, None)
        } else {
            let (m, c, a) = evaluate(net, heads, &data.inputs, &targets, &data.labels, &val)?;
            (Some(m), Some(c), Some(a))
        };
        let record = EpochRecord {
            level: name.to_string(),
            epoch,
            mse: mse_sum / seen_f,
            ce: ce_sum / seen_f,
            accuracy: correct as f64 / seen_f,
            val_mse,
            val_ce,
            val_accuracy,
        };
        log::info!("{}", serde_json::to_string(&record).expect("record serializes"));
        epochs.push(record);
    }
    Ok((
        norm,
        LevelHistory {
            level: name.to_string(),
            train_segments: train.len(),
            val_segments: val.len(),
            epochs,
        },
    ))
}

fn concat_tensors<T: Scalar>(parts: Vec<Tensor3<T>>) -> Result<Tensor3<T>> {
    let (_, c, l) = parts.first().ok_or_else(|| Error::Empty("no training segments".into()))?.shape();
    let n = parts.iter().map(Tensor3::batch).sum();
    let mut data = Vec::with_capacity(n * c * l);
    for p in parts {
        data.extend(p.into_vec());
    }
    Tensor3::new(n, c, l, data)
}

/// Trains the module for `level` on every batch in `data` and stores it in
/// the stack with its heads attached.
///
/// Batches at the level's input resolution enter as raw data. Finer batches
/// are first passed through the already-trained lower modules and enter as
/// features, so both input forms are learned when both kinds of data are
/// supplied.
pub fn train_level<T: Scalar>(
    stack: &mut ExtractorStack<T>,
    level: Resolution,
    data: &[SeriesBatch],
    cfg: &TrainConfig,
) -> Result<LevelHistory> {
    cfg.validate()?;
    if stack.is_frozen() {
        return Err(Error::invalid("stack is finalized; create a new one to train"));
    }
    if !stack.config.levels.contains(&level) {
        return Err(Error::invalid(format!("{level} is not in the stack's level schedule")));
    }
    let input_res = level.level_input()?;
    let d = stack.config.channels;
    let mut parts = Vec::new();
    let (mut targets, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    let mut group_offset = 0;
    for batch in data {
        let class = stack.config.class_of(batch.source.as_deref())?;
        let input = if batch.resolution == input_res {
            build_input(None, Some(batch), level, d)?
        } else if batch.resolution < input_res {
            let features = stack
                .extract_hierarchical(batch, batch.resolution, input_res)
                .map_err(|e| match e {
                    Error::MissingLevel(l) => Error::MissingLevel(format!(
                        "{l} (needed to feed {} data to the {level} module; train it first)",
                        batch.resolution
                    )),
                    other => other,
                })?;
            build_input(Some(&features), None, level, d)?
        } else {
            return Err(Error::invalid(format!(
                "{} data is too coarse for the {level} module",
                batch.resolution
            )));
        };
        let l = input.tensor.length();
        for s in 0..input.tensor.batch() {
            let seg = &input.tensor.sample(s)[(d - 1) * l..(d - 1) * l + input.valid[s]];
            let raw: Vec<f64> = seg.iter().map(|v| v.to_f64_lossy()).collect();
            targets.push(regression_targets(&raw)?.to_vec());
            labels.push(class);
            groups.push(group_offset + input.sample_of[s]);
        }
        group_offset += input.sample_of.iter().max().map_or(0, |m| m + 1);
        parts.push(input.tensor);
    }
    let prepared = Prepared {
        inputs: concat_tensors(parts)?,
        targets,
        labels,
        groups,
    };
    let salt = level_salt(level.as_str());
    let mut net = stack.init_level(level, cfg.seed ^ salt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(salt));
    let mut heads = Heads::new(stack.config.feature_dim(), K, stack.config.classes.len(), &mut rng);
    let (target_norm, history) = fit(level.as_str(), &mut net, &mut heads, &prepared, cfg, &mut rng)?;
    stack.modules.insert(
        level,
        LevelModule {
            level,
            net,
            target_norm,
            heads: Some(heads),
        },
    );
    stack.train_config_hash = cfg.hash();
    Ok(history)
}

/// Trains the transient extractor on fault type plus minimum and maximum
/// magnitude.
pub fn train_transient<T: Scalar>(
    stack: &mut ExtractorStack<T>,
    set: &TransientSet,
    cfg: &TrainConfig,
) -> Result<LevelHistory> {
    cfg.validate()?;
    if stack.is_frozen() {
        return Err(Error::invalid("stack is finalized; create a new one to train"));
    }
    let inputs = crate::hierarchy::transient_tensor(&set.batch)?;
    let n = inputs.batch();
    if set.labels.len() != n || set.min_amplitude.len() != n || set.max_amplitude.len() != n {
        return Err(Error::dim("transient labels do not match the samples"));
    }
    let prepared = Prepared {
        inputs,
        targets: (0..n).map(|i| vec![set.min_amplitude[i], set.max_amplitude[i]]).collect(),
        labels: set.labels.clone(),
        groups: (0..n).collect(),
    };
    let salt = level_salt("transient");
    let mut net = Network::build(&transient_specs(), &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ salt))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(salt));
    let mut heads = Heads::new(crate::hierarchy::TRANSIENT_FEATURES, 2, set.classes.len().max(2), &mut rng);
    let (target_norm, history) = fit("transient", &mut net, &mut heads, &prepared, cfg, &mut rng)?;
    stack.transient = Some(TransientModule {
        net,
        target_norm,
        classes: set.classes.clone(),
        heads: Some(heads),
    });
    stack.train_config_hash = cfg.hash();
    Ok(history)
}

/// Predictions of a module's heads on held-out data, for checking what the
/// heads learned before they are discarded.
pub struct HeadPredictions {
    pub classes: Vec<usize>,
    /// Regression outputs mapped back to target units.
    pub targets: Vec<Vec<f64>>,
}

pub fn predict_transient<T: Scalar>(stack: &ExtractorStack<T>, x: &SeriesBatch) -> Result<HeadPredictions> {
    let module = stack
        .transient
        .as_ref()
        .ok_or_else(|| Error::MissingLevel("transient".into()))?;
    let heads = module
        .heads
        .as_ref()
        .ok_or_else(|| Error::invalid("transient heads were discarded by finalize"))?;
    let inputs = crate::hierarchy::transient_tensor::<T>(x)?;
    let feats = module.net.infer(&inputs)?;
    predict_heads(heads, &module.target_norm, &feats)
}

/// Head predictions of the `level` module on raw data at its input
/// resolution.
pub fn predict_level<T: Scalar>(stack: &ExtractorStack<T>, level: Resolution, x: &SeriesBatch) -> Result<HeadPredictions> {
    let module = stack.module(level)?;
    let heads = module
        .heads
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{level} heads were discarded by finalize")))?;
    let input = build_input(None, Some(x), level, stack.config.channels)?;
    let feats = module.net.infer(&input.tensor)?;
    predict_heads(heads, &module.target_norm, &feats)
}

fn predict_heads<T: Scalar>(heads: &Heads<T>, norm: &TargetNorm, feats: &Tensor3<T>) -> Result<HeadPredictions> {
    let reg = heads.reg.infer(feats)?;
    let clf = heads.clf.infer(feats)?;
    let mut classes = Vec::new();
    let mut targets = Vec::new();
    for i in 0..feats.batch() {
        classes.push(argmax(clf.sample(i)));
        targets.push(
            reg.sample(i)
                .iter()
                .zip(&norm.mean)
                .zip(&norm.std)
                .map(|((v, m), s)| v.to_f64_lossy() * s + m)
                .collect(),
        );
    }
    Ok(HeadPredictions { classes, targets })
}
