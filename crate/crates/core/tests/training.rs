use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use fpd::data::{synth_series, synth_transient, FaultKind, Resolution, SourceKind};
use fpd::hierarchy::{ExtractorStack, StackConfig};
use fpd::nn::{Linear, Module, Tensor3};
use fpd::pipeline::{synth_corpus, train_levels};
use fpd::training::{
    joint_loss, predict_level, predict_transient, regression_targets, train_level, train_transient, Heads, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(levels: &[Resolution]) -> StackConfig {
    StackConfig {
        levels: levels.to_vec(),
        channels: 4,
        width: 8,
        blocks: 1,
        classes: vec!["solar".into(), "wind".into()],
        ..StackConfig::default()
    }
}

fn brute_force_targets(x: &[f64]) -> [f64; 9] {
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| v * v).sum::<f64>() / nf - mean * mean;
    let std = var.max(0.0).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    // least squares through nalgebra on the design matrix [1, t]
    let design = DMatrix::from_fn(n, 2, |t, j| if j == 0 { 1.0 } else { t as f64 });
    let coef = design.clone().svd(true, true).solve(&DVector::from_column_slice(x), 1e-14).unwrap();
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let mut lag = 0.0;
    for t in 1..n {
        lag += dev[t] * dev[t - 1];
    }
    let m3: f64 = dev.iter().map(|d| d * d * d).sum::<f64>() / nf;
    let zeros = x.iter().filter(|v| **v == 0.0).count() as f64 / nf;
    [
        mean,
        std,
        s[0],
        s[n - 1],
        s[n - 1] - s[0],
        coef[1],
        if ss > 0.0 { lag / ss } else { 0.0 },
        if ss > 0.0 { m3 / (ss / nf).powf(1.5) } else { 0.0 },
        zeros,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn targets_match_brute_force(x in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 2..40)) {
        let got = regression_targets(&x).unwrap();
        let want = brute_force_targets(&x);
        for k in 0..9 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-7 * (1.0 + want[k].abs()), "stat {k}: {} vs {}", got[k], want[k]);
        }
    }

    #[test]
    fn joint_loss_is_the_sum_of_its_terms(
        feats in prop::collection::vec(-1.0f64..1.0, 4 * 6),
        targets in prop::collection::vec(-1.0f64..1.0, 4 * 3),
        labels in prop::collection::vec(0usize..2, 4),
        seed in any::<u64>(),
    ) {
        let x = Tensor3::new(4, 6, 1, feats).unwrap();
        let mut heads = Heads::<f64>::new(6, 3, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        let t: Vec<Vec<f64>> = targets.chunks(3).map(<[f64]>::to_vec).collect();
        let loss = joint_loss(&x, &mut heads, &t, &labels).unwrap();
        prop_assert!((loss.total - loss.mse - loss.ce).abs() <= 1e-12);

        // oracle from the head outputs
        let reg = heads.reg.infer(&x).unwrap();
        let clf = heads.clf.infer(&x).unwrap();
        let (mut mse, mut ce) = (0.0, 0.0);
        for b in 0..4 {
            mse += reg.sample(b).iter().zip(&t[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            let z = clf.sample(b);
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            ce += lse - z[labels[b]];
        }
        prop_assert!((loss.mse - mse / 4.0).abs() <= 1e-10);
        prop_assert!((loss.ce - ce / 4.0).abs() <= 1e-10);

        // gradient into the features by central differences
        let h = 1e-6;
        for i in [0usize, 7, 23] {
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= h;
            let lp = joint_loss(&plus, &mut heads, &t, &labels).unwrap().total;
            let lm = joint_loss(&minus, &mut heads, &t, &labels).unwrap().total;
            let numeric = (lp - lm) / (2.0 * h);
            prop_assert!((numeric - loss.d_features.as_slice()[i]).abs() <= 1e-6 * (1.0 + numeric.abs()));
        }
    }
}

#[test]
fn too_short_segments_are_rejected() {
    assert!(regression_targets(&[1.0]).is_err());
}

#[test]
fn two_class_hourly_accuracy() {
    let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 40, 1).unwrap();
    let cfg = TrainConfig { epochs: 10, seed: 2, ..TrainConfig::default() };
    let mut stack = ExtractorStack::<f64>::new(StackConfig {
        classes: vec!["solar".into(), "wind".into()],
        ..StackConfig::default()
    })
    .unwrap();
    let history = train_level(&mut stack, Resolution::Hourly, &corpus, &cfg).unwrap();
    assert_eq!(history.epochs.len(), 10);
    let first = &history.epochs[0];
    let last = history.epochs.last().unwrap();
    assert!(last.mse + last.ce < first.mse + first.ce);

    let mut correct = 0;
    let mut total = 0;
    for (class, kind) in [SourceKind::Solar, SourceKind::Wind].into_iter().enumerate() {
        let held_out = synth_series(kind, 10, Resolution::FiveMin, 99).unwrap();
        let p = predict_level(&stack, Resolution::Hourly, &held_out).unwrap();
        correct += p.classes.iter().filter(|&&c| c == class).count();
        total += p.classes.len();
    }
    let accuracy = correct as f64 / total as f64;
    assert!(accuracy > 0.9, "held-out accuracy {accuracy}");
}

#[test]
fn transient_heads_learn_sag_versus_swell() {
    let train = synth_transient(240, 1, &[FaultKind::Sag, FaultKind::Swell]).unwrap();
    let test = synth_transient(60, 2, &[FaultKind::Sag, FaultKind::Swell]).unwrap();
    let cfg = TrainConfig { epochs: 12, batch_size: 32, seed: 0, ..TrainConfig::default() };
    let mut stack = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly])).unwrap();
    train_transient(&mut stack, &train, &cfg).unwrap();
    let p = predict_transient(&stack, &test.batch).unwrap();
    let accuracy = p.classes.iter().zip(&test.labels).filter(|(a, b)| a == b).count() as f64 / test.labels.len() as f64;
    assert!(accuracy > 0.9, "accuracy {accuracy}");

    let n = test.labels.len() as f64;
    for (k, y) in [&test.min_amplitude, &test.max_amplitude].into_iter().enumerate() {
        let mean = y.iter().sum::<f64>() / n;
        let variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mse = p.targets.iter().zip(y).map(|(t, y)| (t[k] - y).powi(2)).sum::<f64>() / n;
        assert!(mse < variance, "target {k}: mse {mse} vs variance {variance}");
    }
}

#[test]
fn transient_training_is_deterministic() {
    let set = synth_transient(16, 3, &[FaultKind::Sag, FaultKind::Swell]).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
    let weights = || {
        let mut stack = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly])).unwrap();
        train_transient(&mut stack, &set, &cfg).unwrap();
        let net = &stack.transient.as_ref().unwrap().net;
        net.state().into_iter().flat_map(|t| t.to_vec()).collect::<Vec<f64>>()
    };
    assert_eq!(weights(), weights());
}

#[test]
fn training_a_level_leaves_lower_levels_untouched() {
    let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 6, 0).unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let mut stack = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly, Resolution::Daily])).unwrap();
    train_level(&mut stack, Resolution::Hourly, &corpus, &cfg).unwrap();
    let snapshot = |s: &ExtractorStack<f64>| -> Vec<f64> {
        s.modules[&Resolution::Hourly].net.state().into_iter().flat_map(|t| t.to_vec()).collect()
    };
    let before = snapshot(&stack);
    train_level(&mut stack, Resolution::Daily, &corpus, &cfg).unwrap();
    assert_eq!(snapshot(&stack), before);
}

#[test]
fn daily_level_needs_the_hourly_module() {
    let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 4, 0).unwrap();
    let mut stack = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly, Resolution::Daily])).unwrap();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let err = train_level(&mut stack, Resolution::Daily, &corpus, &cfg).unwrap_err();
    assert!(err.to_string().contains("hourly"), "{err}");

    let mut daily_only = ExtractorStack::<f64>::new(small_config(&[Resolution::Daily])).unwrap();
    assert!(train_levels(&mut daily_only, &corpus, &cfg).is_err());
}

#[test]
fn finalized_stacks_are_frozen() {
    let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 6, 0).unwrap();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut stack = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly])).unwrap();
    assert_eq!(stack.version(), "unfrozen");
    train_levels(&mut stack, &corpus, &cfg).unwrap();
    stack.finalize().unwrap();
    assert!(stack.is_frozen());
    assert_ne!(stack.version(), "unfrozen");
    assert!(train_level(&mut stack, Resolution::Hourly, &corpus, &cfg).is_err());
    assert!(predict_level(&stack, Resolution::Hourly, &corpus[0]).is_err());

    let mut untrained = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly, Resolution::Daily])).unwrap();
    train_level(&mut untrained, Resolution::Hourly, &corpus, &cfg).unwrap();
    assert!(untrained.finalize().is_err());
}

#[test]
fn zero_epochs_keep_the_seeded_initialization() {
    let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 4, 0).unwrap();
    let weights = |seed: u64| {
        let cfg = TrainConfig { epochs: 0, seed, ..TrainConfig::default() };
        let mut stack = ExtractorStack::<f64>::new(small_config(&[Resolution::Hourly])).unwrap();
        train_levels(&mut stack, &corpus, &cfg).unwrap();
        let net = &stack.modules[&Resolution::Hourly].net;
        net.state().into_iter().flat_map(|t| t.to_vec()).collect::<Vec<f64>>()
    };
    assert_eq!(weights(5), weights(5));
    assert_ne!(weights(5), weights(6));
}

#[test]
fn single_precision_stack_trains() {
    let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 6, 0).unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let mut stack = ExtractorStack::<f32>::new(small_config(&[Resolution::Hourly, Resolution::Daily])).unwrap();
    let histories = train_levels(&mut stack, &corpus, &cfg).unwrap();
    assert!(histories.iter().all(|h| h.epochs.iter().all(|e| e.mse.is_finite())));
    stack.finalize().unwrap();
    let f = stack.extract_hierarchical(&corpus[0], Resolution::FiveMin, Resolution::Daily).unwrap();
    assert_eq!(f.rows.rows(), 6);
    assert_eq!(f.rows.cols(), stack.config.feature_dim());
}

#[test]
fn linear_head_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lin = Linear::<f64>::new(6, 3, &mut rng);
    let out = lin.infer(&Tensor3::zeros(2, 6, 1)).unwrap();
    assert_eq!(out.shape(), (2, 3, 1));
}
