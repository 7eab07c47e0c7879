//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fpd::data::artifact::{decode_stack, encode_stack};
use fpd::data::{synth_series, Resolution, SeriesBatch, SourceKind};
use fpd::disturbances::{
    classify_ramp, gaussian_noise, moment_matched_fabricate, ramp_label, DisturbanceKind, RampCategory, RampScenario,
};
use fpd::hierarchy::{ExtractorStack, StackConfig};
use fpd::linalg::{spd_sqrt, Matrix};
use fpd::metrics::{crps, crps_dataset, energy_score, fpd, median_bandwidth, mmd, GaussianEmbedding, Kernel, MetricName};
use fpd::nn::gradcheck::run_suite;
use fpd::pipeline::{evaluate, features, is_monotone, run_benchmark, synth_corpus, train_stack, EvalOptions, Sweep};
use fpd::training::TrainConfig;

const KINDS: [SourceKind; 4] = [SourceKind::Solar, SourceKind::Wind, SourceKind::Load, SourceKind::Ev];
const CORPUS_DAYS: usize = 60;
const CORPUS_SEED: u64 = 1;
const TRAIN_SEED: u64 = 3;
const BENCH_SEEDS: u64 = 10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.qr().q()
}

fn closed_form_frechet() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_1d = 0.0f64;
    for _ in 0..200 {
        let (m1, m2) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (s1, s2): (f64, f64) = (rng.random_range(0.01..4.0), rng.random_range(0.01..4.0));
        let g1 = GaussianEmbedding::from_moments(vec![m1], Matrix::from_diag(&[s1 * s1])).unwrap();
        let g2 = GaussianEmbedding::from_moments(vec![m2], Matrix::from_diag(&[s2 * s2])).unwrap();
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        worst_1d = worst_1d.max(rel_err(fpd(&g1, &g2).unwrap(), want));
    }
    let mut worst_8d = 0.0f64;
    for _ in 0..50 {
        let q = random_orthogonal(&mut rng, 8);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..5.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..5.0)).collect();
        let cov = |ev: &[f64]| {
            let mut c = &q * DMatrix::from_diagonal(&DVector::from_column_slice(ev)) * q.transpose();
            c = (&c + c.transpose()) * 0.5;
            from_na(&c)
        };
        let m1: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let m2: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let want = m1.iter().zip(&m2).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            + a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        let g1 = GaussianEmbedding::from_moments(m1, cov(&a)).unwrap();
        let g2 = GaussianEmbedding::from_moments(m2, cov(&b)).unwrap();
        worst_8d = worst_8d.max(rel_err(fpd(&g1, &g2).unwrap(), want));
    }
    outcome(
        worst_1d <= 1e-10 && worst_8d <= 1e-8,
        format!("max rel err 1-D {worst_1d:.2e} (limit 1e-10), 8-D {worst_8d:.2e} (limit 1e-8)"),
    )
}

fn identity_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=16);
        let n = rng.random_range(2..=512);
        let scale: f64 = rng.random_range(0.1..10.0);
        let z = random_matrix(&mut rng, n, d).scale(scale);
        let g = GaussianEmbedding::fit(&z).unwrap();
        worst = worst.max(fpd(&g, &g).unwrap().abs());
    }
    outcome(worst <= 1e-6, format!("max |fpd(Z, Z)| {worst:.2e} (limit 1e-6)"))
}

fn sqrt_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let n = 1 + i % 64;
        // eigenvalues spread over several decades
        let q = random_orthogonal(&mut rng, n);
        let ev: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-4.0..2.0))).collect();
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(ev)) * q.transpose();
        let a = from_na(&((&a + a.transpose()) * 0.5));
        let s = to_na(&spd_sqrt(&a).unwrap());
        let err = (&s * &s - to_na(&a)).norm() / a.frobenius_norm();
        worst = worst.max(err);
    }
    outcome(worst <= 1e-7, format!("max relative residual {worst:.2e} (limit 1e-7)"))
}

fn gradient_suite() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut cases = std::collections::BTreeSet::new();
    for seed in 0..25 {
        let report = run_suite(seed, None).unwrap();
        worst = worst.max(report.max_rel_err());
        for c in &report.checks {
            cases.insert(c.case.clone());
            if c.max_rel_err > 1e-4 {
                failures.push(format!("seed {seed} {} {}", c.case, c.tensor));
            }
        }
    }
    let covered = ["conv1d", "batchnorm1d", "relu", "linear", "global_avg_pool", "residual_block", "resnet_2_blocks"]
        .iter()
        .all(|c| cases.contains(*c));
    outcome(
        failures.is_empty() && covered,
        format!(
            "{} cases x 25 seeds, max rel err {worst:.2e} (limit 1e-4){}",
            cases.len(),
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join(", ")) }
        ),
    )
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn mmd_oracle(x: &Matrix<f64>, y: &Matrix<f64>, k: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
    let n = x.rows();
    let d = x.cols();
    let mut mean_term = 0.0;
    for c in 0..d {
        let mx: f64 = (0..n).map(|i| x.row(i)[c]).sum::<f64>() / n as f64;
        let my: f64 = (0..n).map(|i| y.row(i)[c]).sum::<f64>() / n as f64;
        mean_term += (mx - my).powi(2);
    }
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for i in 0..n {
        for j in 0..n {
            kxx += k(x.row(i), x.row(j));
            kyy += k(y.row(i), y.row(j));
            kxy += k(x.row(i), y.row(j));
        }
    }
    let nn = (n * n) as f64;
    mean_term + kxx / nn + kyy / nn - 2.0 * kxy / nn
}

fn median_oracle(x: &Matrix<f64>, y: &Matrix<f64>) -> f64 {
    let rows: Vec<&[f64]> = x.row_iter().chain(y.row_iter()).collect();
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(dist(rows[i], rows[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    if k % 2 == 1 {
        d[k / 2]
    } else {
        0.5 * (d[k / 2 - 1] + d[k / 2])
    }
}

fn crps_oracle(ens: &[Vec<f64>], obs: &[f64]) -> f64 {
    let m = ens.len() as f64;
    let mut total = 0.0;
    for (t, &y) in obs.iter().enumerate() {
        let mut a = 0.0;
        let mut b = 0.0;
        for ei in ens {
            a += (ei[t] - y).abs();
            for ej in ens {
                b += (ei[t] - ej[t]).abs();
            }
        }
        total += a / m - 0.5 * b / (m * m);
    }
    total / obs.len() as f64
}

fn energy_oracle(x: &Matrix<f64>, y: &Matrix<f64>) -> f64 {
    let mean = |a: &Matrix<f64>, b: &Matrix<f64>| {
        let mut s = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                s += dist(a.row(i), b.row(j));
            }
        }
        s / (a.rows() * b.rows()) as f64
    };
    mean(x, y) - 0.5 * mean(x, x) - 0.5 * mean(y, y)
}

fn brute_force_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 5];
    let close = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(1..=6);
        let x = random_matrix(&mut rng, n, d);
        let shift: f64 = rng.random_range(-1.0..1.0);
        let y = random_matrix(&mut rng, n, d).scale(1.5);
        let y = Matrix::from_fn(n, d, |i, j| y[(i, j)] + shift);

        let sigma = median_oracle(&x, &y);
        let rbf = |a: &[f64], b: &[f64]| (-dist(a, b).powi(2) / (2.0 * sigma * sigma)).exp();
        let lin = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        assert!((median_bandwidth(&x, &y) - sigma).abs() <= 1e-12 * sigma);
        let got = mmd(&x, &y, Kernel::Rbf { bandwidth: None }, false).unwrap();
        worst[0] = worst[0].max(close(got, mmd_oracle(&x, &y, &rbf)));
        let got = mmd(&x, &y, Kernel::Linear, false).unwrap();
        worst[1] = worst[1].max(close(got, mmd_oracle(&x, &y, &lin)));

        let ens: Vec<Vec<f64>> = x.row_iter().map(<[f64]>::to_vec).collect();
        let obs = y.row(0);
        worst[2] = worst[2].max(close(crps(&ens, obs).unwrap(), crps_oracle(&ens, obs)));
        let want = y.row_iter().map(|o| crps_oracle(&ens, o)).sum::<f64>() / n as f64;
        worst[3] = worst[3].max(close(crps_dataset(&y, &x).unwrap(), want));

        worst[4] = worst[4].max(close(energy_score(&x, &y).unwrap(), energy_oracle(&x, &y)));
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        max <= 1e-10,
        format!(
            "max err mmd_rbf {:.1e}, mmd_linear {:.1e}, crps {:.1e}, crps_dataset {:.1e}, energy {:.1e} (limit 1e-10)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

struct Trained {
    stack: ExtractorStack<f64>,
    corpus: Vec<SeriesBatch>,
    config: StackConfig,
    train: TrainConfig,
    train_time: Duration,
    summary: String,
}

fn train() -> Trained {
    let corpus = synth_corpus(&KINDS, CORPUS_DAYS, CORPUS_SEED).unwrap();
    let config = StackConfig::default();
    let train = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let (stack, histories) = train_stack::<f64>(config.clone(), &corpus, &train).unwrap();
    let train_time = t.elapsed();
    let summary = histories
        .iter()
        .map(|h| {
            let e = h.epochs.last().unwrap();
            format!("{} acc {:.2}/{:.2}", h.level, e.accuracy, e.val_accuracy.unwrap_or(f64::NAN))
        })
        .collect::<Vec<_>>()
        .join(", ");
    Trained {
        stack,
        corpus,
        config,
        train,
        train_time,
        summary,
    }
}

fn fpd_only() -> EvalOptions {
    EvalOptions {
        metrics: vec![MetricName::Fpd],
        ..EvalOptions::default()
    }
}

fn fpd_series(result: &fpd::pipeline::BenchmarkResult, kind: DisturbanceKind) -> Vec<f64> {
    result.series(kind, MetricName::Fpd).into_iter().map(|(_, v)| v).collect()
}

fn monotone_counts(t: &Trained, sweeps: &[Sweep], data: impl Fn(u64) -> (SeriesBatch, Option<SeriesBatch>)) -> Vec<(DisturbanceKind, u64)> {
    let mut counts: Vec<(DisturbanceKind, u64)> = sweeps.iter().map(|s| (s.kind, 0)).collect();
    for seed in 0..BENCH_SEEDS {
        let (x, aux) = data(seed);
        let r = run_benchmark(&t.stack, &x, aux.as_ref(), sweeps, &fpd_only(), seed).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        for (kind, n) in &mut counts {
            if is_monotone(&fpd_series(&r, *kind)) {
                *n += 1;
            }
        }
    }
    counts
}

fn format_counts(counts: &[(DisturbanceKind, u64)]) -> String {
    counts
        .iter()
        .map(|(k, n)| format!("{k} {n}/{BENCH_SEEDS}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn disturbance_monotonicity(t: &Trained) -> Outcome {
    let counts = monotone_counts(t, &Sweep::fig2(), |seed| {
        let x = synth_series(SourceKind::Wind, 320, Resolution::FiveMin, 1000 + seed).unwrap();
        let aux = synth_series(SourceKind::Solar, 100, Resolution::FiveMin, 2000 + seed).unwrap();
        (x, Some(aux))
    });
    outcome(
        counts.iter().all(|&(_, n)| n >= 9),
        format!("training {:.1?} ({}); {}", t.train_time, t.summary, format_counts(&counts)),
    )
}

fn fabrication_blind_spot(t: &Trained) -> Outcome {
    let x = synth_series(SourceKind::Wind, 320, Resolution::FiveMin, 1000).unwrap();
    let fab = moment_matched_fabricate(&x, 0).unwrap().batch;
    let heavy = gaussian_noise(&x, 1.6, 0).unwrap();
    let light = gaussian_noise(&x, 0.16, 0).unwrap();
    let opts = EvalOptions {
        metrics: vec![MetricName::Fpd, MetricName::RawFrechet],
        ..EvalOptions::default()
    };
    let e_fab = evaluate(&t.stack, &x, &fab, &opts).unwrap().values;
    let e_heavy = evaluate(&t.stack, &x, &heavy, &opts).unwrap().values;
    let e_light = evaluate(&t.stack, &x, &light, &opts).unwrap().values;
    let raw_fab = e_fab[&MetricName::RawFrechet];
    let raw_heavy = e_heavy[&MetricName::RawFrechet];
    let fpd_fab = e_fab[&MetricName::Fpd];
    let fpd_light = e_light[&MetricName::Fpd];
    outcome(
        raw_fab < raw_heavy && fpd_fab > fpd_light,
        format!(
            "raw_frechet fabricated {raw_fab:.4} vs noise(1.6) {raw_heavy:.1}; fpd fabricated {fpd_fab:.4} vs noise(0.16) {fpd_light:.1}"
        ),
    )
}

fn solar_plausibility(t: &Trained) -> Outcome {
    let counts = monotone_counts(t, &Sweep::solar(), |seed| {
        (synth_series(SourceKind::Solar, 100, Resolution::FiveMin, 3000 + seed).unwrap(), None)
    });
    outcome(counts.iter().all(|&(_, n)| n >= 9), format_counts(&counts))
}

fn ramp_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0usize;
    for scenario in [RampScenario::One, RampScenario::Two] {
        let [a, b, c] = scenario.thresholds();
        // closed-interval table, one predicate per category
        let table: [(RampCategory, Box<dyn Fn(f64) -> bool>); 7] = [
            (RampCategory::StrongDown, Box::new(move |r| r < -c)),
            (RampCategory::ModerateDown, Box::new(move |r| -c <= r && r < -b)),
            (RampCategory::MildDown, Box::new(move |r| -b <= r && r < -a)),
            (RampCategory::Neutral, Box::new(move |r| -a <= r && r <= a)),
            (RampCategory::MildUp, Box::new(move |r| a < r && r <= b)),
            (RampCategory::ModerateUp, Box::new(move |r| b < r && r <= c)),
            (RampCategory::StrongUp, Box::new(move |r| r > c)),
        ];
        let edges = [-c, -b, -a, 0.0, a, b, c];
        for i in 0..1_000_000 {
            let r = if i < 7 { edges[i] } else { rng.random_range(-1.0..1.0) };
            let hits: Vec<RampCategory> = table.iter().filter(|(_, f)| f(r)).map(|(k, _)| *k).collect();
            if hits.len() != 1 || classify_ramp(r, scenario).unwrap() != hits[0] {
                bad += 1;
            }
        }
    }
    let examples = [
        (0.6, RampScenario::One, RampCategory::StrongUp),
        (0.0, RampScenario::One, RampCategory::Neutral),
        (0.0, RampScenario::Two, RampCategory::Neutral),
        (-0.25, RampScenario::Two, RampCategory::ModerateDown),
    ];
    let wrong: Vec<String> = examples
        .iter()
        .filter(|(r, s, want)| ramp_label(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.5 + r], 1.0, *s).unwrap() != *want)
        .map(|(r, s, _)| format!("r={r} {s:?}"))
        .collect();
    outcome(
        bad == 0 && wrong.is_empty(),
        format!("{bad} of 2000000 rates misclassified; examples wrong: {wrong:?}"),
    )
}

fn determinism(t: &Trained) -> Outcome {
    let first = encode_stack(&t.stack).unwrap();
    let (again, _) = train_stack::<f64>(t.config.clone(), &t.corpus, &t.train).unwrap();
    let second = encode_stack(&again).unwrap();
    let loaded: ExtractorStack<f64> = decode_stack(&first).unwrap();
    let x = synth_series(SourceKind::Load, 20, Resolution::FiveMin, 77).unwrap();
    let before = features(&t.stack, &x, Resolution::FiveMin, Resolution::Daily).unwrap();
    let after = features(&loaded, &x, Resolution::FiveMin, Resolution::Daily).unwrap();
    let identical = first == second;
    let exact = before == after;
    outcome(
        identical && exact,
        format!(
            "artifact {} bytes, retrain identical: {identical}, reload features exact: {exact}",
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, limit: Duration, run: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = run();
        let took = t.elapsed();
        let passed = o.passed && took <= limit;
        if !passed {
            failed += 1;
        }
        let timing = if took <= limit {
            format!("{took:.1?}")
        } else {
            format!("{took:.1?}, over the {limit:?} limit")
        };
        println!(
            "criterion {id:>2} {name:<34} {} [{timing}] {}",
            if passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    let secs = Duration::from_secs;
    report(1, "closed-form frechet oracle", secs(5), &mut closed_form_frechet);
    report(2, "identity law", secs(5), &mut identity_law);
    report(3, "spd square-root round trip", secs(30), &mut sqrt_round_trip);
    report(4, "gradient suite", secs(120), &mut gradient_suite);
    report(5, "brute-force metric equivalence", secs(10), &mut brute_force_metrics);
    let mut trained = None;
    report(6, "disturbance monotonicity", secs(15 * 60), &mut || {
        let t = trained.insert(train());
        disturbance_monotonicity(t)
    });
    let t = trained.expect("criterion 6 trains the stack");
    report(7, "fabrication blind spot", secs(120), &mut || fabrication_blind_spot(&t));
    report(8, "solar plausibility probes", secs(5 * 60), &mut || solar_plausibility(&t));
    report(9, "ramp category partition", secs(2), &mut ramp_partition);
    report(10, "determinism and persistence", secs(12 * 60), &mut || determinism(&t));
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
