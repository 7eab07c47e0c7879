//! Central finite-difference verification of the analytic gradients.
//!
//! Each case wraps a layer (or a small network) in a [`Network`], contracts
//! its output with fixed random weights to get a scalar loss, and compares
//! every analytic parameter/input gradient with `(L(θ+h) − L(θ−h)) / 2h`.
//! Perturbations that flip a ReLU mask straddle a kink where the loss is not
//! differentiable; those elements are skipped and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ConvSpec, LayerSpec, Mode, Module, Network, Tensor3};
use super::loss::{mse, softmax_cross_entropy};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gradient magnitude below which a tensor is compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub case: String,
    pub tensor: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.checks.iter().filter(|c| c.max_rel_err > self.tolerance)
    }
}

/// Max elementwise error scaled by the larger of the two gradients' max-norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(SCALE_FLOOR, |acc, v| acc.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn loss_of(net: &mut Network<f64>, x: &Tensor3<f64>, w: &[f64]) -> Result<(f64, u64)> {
    let y = net.forward(x, Mode::Train)?;
    let loss = y.as_slice().iter().zip(w).map(|(a, b)| a * b).sum();
    Ok((loss, net.activation_signature()))
}

/// Compares analytic and numeric gradients for every parameter tensor of
/// `net` and for the input `x`. `corrupt` scales the analytic gradient of
/// the first parameter tensor, for exercising the failure path.
pub fn check_network(
    case: &str,
    net: &mut Network<f64>,
    x: &Tensor3<f64>,
    rng: &mut ChaCha8Rng,
    step: f64,
    corrupt: bool,
) -> Result<Vec<TensorCheck>> {
    let probe = net.infer(x).or_else(|_| net.forward(x, Mode::Train))?;
    let w: Vec<f64> = (0..probe.as_slice().len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let w_t = Tensor3::new(probe.batch(), probe.channels(), probe.length(), w.clone())?;

    net.zero_grad();
    let (_, base_sig) = loss_of(net, x, &w)?;
    let dx = net.backward(&w_t)?;
    let mut analytic: Vec<(String, Vec<f64>)> = net
        .params_and_grads()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("{i}:{}", p.name), p.grad.clone()))
        .collect();
    if corrupt {
        if let Some((_, g)) = analytic.first_mut() {
            g.iter_mut().for_each(|v| *v = *v * 1.05 + 1e-3);
        }
    }

    let mut out = Vec::new();
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        let mut keep = vec![true; grad.len()];
        for j in 0..grad.len() {
            let orig = net.params_and_grads()[ti].value[j];
            net.params_and_grads()[ti].value[j] = orig + step;
            let (lp, sp) = loss_of(net, x, &w)?;
            net.params_and_grads()[ti].value[j] = orig - step;
            let (lm, sm) = loss_of(net, x, &w)?;
            net.params_and_grads()[ti].value[j] = orig;
            numeric[j] = (lp - lm) / (2.0 * step);
            keep[j] = sp == base_sig && sm == base_sig;
        }
        out.push(summarize(case, name, grad, &numeric, &keep));
    }

    let mut xp = x.clone();
    let mut numeric = vec![0.0; x.as_slice().len()];
    let mut keep = vec![true; numeric.len()];
    for j in 0..numeric.len() {
        let orig = xp.as_slice()[j];
        xp.as_mut_slice()[j] = orig + step;
        let (lp, sp) = loss_of(net, &xp, &w)?;
        xp.as_mut_slice()[j] = orig - step;
        let (lm, sm) = loss_of(net, &xp, &w)?;
        xp.as_mut_slice()[j] = orig;
        numeric[j] = (lp - lm) / (2.0 * step);
        keep[j] = sp == base_sig && sm == base_sig;
    }
    out.push(summarize(case, "input", dx.as_slice(), &numeric, &keep));
    Ok(out)
}

fn summarize(case: &str, tensor: &str, analytic: &[f64], numeric: &[f64], keep: &[bool]) -> TensorCheck {
    let (a, n): (Vec<f64>, Vec<f64>) = analytic
        .iter()
        .zip(numeric)
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((&a, &n), _)| (a, n))
        .unzip();
    TensorCheck {
        case: case.to_string(),
        tensor: tensor.to_string(),
        max_rel_err: relative_error(&a, &n),
        checked: a.len(),
        skipped: analytic.len() - a.len(),
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, b: usize, c: usize, l: usize) -> Tensor3<f64> {
    let data = (0..b * c * l).map(|_| rng.sample(StandardNormal)).collect();
    Tensor3::new(b, c, l, data).expect("finite")
}

/// Network cases covered by the suite: every layer kind on its own plus a
/// two-block residual network.
pub fn suite_cases() -> Vec<(&'static str, Vec<LayerSpec>, (usize, usize, usize))> {
    vec![
        ("conv1d", vec![LayerSpec::Conv1d(ConvSpec::new(3, 4, 3, 1, 1))], (2, 3, 7)),
        ("conv1d_stride2", vec![LayerSpec::Conv1d(ConvSpec::new(2, 3, 3, 2, 1))], (2, 2, 8)),
        ("batchnorm1d", vec![LayerSpec::Batchnorm1d { channels: 3 }], (3, 3, 5)),
        ("relu", vec![LayerSpec::Relu], (2, 3, 5)),
        (
            "linear",
            vec![LayerSpec::Linear {
                in_features: 12,
                out_features: 4,
            }],
            (3, 3, 4),
        ),
        ("global_avg_pool", vec![LayerSpec::GlobalAvgPool], (2, 3, 5)),
        (
            "residual_block",
            vec![LayerSpec::ResidualBlock {
                in_channels: 3,
                out_channels: 3,
                stride: 1,
                projection: false,
            }],
            (3, 3, 6),
        ),
        (
            "residual_block_projection",
            vec![LayerSpec::ResidualBlock {
                in_channels: 2,
                out_channels: 4,
                stride: 2,
                projection: true,
            }],
            (3, 2, 8),
        ),
        (
            "resnet_2_blocks",
            vec![
                LayerSpec::Conv1d(ConvSpec::new(2, 4, 3, 1, 1)),
                LayerSpec::Batchnorm1d { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::ResidualBlock {
                    in_channels: 4,
                    out_channels: 4,
                    stride: 1,
                    projection: false,
                },
                LayerSpec::ResidualBlock {
                    in_channels: 4,
                    out_channels: 4,
                    stride: 1,
                    projection: false,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear {
                    in_features: 4,
                    out_features: 3,
                },
            ],
            (4, 2, 6),
        ),
    ]
}

fn check_losses(rng: &mut ChaCha8Rng, step: f64) -> Result<Vec<TensorCheck>> {
    let logits: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
    let label = rng.random_range(0..5);
    let (_, analytic) = softmax_cross_entropy(&logits, label)?;
    let mut numeric = vec![0.0; logits.len()];
    for j in 0..logits.len() {
        let mut p = logits.clone();
        p[j] += step;
        let lp = softmax_cross_entropy(&p, label)?.0;
        p[j] -= 2.0 * step;
        let lm = softmax_cross_entropy(&p, label)?.0;
        numeric[j] = (lp - lm) / (2.0 * step);
    }
    let keep = vec![true; numeric.len()];
    let ce = summarize("softmax_cross_entropy", "logits", &analytic, &numeric, &keep);

    let pred: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
    let target: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
    let (_, analytic) = mse(&pred, &target)?;
    let mut numeric = vec![0.0; pred.len()];
    for j in 0..pred.len() {
        let mut p = pred.clone();
        p[j] += step;
        let lp = mse(&p, &target)?.0;
        p[j] -= 2.0 * step;
        let lm = mse(&p, &target)?.0;
        numeric[j] = (lp - lm) / (2.0 * step);
    }
    let keep = vec![true; numeric.len()];
    Ok(vec![ce, summarize("mse", "prediction", &analytic, &numeric, &keep)])
}

/// Runs every case for one seed. `corrupt_case` names a case whose analytic
/// gradient is deliberately perturbed.
pub fn run_suite(seed: u64, corrupt_case: Option<&str>) -> Result<GradCheckReport> {
    let cases = suite_cases();
    if let Some(name) = corrupt_case {
        if !cases.iter().any(|(case, ..)| *case == name) {
            let names: Vec<_> = cases.iter().map(|(case, ..)| *case).collect();
            return Err(Error::invalid(format!("unknown case '{name}' (expected one of {})", names.join(", "))));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (case, specs, (b, c, l)) in cases {
        let mut net = Network::build(&specs, &mut rng)?;
        perturb_batchnorm(&mut net, &mut rng);
        let x = random_tensor(&mut rng, b, c, l);
        checks.extend(check_network(
            case,
            &mut net,
            &x,
            &mut rng,
            DEFAULT_STEP,
            corrupt_case == Some(case),
        )?);
    }
    checks.extend(check_losses(&mut rng, DEFAULT_STEP)?);
    Ok(GradCheckReport {
        seed,
        step: DEFAULT_STEP,
        tolerance: DEFAULT_TOLERANCE,
        checks,
    })
}

// Moves γ/β away from (1, 0) so their gradients are exercised off the
// initialization point.
fn perturb_batchnorm(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    for p in net.params_and_grads() {
        if p.name == "gamma" || p.name == "beta" {
            for v in p.value.iter_mut() {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}
