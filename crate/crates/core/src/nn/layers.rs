//! Primitive layers: 1-d convolution, 1-d batch normalization, ReLU,
//! fully-connected and global average pooling.

use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;
use super::{Mode, Module, ParamGrad};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Operand, Scalar};

fn shape_err(layer: &str, detail: String) -> Error {
    Error::Shape {
        layer: layer.to_string(),
        detail,
    }
}

/// Kaiming-uniform fan-in initialization, `U(-√(6/fan_in), √(6/fan_in))`.
pub(crate) fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_length(&self, length: usize) -> Option<usize> {
        let padded = length + 2 * self.padding;
        if self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

struct ConvCache<T> {
    batch: usize,
    length: usize,
    cols: Vec<T>,
}

/// 1-d convolution over `(batch, channels, length)` inputs, evaluated as a
/// single GEMM over an im2col buffer spanning the whole batch.
pub struct Conv1d<T> {
    pub spec: ConvSpec,
    /// `(out_channels, in_channels * kernel)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    grad_weight: Vec<T>,
    grad_bias: Vec<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.in_channels * spec.kernel;
        let weight = kaiming_uniform(spec.out_channels * fan_in, fan_in, rng);
        Self::with_weights(spec, weight, vec![T::zero(); spec.out_channels])
    }

    pub fn with_weights(spec: ConvSpec, weight: Vec<T>, bias: Vec<T>) -> Self {
        assert_eq!(weight.len(), spec.out_channels * spec.in_channels * spec.kernel);
        assert_eq!(bias.len(), spec.out_channels);
        Self {
            grad_weight: vec![T::zero(); weight.len()],
            grad_bias: vec![T::zero(); bias.len()],
            spec,
            weight,
            bias,
            cache: None,
        }
    }

    fn check(&self, x: &Tensor3<T>) -> Result<usize> {
        if x.channels() != self.spec.in_channels {
            return Err(shape_err(
                "conv1d",
                format!("expected {} input channels, got {}", self.spec.in_channels, x.channels()),
            ));
        }
        self.spec.output_length(x.length()).ok_or_else(|| {
            shape_err(
                "conv1d",
                format!("input length {} too short for kernel {}", x.length(), self.spec.kernel),
            )
        })
    }

    fn im2col(&self, x: &Tensor3<T>, lout: usize) -> Vec<T> {
        let ConvSpec {
            in_channels: cin,
            kernel: k,
            stride: s,
            padding: p,
            ..
        } = self.spec;
        let (b, _, l) = x.shape();
        let width = b * lout;
        let mut cols = vec![T::zero(); cin * k * width];
        for c in 0..cin {
            for j in 0..k {
                let row = &mut cols[(c * k + j) * width..(c * k + j + 1) * width];
                for bi in 0..b {
                    let src = &x.as_slice()[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                    for t in 0..lout {
                        let pos = t * s + j;
                        if pos >= p && pos - p < l {
                            row[bi * lout + t] = src[pos - p];
                        }
                    }
                }
            }
        }
        cols
    }

    fn apply(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Vec<T>)> {
        let lout = self.check(x)?;
        let b = x.batch();
        let cout = self.spec.out_channels;
        let fan_in = self.spec.in_channels * self.spec.kernel;
        let cols = self.im2col(x, lout);
        let width = b * lout;
        let mut tmp = vec![T::zero(); cout * width];
        gemm(
            T::one(),
            Operand::new(&self.weight, cout, fan_in),
            Operand::new(&cols, fan_in, width),
            T::zero(),
            &mut tmp,
        );
        let mut out = vec![T::zero(); b * cout * lout];
        for o in 0..cout {
            let bias = self.bias[o];
            for bi in 0..b {
                let src = &tmp[o * width + bi * lout..o * width + (bi + 1) * lout];
                let dst = &mut out[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bias;
                }
            }
        }
        Ok((Tensor3::from_parts(b, cout, lout, out), cols))
    }
}

impl<T: Scalar> Module<T> for Conv1d<T> {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        let (y, cols) = self.apply(x)?;
        self.cache = match mode {
            Mode::Train => Some(ConvCache {
                batch: x.batch(),
                length: x.length(),
                cols,
            }),
            Mode::Eval => None,
        };
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.apply(x).map(|(y, _)| y)
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let cache = self.cache.take().ok_or_else(|| Error::MissingCache("conv1d".into()))?;
        let ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride: s,
            padding: p,
        } = self.spec;
        let b = cache.batch;
        let l = cache.length;
        let lout = self.spec.output_length(l).expect("validated in forward");
        if grad.shape() != (b, cout, lout) {
            return Err(shape_err(
                "conv1d",
                format!("upstream gradient {:?}, expected {:?}", grad.shape(), (b, cout, lout)),
            ));
        }
        let width = b * lout;
        let fan_in = cin * k;
        let mut g = vec![T::zero(); cout * width];
        for o in 0..cout {
            let mut bsum = T::zero();
            for bi in 0..b {
                let src = &grad.as_slice()[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                g[o * width + bi * lout..o * width + (bi + 1) * lout].copy_from_slice(src);
                bsum += src.iter().copied().sum::<T>();
            }
            self.grad_bias[o] += bsum;
        }
        gemm(
            T::one(),
            Operand::new(&g, cout, width),
            Operand::new(&cache.cols, fan_in, width).t(),
            T::one(),
            &mut self.grad_weight,
        );
        let mut dcols = vec![T::zero(); fan_in * width];
        gemm(
            T::one(),
            Operand::new(&self.weight, cout, fan_in).t(),
            Operand::new(&g, cout, width),
            T::zero(),
            &mut dcols,
        );
        let mut dx = vec![T::zero(); b * cin * l];
        for c in 0..cin {
            for j in 0..k {
                let row = &dcols[(c * k + j) * width..(c * k + j + 1) * width];
                for bi in 0..b {
                    let dst = &mut dx[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                    for t in 0..lout {
                        let pos = t * s + j;
                        if pos >= p && pos - p < l {
                            dst[pos - p] += row[bi * lout + t];
                        }
                    }
                }
            }
        }
        Ok(Tensor3::from_parts(b, cin, l, dx))
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        vec![
            ParamGrad::new("weight", &mut self.weight, &mut self.grad_weight),
            ParamGrad::new("bias", &mut self.bias, &mut self.grad_bias),
        ]
    }

    fn state(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

struct BnCache<T> {
    shape: (usize, usize, usize),
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch normalization over the batch and length axes, per channel.
pub struct BatchNorm1d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
    grad_gamma: Vec<T>,
    grad_beta: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::of(0.1),
            eps: T::of(1e-5),
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            cache: None,
        }
    }

    fn check(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels() != self.channels {
            return Err(shape_err(
                "batchnorm1d",
                format!("expected {} channels, got {}", self.channels, x.channels()),
            ));
        }
        if x.batch() * x.length() == 0 {
            return Err(Error::Empty("batchnorm1d input".into()));
        }
        Ok(())
    }

    fn normalize_with(&self, x: &Tensor3<T>, mean: &[T], inv_std: &[T]) -> (Vec<T>, Vec<T>) {
        let (b, c, l) = x.shape();
        let mut xhat = vec![T::zero(); x.as_slice().len()];
        let mut y = vec![T::zero(); x.as_slice().len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * l;
                for t in 0..l {
                    let h = (x.as_slice()[off + t] - mean[ch]) * inv_std[ch];
                    xhat[off + t] = h;
                    y[off + t] = self.gamma[ch] * h + self.beta[ch];
                }
            }
        }
        (xhat, y)
    }

    fn batch_stats(x: &Tensor3<T>) -> (Vec<T>, Vec<T>) {
        let (b, c, l) = x.shape();
        let n = T::of((b * l) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s += x.as_slice()[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter().copied().sum::<T>();
            }
            let m = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                for &val in &x.as_slice()[(bi * c + ch) * l..(bi * c + ch + 1) * l] {
                    v += (val - m) * (val - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / n;
        }
        (mean, var)
    }
}

impl<T: Scalar> Module<T> for BatchNorm1d<T> {
    fn name(&self) -> &'static str {
        "batchnorm1d"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        if mode == Mode::Eval {
            self.cache = None;
            return self.infer(x);
        }
        self.check(x)?;
        let (mean, var) = Self::batch_stats(x);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let (xhat, y) = self.normalize_with(x, &mean, &inv_std);
        let n = x.batch() * x.length();
        let unbias = if n > 1 {
            T::of(n as f64 / (n - 1) as f64)
        } else {
            T::one()
        };
        let keep = T::one() - self.momentum;
        for ch in 0..self.channels {
            self.running_mean[ch] = keep * self.running_mean[ch] + self.momentum * mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + self.momentum * var[ch] * unbias;
        }
        self.cache = Some(BnCache {
            shape: x.shape(),
            xhat,
            inv_std,
        });
        let (b, c, l) = x.shape();
        Ok(Tensor3::from_parts(b, c, l, y))
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(x)?;
        let inv_std: Vec<T> = self
            .running_var
            .iter()
            .map(|&v| T::one() / (v + self.eps).sqrt())
            .collect();
        let (_, y) = self.normalize_with(x, &self.running_mean, &inv_std);
        let (b, c, l) = x.shape();
        Ok(Tensor3::from_parts(b, c, l, y))
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::MissingCache("batchnorm1d".into()))?;
        if grad.shape() != cache.shape {
            return Err(shape_err(
                "batchnorm1d",
                format!("upstream gradient {:?}, expected {:?}", grad.shape(), cache.shape),
            ));
        }
        let (b, c, l) = cache.shape;
        let n = T::of((b * l) as f64);
        let g = grad.as_slice();
        let mut dx = vec![T::zero(); g.len()];
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * l;
                for t in 0..l {
                    sum_dy += g[off + t];
                    sum_dy_xhat += g[off + t] * cache.xhat[off + t];
                }
            }
            self.grad_beta[ch] += sum_dy;
            self.grad_gamma[ch] += sum_dy_xhat;
            let gamma = self.gamma[ch];
            let scale = gamma * cache.inv_std[ch] / n;
            for bi in 0..b {
                let off = (bi * c + ch) * l;
                for t in 0..l {
                    dx[off + t] = scale * (n * g[off + t] - sum_dy - cache.xhat[off + t] * sum_dy_xhat);
                }
            }
        }
        Ok(Tensor3::from_parts(b, c, l, dx))
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        vec![
            ParamGrad::new("gamma", &mut self.gamma, &mut self.grad_gamma),
            ParamGrad::new("beta", &mut self.beta, &mut self.grad_beta),
        ]
    }

    fn state(&self) -> Vec<&[T]> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<(usize, usize, usize, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hash of the most recent train-mode activation pattern.
    pub(crate) fn hash_pattern<H: Hasher>(&self, state: &mut H) {
        if let Some((_, _, _, mask)) = &self.mask {
            mask.hash(state);
        }
    }
}

impl<T: Scalar> Module<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        let y = <Self as Module<T>>::infer(self, x)?;
        self.mask = match mode {
            Mode::Train => {
                let (b, c, l) = x.shape();
                Some((b, c, l, x.as_slice().iter().map(|&v| v > T::zero()).collect()))
            }
            Mode::Eval => None,
        };
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let (b, c, l) = x.shape();
        let data = x.as_slice().iter().map(|&v| v.max(T::zero())).collect();
        Ok(Tensor3::from_parts(b, c, l, data))
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let (b, c, l, mask) = self.mask.take().ok_or_else(|| Error::MissingCache("relu".into()))?;
        if grad.shape() != (b, c, l) {
            return Err(shape_err(
                "relu",
                format!("upstream gradient {:?}, expected {:?}", grad.shape(), (b, c, l)),
            ));
        }
        let data = grad
            .as_slice()
            .iter()
            .zip(&mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Ok(Tensor3::from_parts(b, c, l, data))
    }
}

/// Fully-connected layer over the flattened `(channels, length)` sample;
/// emits `(batch, out_features, 1)`.
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    grad_weight: Vec<T>,
    grad_bias: Vec<T>,
    cache: Option<Tensor3<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let weight = kaiming_uniform(in_features * out_features, in_features, rng);
        Self::with_weights(in_features, out_features, weight, vec![T::zero(); out_features])
    }

    pub fn with_weights(in_features: usize, out_features: usize, weight: Vec<T>, bias: Vec<T>) -> Self {
        assert_eq!(weight.len(), in_features * out_features);
        assert_eq!(bias.len(), out_features);
        Self {
            in_features,
            out_features,
            grad_weight: vec![T::zero(); weight.len()],
            grad_bias: vec![T::zero(); bias.len()],
            weight,
            bias,
            cache: None,
        }
    }

    fn check(&self, x: &Tensor3<T>) -> Result<()> {
        if x.sample_len() != self.in_features {
            return Err(shape_err(
                "linear",
                format!(
                    "expected {} input features, got {} ({} x {})",
                    self.in_features,
                    x.sample_len(),
                    x.channels(),
                    x.length()
                ),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(x)?;
        let b = x.batch();
        let mut out = Vec::with_capacity(b * self.out_features);
        for _ in 0..b {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            T::one(),
            Operand::new(x.as_slice(), b, self.in_features),
            Operand::new(&self.weight, self.out_features, self.in_features).t(),
            T::one(),
            &mut out,
        );
        Ok(Tensor3::from_parts(b, self.out_features, 1, out))
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let x = self.cache.take().ok_or_else(|| Error::MissingCache("linear".into()))?;
        let b = x.batch();
        if grad.batch() != b || grad.sample_len() != self.out_features {
            return Err(shape_err(
                "linear",
                format!(
                    "upstream gradient {:?}, expected ({b}, {}, 1)",
                    grad.shape(),
                    self.out_features
                ),
            ));
        }
        let g = grad.as_slice();
        gemm(
            T::one(),
            Operand::new(g, b, self.out_features).t(),
            Operand::new(x.as_slice(), b, self.in_features),
            T::one(),
            &mut self.grad_weight,
        );
        for row in g.chunks(self.out_features) {
            for (gb, &v) in self.grad_bias.iter_mut().zip(row) {
                *gb += v;
            }
        }
        let mut dx = vec![T::zero(); b * self.in_features];
        gemm(
            T::one(),
            Operand::new(g, b, self.out_features),
            Operand::new(&self.weight, self.out_features, self.in_features),
            T::zero(),
            &mut dx,
        );
        Ok(Tensor3::from_parts(b, x.channels(), x.length(), dx))
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        vec![
            ParamGrad::new("weight", &mut self.weight, &mut self.grad_weight),
            ParamGrad::new("bias", &mut self.bias, &mut self.grad_bias),
        ]
    }

    fn state(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Mean over the length axis: `(batch, channels, length) -> (batch, channels, 1)`.
#[derive(Default)]
pub struct GlobalAvgPool {
    cached: Option<(usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        let y = <Self as Module<T>>::infer(self, x)?;
        self.cached = (mode == Mode::Train).then(|| x.shape());
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let (b, c, l) = x.shape();
        if l == 0 {
            return Err(shape_err("global_avg_pool", "zero-length input".into()));
        }
        let n = T::of(l as f64);
        let data = x
            .as_slice()
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() / n)
            .collect();
        Ok(Tensor3::from_parts(b, c, 1, data))
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let (b, c, l) = self
            .cached
            .take()
            .ok_or_else(|| Error::MissingCache("global_avg_pool".into()))?;
        if grad.shape() != (b, c, 1) {
            return Err(shape_err(
                "global_avg_pool",
                format!("upstream gradient {:?}, expected {:?}", grad.shape(), (b, c, 1)),
            ));
        }
        let n = T::of(l as f64);
        let mut dx = Vec::with_capacity(b * c * l);
        for &g in grad.as_slice() {
            dx.extend(std::iter::repeat_n(g / n, l));
        }
        Ok(Tensor3::from_parts(b, c, l, dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_forward_and_mask() {
        let mut relu = Relu::new();
        let x = Tensor3::new(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0, 2.0]);

        let x = Tensor3::new(1, 1, 2, vec![-1.0, 2.0]).unwrap();
        relu.forward(&x, Mode::Train).unwrap();
        let g = Tensor3::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(relu.backward(&g).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn identity_conv_is_identity() {
        let conv = Conv1d::with_weights(ConvSpec::new(1, 1, 1, 1, 0), vec![1.0], vec![0.0]);
        let x = Tensor3::new(2, 1, 4, vec![1.0, -2.0, 3.0, 0.5, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(conv.infer(&x).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(3, 4, 3, 2, 1);
        let conv = Conv1d::<f64>::new(spec, &mut rng);
        let x = Tensor3::new(2, 3, 9, (0..54).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = conv.infer(&x).unwrap();
        let lout = spec.output_length(9).unwrap();
        assert_eq!(y.shape(), (2, 4, lout));
        for b in 0..2 {
            for o in 0..4 {
                for t in 0..lout {
                    let mut acc = conv.bias[o];
                    for c in 0..3 {
                        for j in 0..3 {
                            let pos = (t * 2 + j) as isize - 1;
                            if (0..9).contains(&pos) {
                                acc += conv.weight[(o * 3 + c) * 3 + j] * x.at(b, c, pos as usize);
                            }
                        }
                    }
                    assert!((acc - y.at(b, o, t)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv1d::<f64>::new(ConvSpec::new(2, 2, 3, 1, 1), &mut rng);
        let x = Tensor3::zeros(1, 3, 5);
        assert!(matches!(conv.forward(&x, Mode::Train), Err(Error::Shape { .. })));
    }

    #[test]
    fn batchnorm_train_mode_standardizes() {
        // Per-channel mean 5, variance 4: values 5 ± 2.
        let data: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 3.0 } else { 7.0 }).collect();
        let x = Tensor3::new(4, 1, 4, data).unwrap();
        let mut bn = BatchNorm1d::new(1);
        bn.gamma[0] = 1.5;
        bn.beta[0] = 0.25;
        let y = bn.forward(&x, Mode::Train).unwrap();
        let n = y.as_slice().len() as f64;
        let mean = y.as_slice().iter().sum::<f64>() / n;
        let var = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 0.25).abs() < 1e-12);
        // Oracle: 1.5 · 2/√(4+eps).
        let expected_std = 1.5 * 2.0 / (4.0f64 + 1e-5).sqrt();
        assert!((var.sqrt() - expected_std).abs() < 1e-9);
        assert!((bn.running_mean[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_half_squared_norm_gradient() {
        // loss = ½‖Wx‖², so dL/dW = y xᵀ.
        let mut lin = Linear::with_weights(3, 2, vec![1.0, 2.0, 0.0, -1.0, 0.5, 3.0], vec![0.0, 0.0]);
        let x = Tensor3::new(1, 3, 1, vec![1.0, -1.0, 2.0]).unwrap();
        let y = lin.forward(&x, Mode::Train).unwrap();
        lin.backward(&y).unwrap();
        let expected: Vec<f64> = (0..2)
            .flat_map(|o| (0..3).map(move |i| (o, i)))
            .map(|(o, i)| y.as_slice()[o] * x.as_slice()[i])
            .collect();
        let grads = lin.params_and_grads();
        assert_eq!(grads[0].grad.as_slice(), expected.as_slice());
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut lin = Linear::<f64>::with_weights(1, 1, vec![1.0], vec![0.0]);
        let g = Tensor3::zeros(1, 1, 1);
        assert!(matches!(lin.backward(&g), Err(Error::MissingCache(_))));
        let x = Tensor3::zeros(1, 1, 1);
        lin.forward(&x, Mode::Eval).unwrap();
        assert!(matches!(lin.backward(&g), Err(Error::MissingCache(_))));
    }
}
