//! Small trainable network toolkit with exact reverse-mode gradients.
//!
//! Layers cache what they need during a train-mode `forward` and consume it
//! in `backward`. `infer` is the immutable eval-mode path used by frozen
//! extractors, so a trained network can be shared across threads.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod residual;
pub mod tensor;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use layers::{BatchNorm1d, Conv1d, ConvSpec, GlobalAvgPool, Linear, Relu};
pub use loss::{mse, softmax, softmax_cross_entropy};
pub use residual::ResidualBlock;
pub use tensor::Tensor3;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter tensor together with its gradient accumulator.
pub struct ParamGrad<'a, T> {
    pub name: &'static str,
    pub value: &'a mut Vec<T>,
    pub grad: &'a mut Vec<T>,
}

impl<'a, T> ParamGrad<'a, T> {
    pub fn new(name: &'static str, value: &'a mut Vec<T>, grad: &'a mut Vec<T>) -> Self {
        Self { name, value, grad }
    }
}

pub trait Module<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Forward pass. In train mode the layer caches what `backward` needs
    /// and batchnorm updates its running statistics.
    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>>;

    /// Eval-mode forward pass without side effects.
    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>>;

    /// Consumes the train-mode cache, accumulates parameter gradients and
    /// returns the gradient with respect to the input.
    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>>;

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        Vec::new()
    }

    /// Parameters followed by buffers, in a fixed order.
    fn state(&self) -> Vec<&[T]> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_and_grads() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }
}

impl<T: Scalar, M: Module<T> + ?Sized> Module<T> for Box<M> {
    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        (**self).forward(x, mode)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        (**self).infer(x)
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        (**self).backward(grad)
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        (**self).params_and_grads()
    }

    fn state(&self) -> Vec<&[T]> {
        (**self).state()
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        (**self).state_mut()
    }
}

/// Serializable description of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d(ConvSpec),
    Batchnorm1d {
        channels: usize,
    },
    Relu,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    GlobalAvgPool,
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        projection: bool,
    },
}

pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    BatchNorm1d(BatchNorm1d<T>),
    Relu(Relu),
    Linear(Linear<T>),
    GlobalAvgPool(GlobalAvgPool),
    Residual(Box<ResidualBlock<T>>),
}

macro_rules! dispatch {
    ($self:expr, $inner:ident => $body:expr) => {
        match $self {
            Layer::Conv1d($inner) => $body,
            Layer::BatchNorm1d($inner) => $body,
            Layer::Relu($inner) => $body,
            Layer::Linear($inner) => $body,
            Layer::GlobalAvgPool($inner) => $body,
            Layer::Residual($inner) => $body,
        }
    };
}

impl<T: Scalar> Layer<T> {
    pub fn build<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv1d(s) => Layer::Conv1d(Conv1d::new(s, rng)),
            LayerSpec::Batchnorm1d { channels } => Layer::BatchNorm1d(BatchNorm1d::new(channels)),
            LayerSpec::Relu => Layer::Relu(Relu::new()),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Layer::Linear(Linear::new(in_features, out_features, rng)),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(GlobalAvgPool::new()),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
                projection,
            } => Layer::Residual(Box::new(ResidualBlock::new(
                in_channels,
                out_channels,
                stride,
                projection,
                rng,
            )?)),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d(c.spec),
            Layer::BatchNorm1d(b) => LayerSpec::Batchnorm1d { channels: b.channels },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Linear(l) => LayerSpec::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
            },
            Layer::GlobalAvgPool(_) => LayerSpec::GlobalAvgPool,
            Layer::Residual(r) => LayerSpec::ResidualBlock {
                in_channels: r.conv1.spec.in_channels,
                out_channels: r.conv1.spec.out_channels,
                stride: r.conv1.spec.stride,
                projection: r.projection.is_some(),
            },
        }
    }

    fn hash_pattern<H: Hasher>(&self, state: &mut H) {
        match self {
            Layer::Relu(r) => r.hash_pattern(state),
            Layer::Residual(r) => r.hash_pattern(state),
            _ => {}
        }
    }
}

impl<T: Scalar> Module<T> for Layer<T> {
    fn name(&self) -> &'static str {
        dispatch!(self, l => Module::<T>::name(l))
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        dispatch!(self, l => l.forward(x, mode))
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        dispatch!(self, l => l.infer(x))
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        dispatch!(self, l => l.backward(grad))
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        dispatch!(self, l => l.params_and_grads())
    }

    fn state(&self) -> Vec<&[T]> {
        dispatch!(self, l => l.state())
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        dispatch!(self, l => l.state_mut())
    }
}

/// Layers applied in sequence.
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::build(s, rng)).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn num_params(&mut self) -> usize {
        self.params_and_grads().iter().map(|p| p.value.len()).sum()
    }

    /// Hash of every ReLU mask recorded by the last train-mode forward.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            l.hash_pattern(&mut h);
        }
        h.finish()
    }

    fn label(i: usize, layer: &Layer<T>, err: Error) -> Error {
        match err {
            Error::Shape { layer: inner, detail } => Error::Shape {
                layer: format!("#{i} {} ({inner})", Module::<T>::name(layer)),
                detail,
            },
            other => other,
        }
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn name(&self) -> &'static str {
        "network"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode).map_err(|e| Self::label(i, layer, e))?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h).map_err(|e| Self::label(i, layer, e))?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).map_err(|e| Self::label(i, layer, e))?;
        }
        Ok(g)
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.params_and_grads()).collect()
    }

    fn state(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.state()).collect()
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.state_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(rng: &mut ChaCha8Rng) -> Network<f64> {
        Network::build(
            &[
                LayerSpec::Conv1d(ConvSpec::new(2, 4, 3, 1, 1)),
                LayerSpec::Batchnorm1d { channels: 4 },
                LayerSpec::Relu,
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
            rng,
        )
        .unwrap()
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = small_net(&mut rng);
        let err = net.infer(&Tensor3::zeros(1, 3, 6)).unwrap_err();
        match err {
            Error::Shape { layer, .. } => assert!(layer.starts_with("#0 conv1d"), "{layer}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_forward_is_per_sample_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = small_net(&mut rng);
        let x = Tensor3::new(5, 2, 6, (0..60).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect()).unwrap();
        // move the running statistics away from their defaults
        net.forward(&x, Mode::Train).unwrap();
        let y = net.infer(&x).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let yp = net.infer(&x.select(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(yp.sample(k), y.sample(i));
        }
        assert_eq!(net.forward(&x, Mode::Eval).unwrap(), y);
    }

    #[test]
    fn spec_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = small_net(&mut rng);
        let rebuilt = Network::<f64>::build(&net.specs(), &mut rng).unwrap();
        assert_eq!(rebuilt.specs(), net.specs());
        let json = serde_json::to_string(&net.specs()).unwrap();
        let back: Vec<LayerSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net.specs());
    }
}
