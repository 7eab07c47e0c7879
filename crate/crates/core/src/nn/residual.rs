use std::hash::Hasher;

use rand::Rng;

use super::layers::{BatchNorm1d, Conv1d, ConvSpec, Relu};
use super::tensor::Tensor3;
use super::{Mode, Module, ParamGrad};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))` with 3-tap
/// convolutions. The shortcut is the identity unless a 1x1 projection
/// (conv + batchnorm) is configured.
pub struct ResidualBlock<T> {
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm1d<T>,
    relu1: Relu,
    pub conv2: Conv1d<T>,
    pub bn2: BatchNorm1d<T>,
    pub projection: Option<(Conv1d<T>, BatchNorm1d<T>)>,
    relu_out: Relu,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        projection: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if !projection && (in_channels != out_channels || stride != 1) {
            return Err(Error::Shape {
                layer: "residual_block".into(),
                detail: format!(
                    "identity shortcut cannot map {in_channels} channels (stride {stride}) to {out_channels}; configure a projection"
                ),
            });
        }
        let conv1 = Conv1d::new(ConvSpec::new(in_channels, out_channels, 3, stride, 1), rng);
        let conv2 = Conv1d::new(ConvSpec::new(out_channels, out_channels, 3, 1, 1), rng);
        let projection = projection.then(|| {
            (
                Conv1d::new(ConvSpec::new(in_channels, out_channels, 1, stride, 0), rng),
                BatchNorm1d::new(out_channels),
            )
        });
        Ok(Self {
            conv1,
            bn1: BatchNorm1d::new(out_channels),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm1d::new(out_channels),
            projection,
            relu_out: Relu::new(),
        })
    }

    pub(crate) fn hash_pattern<H: Hasher>(&self, state: &mut H) {
        self.relu1.hash_pattern(state);
        self.relu_out.hash_pattern(state);
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn name(&self) -> &'static str {
        "residual_block"
    }

    fn forward(&mut self, x: &Tensor3<T>, mode: Mode) -> Result<Tensor3<T>> {
        let h = self.conv1.forward(x, mode)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.relu1.forward(&h, mode)?;
        let h = self.conv2.forward(&h, mode)?;
        let mut h = self.bn2.forward(&h, mode)?;
        let shortcut = match &mut self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(x, mode)?;
                bn.forward(&s, mode)?
            }
            None => x.clone(),
        };
        h.add_assign(&shortcut).map_err(|e| Error::Shape {
            layer: "residual_block".into(),
            detail: e.to_string(),
        })?;
        self.relu_out.forward(&h, mode)
    }

    fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let h = self.conv1.infer(x)?;
        let h = self.bn1.infer(&h)?;
        let h = Module::<T>::infer(&self.relu1, &h)?;
        let h = self.conv2.infer(&h)?;
        let mut h = self.bn2.infer(&h)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => bn.infer(&conv.infer(x)?)?,
            None => x.clone(),
        };
        h.add_assign(&shortcut).map_err(|e| Error::Shape {
            layer: "residual_block".into(),
            detail: e.to_string(),
        })?;
        Module::<T>::infer(&self.relu_out, &h)
    }

    fn backward(&mut self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        let g = Module::<T>::backward(&mut self.relu_out, grad)?;
        let inner = self.bn2.backward(&g)?;
        let inner = self.conv2.backward(&inner)?;
        let inner = Module::<T>::backward(&mut self.relu1, &inner)?;
        let inner = self.bn1.backward(&inner)?;
        let mut dx = self.conv1.backward(&inner)?;
        let skip = match &mut self.projection {
            Some((conv, bn)) => {
                let s = bn.backward(&g)?;
                conv.backward(&s)?
            }
            None => g,
        };
        dx.add_assign(&skip)?;
        Ok(dx)
    }

    fn params_and_grads(&mut self) -> Vec<ParamGrad<'_, T>> {
        let mut out = self.conv1.params_and_grads();
        out.extend(self.bn1.params_and_grads());
        out.extend(self.conv2.params_and_grads());
        out.extend(self.bn2.params_and_grads());
        if let Some((conv, bn)) = &mut self.projection {
            out.extend(conv.params_and_grads());
            out.extend(bn.params_and_grads());
        }
        out
    }

    fn state(&self) -> Vec<&[T]> {
        let mut out = self.conv1.state();
        out.extend(self.bn1.state());
        out.extend(self.conv2.state());
        out.extend(self.bn2.state());
        if let Some((conv, bn)) = &self.projection {
            out.extend(conv.state());
            out.extend(bn.state());
        }
        out
    }

    fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = self.conv1.state_mut();
        out.extend(self.bn1.state_mut());
        out.extend(self.conv2.state_mut());
        out.extend(self.bn2.state_mut());
        if let Some((conv, bn)) = &mut self.projection {
            out.extend(conv.state_mut());
            out.extend(bn.state_mut());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_inner_path_passes_shortcut_through_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = ResidualBlock::<f64>::new(2, 2, 1, false, &mut rng).unwrap();
        block.conv1.weight.iter_mut().for_each(|w| *w = 0.0);
        block.conv2.weight.iter_mut().for_each(|w| *w = 0.0);
        let x = Tensor3::new(2, 2, 3, vec![1.0f64, -2.0, 3.0, -0.5, 0.0, 2.5, -1.0, 4.0, 0.2, 0.3, -0.3, 1.0]).unwrap();
        let relu_x: Vec<f64> = x.as_slice().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(block.forward(&x, Mode::Train).unwrap().as_slice(), relu_x.as_slice());
        assert_eq!(block.infer(&x).unwrap().as_slice(), relu_x.as_slice());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = ResidualBlock::<f64>::new(3, 3, 1, false, &mut rng).unwrap();
        let y = block.infer(&Tensor3::zeros(2, 3, 5)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_change_needs_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(ResidualBlock::<f64>::new(2, 4, 1, false, &mut rng).is_err());
        let block = ResidualBlock::<f64>::new(2, 4, 2, true, &mut rng).unwrap();
        let y = block.infer(&Tensor3::zeros(1, 2, 8)).unwrap();
        assert_eq!(y.shape(), (1, 4, 4));
    }
}
