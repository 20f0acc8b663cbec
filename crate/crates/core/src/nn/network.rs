use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::{Layer, LayerSpec, Param};
use crate::error::{Error, Result};
use crate::rng::RunRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Training,
    Inference,
}

/// A sequential stack of layers with materialized parameters.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    mode: Mode,
}

impl Default for Network {
    fn default() -> Self {
        Self::empty()
    }
}

impl Network {
    /// The identity network.
    pub fn empty() -> Self {
        Self {
            layers: Vec::new(),
            mode: Mode::Inference,
        }
    }

    pub fn new(specs: &[LayerSpec], rng: &mut RunRng) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                Layer::init(spec.clone(), rng)
                    .map_err(|message| Error::LayerShape { layer: i, message })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            mode: Mode::Training,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, mode: Mode) -> Self {
        Self { layers, mode }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Appends the layers of `other` after those of `self`.
    pub fn chain(mut self, other: Network) -> Network {
        self.layers.extend(other.layers);
        self
    }

    /// Splits off the first `n` layers.
    pub fn split_at(mut self, n: usize) -> (Network, Network) {
        let tail = self.layers.split_off(n.min(self.layers.len()));
        (
            Network {
                layers: self.layers,
                mode: self.mode,
            },
            Network {
                layers: tail,
                mode: self.mode,
            },
        )
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .spec()
                .output_shape(&shape)
                .map_err(|message| Error::LayerShape { layer: i, message })?;
        }
        Ok(shape)
    }

    /// Forward pass in the network's current mode, caching what `backward` needs.
    /// Dropout masks are drawn from `rng` in training mode.
    pub fn forward(&mut self, x: &Tensor, rng: &mut RunRng) -> Result<Tensor> {
        let training = self.mode == Mode::Training;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer
                .forward(&h, training, rng)
                .map_err(|message| Error::LayerShape { layer: i, message })?;
        }
        Ok(h)
    }

    /// Inference-mode forward pass; no state is touched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer
                .infer(&h)
                .map_err(|message| Error::LayerShape { layer: i, message })?;
        }
        Ok(h)
    }

    /// Back-propagates `grad_output`, accumulating into every parameter's
    /// `grad`, and returns the gradient with respect to the network input.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        self.backward_impl(grad_output, true)
    }

    /// Like [`Network::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, grad_output: &Tensor) -> Result<()> {
        self.backward_impl(grad_output, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_output: &Tensor, input_grad: bool) -> Result<Tensor> {
        let mut g = grad_output.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer
                .backward(&g, input_grad || i > 0)
                .map_err(|message| Error::LayerShape { layer: i, message })?;
        }
        Ok(g)
    }

    /// Runs forward, reduces the output through `loss_tail`, and returns the
    /// loss together with freshly computed per-parameter gradients.
    ///
    /// `loss_tail` maps the network output to `(loss, d loss / d output)`.
    pub fn gradients<F>(
        &mut self,
        x: &Tensor,
        rng: &mut RunRng,
        loss_tail: F,
    ) -> Result<(f64, Vec<Tensor>)>
    where
        F: FnOnce(&Tensor) -> Result<(f64, Tensor)>,
    {
        self.zero_grad();
        let out = self.forward(x, rng)?;
        let (loss, grad) = loss_tail(&out)?;
        if !loss.is_finite() {
            self.clear_caches();
            return Err(Error::NonFiniteLoss(loss));
        }
        self.backward_params(&grad)?;
        Ok((loss, self.params().map(|p| p.grad.clone()).collect()))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over the little-endian bytes of every parameter value, in order.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for p in self.params() {
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}
