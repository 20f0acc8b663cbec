//! SimCLR pretraining: convolutional encoder, MLP projection head, NT-Xent
//! loss, LARS with a cosine schedule.

use serde::{Deserialize, Serialize};

use crate::augment::{make_view_pair, Pipeline};
use crate::data::{batch_tensor, Window};
use crate::error::{Error, Result};
use crate::nn::{batch_scaled_lr, cosine_lr, Lars, LarsConfig, LayerSpec, Mode, Network, Param};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::tensor::{gemm, MatRef, Tensor};

/// Norm floor applied to projections inside the training loss.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimclrArchitecture {
    pub channels: usize,
    pub feature_maps: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropout: f64,
    pub head_widths: Vec<usize>,
}

impl Default for SimclrArchitecture {
    fn default() -> Self {
        Self {
            channels: 3,
            feature_maps: vec![32, 64, 96],
            kernels: vec![24, 16, 8],
            dropout: 0.1,
            head_widths: vec![258, 128, 50],
        }
    }
}

impl SimclrArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.feature_maps.is_empty() || self.feature_maps.len() != self.kernels.len() {
            return Err(Error::config(
                "architecture",
                "feature_maps and kernels must be non-empty and equally long",
            ));
        }
        if self.head_widths.is_empty() {
            return Err(Error::config(
                "architecture.head_widths",
                "must not be empty",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("architecture.dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Shortest window the encoder accepts.
    pub fn min_length(&self) -> usize {
        self.kernels.iter().map(|k| k - 1).sum::<usize>() + 1
    }

    pub fn embedding_dim(&self) -> usize {
        *self.feature_maps.last().expect("validated")
    }

    pub fn projection_dim(&self) -> usize {
        *self.head_widths.last().expect("validated")
    }

    /// conv -> relu -> dropout per stage, then global max pooling.
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut inputs = self.channels;
        for (&maps, &kernel) in self.feature_maps.iter().zip(&self.kernels) {
            specs.push(LayerSpec::Conv1d {
                in_channels: inputs,
                out_channels: maps,
                kernel,
                stride: 1,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout { rate: self.dropout });
            inputs = maps;
        }
        specs.push(LayerSpec::GlobalMaxPool);
        specs
    }

    /// Dense layers with ReLU between them; the last layer is linear.
    pub fn head_specs(&self) -> Vec<LayerSpec> {
        mlp_specs(self.embedding_dim(), &self.head_widths)
    }
}

pub(crate) fn mlp_specs(inputs: usize, widths: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = inputs;
    for (i, &w) in widths.iter().enumerate() {
        if i > 0 {
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Dense {
            inputs: prev,
            outputs: w,
        });
        prev = w;
    }
    specs
}

#[derive(Clone, Debug)]
pub struct SimclrModel {
    pub encoder: Network,
    pub head: Network,
}

impl SimclrModel {
    pub fn new(arch: &SimclrArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = derived_rng(seed, &[stream::INIT]);
        let encoder = Network::new(&arch.encoder_specs(), &mut rng)?;
        let head = Network::new(&arch.head_specs(), &mut rng)?;
        Ok(Self { encoder, head })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.set_mode(mode);
        self.head.set_mode(mode);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.encoder
            .params_mut()
            .chain(self.head.params_mut())
            .collect()
    }
}

/// Inference-mode representations `h` for a `(batch, channels, length)` tensor.
pub fn encode(encoder: &Network, windows: &Tensor, arch: &SimclrArchitecture) -> Result<Tensor> {
    if windows.rank() != 3 {
        return Err(Error::Shape(format!(
            "expected (batch, channels, length), got {:?}",
            windows.shape()
        )));
    }
    if windows.dim(2) < arch.min_length() {
        return Err(Error::Shape(format!(
            "window length {} is shorter than the encoder's receptive field {}",
            windows.dim(2),
            arch.min_length()
        )));
    }
    encoder.infer(windows)
}

/// `2N` projections and the perfect matching that pairs the two views of each input.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    z: Tensor,
    partner: Vec<usize>,
}

impl ContrastiveBatch {
    pub fn new(z: Tensor, partner: Vec<usize>) -> Result<Self> {
        if z.rank() != 2 || z.dim(0) != partner.len() {
            return Err(Error::Shape(format!(
                "{} partners for projections of shape {:?}",
                partner.len(),
                z.shape()
            )));
        }
        if partner.len() < 4 || !partner.len().is_multiple_of(2) {
            return Err(Error::InsufficientData(format!(
                "contrastive batch needs 2N >= 4 projections, got {}",
                partner.len()
            )));
        }
        for (i, &j) in partner.iter().enumerate() {
            if j >= partner.len() || j == i || partner[j] != i {
                return Err(Error::Shape(format!(
                    "pairing is not a perfect matching at {i}"
                )));
            }
        }
        Ok(Self { z, partner })
    }

    /// Rows `0..N` are first views, rows `N..2N` the matching second views.
    pub fn from_views(first: &Tensor, second: &Tensor) -> Result<Self> {
        if first.shape() != second.shape() {
            return Err(Error::Shape(format!(
                "view shapes differ: {:?} vs {:?}",
                first.shape(),
                second.shape()
            )));
        }
        let n = first.dim(0);
        let partner = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
        ContrastiveBatch::new(Tensor::concat_rows(first, second)?, partner)
    }

    pub fn projections(&self) -> &Tensor {
        &self.z
    }

    pub fn partner(&self, i: usize) -> usize {
        self.partner[i]
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }
}

/// NT-Xent loss over cosine similarities, averaged over all `2N` anchors.
/// Fails on any zero-norm projection.
pub fn nt_xent(batch: &ContrastiveBatch, temperature: f64) -> Result<f64> {
    nt_xent_impl(batch, temperature, None, false).map(|(loss, _)| loss)
}

/// Loss and gradient with respect to the projections; norms are floored at
/// [`NORM_FLOOR`] so collapsed outputs stay finite.
pub fn nt_xent_with_grad(batch: &ContrastiveBatch, temperature: f64) -> Result<(f64, Tensor)> {
    nt_xent_impl(batch, temperature, Some(NORM_FLOOR), true)
        .map(|(loss, grad)| (loss, grad.expect("requested")))
}

fn nt_xent_impl(
    batch: &ContrastiveBatch,
    temperature: f64,
    floor: Option<f64>,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature", "must be positive"));
    }
    let z = &batch.z;
    let (n2, d) = (z.dim(0), z.dim(1));
    let mut norms = Vec::with_capacity(n2);
    let mut unit = vec![0.0; n2 * d];
    for i in 0..n2 {
        let raw = crate::tensor::l2_norm(z.row(i));
        let r = match floor {
            Some(f) => raw.max(f),
            None if raw == 0.0 => return Err(Error::ZeroNorm { index: i }),
            None => raw,
        };
        norms.push(r);
        for (u, v) in unit[i * d..(i + 1) * d].iter_mut().zip(z.row(i)) {
            *u = v / r;
        }
    }
    let mut sim = vec![0.0; n2 * n2];
    gemm(
        1.0 / temperature,
        MatRef::new(&unit, n2, d),
        MatRef::new(&unit, n2, d).t(),
        0.0,
        &mut sim,
    );
    let mut loss = 0.0;
    // softmax over k != i, minus the positive indicator, scaled by 1/2N
    let mut coeff = vec![0.0; n2 * n2];
    for i in 0..n2 {
        let row = &sim[i * n2..(i + 1) * n2];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let lse = max + sum.ln();
        let j = batch.partner[i];
        loss += lse - row[j];
        if want_grad {
            for k in 0..n2 {
                if k != i {
                    coeff[i * n2 + k] = (row[k] - lse).exp() / n2 as f64;
                }
            }
            coeff[i * n2 + j] -= 1.0 / n2 as f64;
        }
    }
    loss /= n2 as f64;
    if !want_grad {
        return Ok((loss, None));
    }
    // dL/dunit = (G + G^T) unit / tau
    let mut sym = vec![0.0; n2 * n2];
    for i in 0..n2 {
        for k in 0..n2 {
            sym[i * n2 + k] = coeff[i * n2 + k] + coeff[k * n2 + i];
        }
    }
    let mut dunit = vec![0.0; n2 * d];
    gemm(
        1.0 / temperature,
        MatRef::new(&sym, n2, n2),
        MatRef::new(&unit, n2, d),
        0.0,
        &mut dunit,
    );
    let mut grad = Tensor::zeros(&[n2, d]);
    for i in 0..n2 {
        let u = &unit[i * d..(i + 1) * d];
        let du = &dunit[i * d..(i + 1) * d];
        let along: f64 = u.iter().zip(du).map(|(a, b)| a * b).sum();
        for ((g, a), b) in grad.row_mut(i).iter_mut().zip(u).zip(du) {
            *g = (b - a * along) / norms[i];
        }
    }
    Ok((loss, Some(grad)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimclrConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    /// Base learning rate is `lr_factor * batch_size / 256`.
    pub lr_factor: f64,
    /// Replaces the batch-scaled base learning rate when set.
    pub learning_rate: Option<f64>,
    pub lars: LarsConfig,
    pub pipeline: Pipeline,
    pub architecture: SimclrArchitecture,
}

impl Default for SimclrConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 50,
            temperature: 0.5,
            lr_factor: 0.3,
            learning_rate: None,
            lars: LarsConfig::default(),
            pipeline: Pipeline::simclr_default(),
            architecture: SimclrArchitecture::default(),
        }
    }
}

impl SimclrConfig {
    pub fn base_lr(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| batch_scaled_lr(self.lr_factor, self.batch_size))
    }

    pub fn validate(&self, window_length: usize) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if !(self.base_lr() >= 0.0) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        self.architecture.validate()?;
        if window_length < self.architecture.min_length() {
            return Err(Error::config(
                "window_length",
                format!(
                    "{window_length} is shorter than the encoder receptive field {}",
                    self.architecture.min_length()
                ),
            ));
        }
        self.pipeline.validate(window_length)
    }
}

/// Contiguous mini-batches of `order`; a trailing batch smaller than 2 is dropped.
pub(crate) fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size).filter(|b| b.len() >= 2)
}

pub(crate) fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, &[stream::SHUFFLE, epoch as u64]));
    order
}

pub(crate) fn check_windows(windows: &[Window], channels: usize) -> Result<usize> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InsufficientData("no training windows".into()))?;
    let length = first.length();
    for (i, w) in windows.iter().enumerate() {
        if w.channels != channels || w.length() != length {
            return Err(Error::Shape(format!(
                "window {i} has shape ({}, {}), expected ({channels}, {length})",
                w.channels,
                w.length()
            )));
        }
        if w.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("window {i} holds non-finite values")));
        }
    }
    Ok(length)
}

#[derive(Clone, Debug)]
pub struct SimclrRun {
    pub model: SimclrModel,
    /// Mean NT-Xent loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Pretrains encoder and head on `windows` (labels unused).
pub fn train_simclr(windows: &[Window], config: &SimclrConfig, seed: u64) -> Result<SimclrRun> {
    let mut model = SimclrModel::new(&config.architecture, seed)?;
    train_simclr_from(&mut model, windows, config, seed).map(|epoch_losses| SimclrRun {
        model,
        epoch_losses,
    })
}

/// Continues training `model` in place; returns the per-epoch mean losses.
pub fn train_simclr_from(
    model: &mut SimclrModel,
    windows: &[Window],
    config: &SimclrConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let length = check_windows(windows, config.architecture.channels)?;
    config.validate(length)?;
    let steps_per_epoch =
        batches(&(0..windows.len()).collect::<Vec<_>>(), config.batch_size).count();
    if steps_per_epoch == 0 && config.epochs > 0 {
        return Err(Error::InsufficientData(
            "at least two windows are needed to form a contrastive batch".into(),
        ));
    }
    let total_steps = steps_per_epoch * config.epochs;
    let base_lr = config.base_lr();
    let mut optimizer = Lars::new(config.lars);
    model.set_mode(Mode::Training);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled(windows.len(), seed, epoch);
        let mut epoch_loss = 0.0;
        let mut count = 0;
        for batch in batches(&order, config.batch_size) {
            let (first, second): (Vec<Window>, Vec<Window>) = batch
                .iter()
                .map(|&i| {
                    make_view_pair(
                        &windows[i],
                        &config.pipeline,
                        derive_seed(seed, &[stream::AUGMENT, epoch as u64, i as u64]),
                    )
                })
                .unzip();
            let x = Tensor::concat_rows(&batch_tensor(&first)?, &batch_tensor(&second)?)?;
            let mut dropout_rng = derived_rng(seed, &[stream::DROPOUT, epoch as u64, step as u64]);
            model.encoder.zero_grad();
            model.head.zero_grad();
            let h = model.encoder.forward(&x, &mut dropout_rng)?;
            let z = model.head.forward(&h, &mut dropout_rng)?;
            let n = batch.len();
            let partner = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
            let (loss, dz) =
                nt_xent_with_grad(&ContrastiveBatch::new(z, partner)?, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(loss));
            }
            let dh = model.head.backward(&dz)?;
            model.encoder.backward_params(&dh)?;
            let lr = cosine_lr(step, total_steps, base_lr);
            optimizer.step(&mut model.params_mut(), lr)?;
            epoch_loss += loss;
            count += 1;
            step += 1;
        }
        let mean = epoch_loss / count.max(1) as f64;
        log::debug!("simclr epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    model.encoder.clear_caches();
    model.head.clear_caches();
    model.set_mode(Mode::Inference);
    Ok(history)
}
