//! BYOL pretraining on flattened windows: an autoencoder supplies the
//! initial encoder, the online branch (encoder, projector, predictor) is
//! trained on a symmetric regression loss and the target branch follows it by
//! exponential moving average.

use serde::{Deserialize, Serialize};

use crate::augment::{make_view_pair, Pipeline};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::eval::Encoder;
use crate::nn::{
    batch_scaled_lr, cosine_lr, Adam, AdamConfig, LarsConfig, LayerSpec, Mode, Network, Optimizer,
    OptimizerKind, Param,
};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::simclr::{batches, check_windows, mlp_specs, shuffled, NORM_FLOOR};
use crate::tensor::Tensor;

/// Per-channel min-max rescaling into `[0, 1]`, fit on training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(windows: &[Window]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::InsufficientData("no windows to fit the rescaling".into()))?;
        let c = first.channels;
        let mut min = vec![f64::INFINITY; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for w in windows {
            for ch in 0..c {
                for &v in w.channel(ch) {
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, window: &Window) -> Window {
        let l = window.length();
        let mut values = window.values.clone();
        for (ch, chunk) in values.chunks_mut(l).enumerate() {
            let range = (self.max[ch] - self.min[ch]).max(1e-12);
            chunk
                .iter_mut()
                .for_each(|v| *v = (*v - self.min[ch]) / range);
        }
        window.with_values(values)
    }
}

/// `(batch, channels * length)` rows in window order.
fn flat_batch(windows: &[Window]) -> Result<Tensor> {
    let d = windows.first().map_or(0, |w| w.values.len());
    let mut data = Vec::with_capacity(windows.len() * d);
    for w in windows {
        if w.values.len() != d {
            return Err(Error::Shape("windows differ in size".into()));
        }
        data.extend_from_slice(&w.values);
    }
    Tensor::new(vec![windows.len(), d], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByolArchitecture {
    /// Encoder widths after the flattened input; the decoder mirrors them.
    pub encoder_widths: Vec<usize>,
    pub projector_hidden: usize,
    pub projection_dim: usize,
}

impl Default for ByolArchitecture {
    fn default() -> Self {
        Self {
            encoder_widths: vec![1024, 512, 256, 128],
            projector_hidden: 4096,
            projection_dim: 256,
        }
    }
}

impl ByolArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::config(
                "architecture.encoder_widths",
                "widths must be positive",
            ));
        }
        if self.projector_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::config(
                "architecture.projection_dim",
                "widths must be positive",
            ));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }

    /// Dense layers with ReLU between them and a linear bottleneck.
    pub fn encoder_specs(&self, inputs: usize) -> Vec<LayerSpec> {
        mlp_specs(inputs, &self.encoder_widths)
    }

    /// ReLU on the code, mirrored dense layers, Sigmoid on the reconstruction.
    pub fn decoder_specs(&self, outputs: usize) -> Vec<LayerSpec> {
        let mut widths: Vec<usize> = self.encoder_widths.iter().rev().skip(1).copied().collect();
        widths.push(outputs);
        let mut specs = vec![LayerSpec::Relu];
        specs.extend(mlp_specs(self.embedding_dim(), &widths));
        specs.push(LayerSpec::Sigmoid);
        specs
    }

    pub fn projector_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                inputs: self.embedding_dim(),
                outputs: self.projector_hidden,
            },
            LayerSpec::BatchNorm1d {
                features: self.projector_hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: self.projector_hidden,
                outputs: self.projection_dim,
            },
        ]
    }

    pub fn predictor_specs(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Dense {
            inputs: self.projection_dim,
            outputs: self.projection_dim,
        }]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Skip autoencoder pretraining and start BYOL from a random encoder.
    pub enabled: bool,
    pub epochs: usize,
    /// Defaults to the BYOL batch size.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub adam: AdamConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 30,
            batch_size: None,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
}

impl Autoencoder {
    pub fn new(arch: &ByolArchitecture, inputs: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = derived_rng(seed, &[stream::INIT, 0]);
        Ok(Self {
            encoder: Network::new(&arch.encoder_specs(inputs), &mut rng)?,
            decoder: Network::new(&arch.decoder_specs(inputs), &mut rng)?,
        })
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder.infer(&self.encoder.infer(x)?)
    }
}

/// Mean squared error over every element, and its gradient.
fn mse_with_grad(y: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = y.len() as f64;
    let mut grad = y.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    (loss / n, grad)
}

pub fn reconstruction_mse(ae: &Autoencoder, windows: &[Window]) -> Result<f64> {
    let x = flat_batch(windows)?;
    Ok(mse_with_grad(&ae.reconstruct(&x)?, &x).0)
}

#[derive(Clone, Debug)]
pub struct AutoencoderRun {
    pub autoencoder: Autoencoder,
    /// Mean reconstruction MSE per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains on rescaled windows; every value must lie in `[0, 1]`.
pub fn pretrain_autoencoder(
    windows: &[Window],
    arch: &ByolArchitecture,
    config: &AutoencoderConfig,
    batch_size: usize,
    seed: u64,
) -> Result<AutoencoderRun> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InsufficientData("no autoencoder training windows".into()))?;
    check_windows(windows, first.channels)?;
    for (i, w) in windows.iter().enumerate() {
        if let Some(v) = w.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                index: i,
                value: *v,
            });
        }
    }
    let mut ae = Autoencoder::new(arch, first.values.len(), seed)?;
    let batch_size = config.batch_size.unwrap_or(batch_size).max(1);
    let steps_per_epoch = windows.len().div_ceil(batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut adam = Adam::new(config.adam);
    let mut rng = derived_rng(seed, &[stream::DROPOUT, 0]);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled(windows.len(), derive_seed(seed, &[0]), epoch);
        let mut sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Window> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let x = flat_batch(&batch)?;
            ae.encoder.zero_grad();
            ae.decoder.zero_grad();
            let y = ae
                .decoder
                .forward(&ae.encoder.forward(&x, &mut rng)?, &mut rng)?;
            let (loss, dy) = mse_with_grad(&y, &x);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(loss));
            }
            let dh = ae.decoder.backward(&dy)?;
            ae.encoder.backward_params(&dh)?;
            let mut params: Vec<&mut Param> = ae
                .encoder
                .params_mut()
                .chain(ae.decoder.params_mut())
                .collect();
            adam.step(&mut params, cosine_lr(step, total, config.learning_rate))?;
            sum += loss * chunk.len() as f64;
            step += 1;
        }
        let mean = sum / windows.len() as f64;
        log::debug!("autoencoder epoch {epoch}: mse {mean:.5}");
        history.push(mean);
    }
    ae.encoder.clear_caches();
    ae.decoder.clear_caches();
    ae.encoder.set_mode(Mode::Inference);
    ae.decoder.set_mode(Mode::Inference);
    Ok(AutoencoderRun {
        autoencoder: ae,
        epoch_losses: history,
    })
}

fn unit(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::ZeroNorm { index: 0 });
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `MSE(p_v, t_vp) + MSE(p_vp, t_v)` on L2-normalized vectors, each MSE a mean over coordinates.
pub fn byol_loss(p_v: &[f64], t_vp: &[f64], p_vp: &[f64], t_v: &[f64]) -> Result<f64> {
    let d = p_v.len();
    if [t_vp.len(), p_vp.len(), t_v.len()].iter().any(|&l| l != d) || d == 0 {
        return Err(Error::Shape(
            "byol_loss vectors must share a non-zero length".into(),
        ));
    }
    let (a, _) = unit(p_v)?;
    let (b, _) = unit(t_vp)?;
    let (c, _) = unit(p_vp)?;
    let (e, _) = unit(t_v)?;
    Ok(mean_sq_diff(&a, &b) + mean_sq_diff(&c, &e))
}

/// Batched loss for online predictions `p` and target projections `t`, both
/// `(2B, d)` with rows `[views v; views v']`. Returns the batch mean and
/// `dloss/dp`. Norms are floored at [`NORM_FLOOR`] when `normalize` is set.
pub fn byol_loss_batch(p: &Tensor, t: &Tensor, normalize: bool) -> Result<(f64, Tensor)> {
    if p.rank() != 2 || p.shape() != t.shape() || !p.dim(0).is_multiple_of(2) || p.dim(0) == 0 {
        return Err(Error::Shape(format!(
            "byol_loss_batch expects matching (2B, d) inputs, got {:?} and {:?}",
            p.shape(),
            t.shape()
        )));
    }
    let (rows, d) = (p.dim(0), p.dim(1));
    let b = rows / 2;
    let mut grad = Tensor::zeros(p.shape());
    let mut loss = 0.0;
    for i in 0..rows {
        let partner = (i + b) % rows;
        let pr = p.row(i);
        let tr = t.row(partner);
        if normalize {
            let pn = pr.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            let tn = tr.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            let ph: Vec<f64> = pr.iter().map(|x| x / pn).collect();
            let th: Vec<f64> = tr.iter().map(|x| x / tn).collect();
            loss += mean_sq_diff(&ph, &th);
            // d/dp of mean((p/|p| - t)^2), then through the normalization
            let gh: Vec<f64> = ph
                .iter()
                .zip(&th)
                .map(|(a, c)| 2.0 * (a - c) / (d as f64 * b as f64))
                .collect();
            let proj = ph.iter().zip(&gh).map(|(a, g)| a * g).sum::<f64>();
            for ((g, h), gh) in grad.row_mut(i).iter_mut().zip(&ph).zip(&gh) {
                *g = (gh - h * proj) / pn;
            }
        } else {
            loss += mean_sq_diff(pr, tr);
            for ((g, a), c) in grad.row_mut(i).iter_mut().zip(pr).zip(tr) {
                *g = 2.0 * (a - c) / (d as f64 * b as f64);
            }
        }
    }
    Ok((loss / b as f64, grad))
}

/// `xi <- beta * xi + (1 - beta) * theta` over every parameter tensor.
pub fn ema_update(target: &mut Network, online: &Network, beta: f64) -> Result<()> {
    if target.param_count() != online.param_count() {
        return Err(Error::Shape(
            "target and online networks differ in size".into(),
        ));
    }
    for (xi, theta) in target.params_mut().zip(online.params()) {
        if xi.value.shape() != theta.value.shape() {
            return Err(Error::Shape(
                "target and online parameter shapes differ".into(),
            ));
        }
        for (x, t) in xi.value.data_mut().iter_mut().zip(theta.value.data()) {
            *x = beta * *x + (1.0 - beta) * t;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ByolModel {
    pub scaler: MinMaxScaler,
    pub encoder: Network,
    pub projector: Network,
    pub predictor: Network,
    pub target_encoder: Network,
    pub target_projector: Network,
}

impl ByolModel {
    /// Online and target branches start identical; `encoder` replaces the
    /// random encoder when given.
    pub fn new(
        arch: &ByolArchitecture,
        scaler: MinMaxScaler,
        inputs: usize,
        encoder: Option<Network>,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let mut rng = derived_rng(seed, &[stream::INIT, 1]);
        let random_encoder = Network::new(&arch.encoder_specs(inputs), &mut rng)?;
        let encoder = match encoder {
            Some(e) if e.specs() == arch.encoder_specs(inputs) => e,
            Some(_) => {
                return Err(Error::Shape(
                    "initial encoder does not match the BYOL architecture".into(),
                ))
            }
            None => random_encoder,
        };
        let projector = Network::new(&arch.projector_specs(), &mut rng)?;
        let predictor = Network::new(&arch.predictor_specs(), &mut rng)?;
        Ok(Self {
            scaler,
            target_encoder: encoder.clone(),
            target_projector: projector.clone(),
            encoder,
            projector,
            predictor,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for n in [
            &mut self.encoder,
            &mut self.projector,
            &mut self.predictor,
            &mut self.target_encoder,
            &mut self.target_projector,
        ] {
            n.set_mode(mode);
        }
    }

    pub fn online_params_mut(&mut self) -> Vec<&mut Param> {
        self.encoder
            .params_mut()
            .chain(self.projector.params_mut())
            .chain(self.predictor.params_mut())
            .collect()
    }

    /// SHA-256 over the target encoder and projector.
    pub fn target_digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.target_encoder.digest());
        h.update(self.target_projector.digest());
        h.finalize().into()
    }
}

/// Online-encoder representations of rescaled, flattened windows.
impl Encoder for ByolModel {
    fn embed(&self, windows: &[Window]) -> Result<Tensor> {
        if self.encoder.mode() != Mode::Inference {
            return Err(Error::Shape("encoder must be in inference mode".into()));
        }
        let scaled: Vec<Window> = windows.iter().map(|w| self.scaler.apply(w)).collect();
        self.encoder.infer(&flat_batch(&scaled)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByolConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Target EMA decay.
    pub beta: f64,
    /// Base learning rate is `lr_factor * batch_size / 256`.
    pub lr_factor: f64,
    /// Replaces the batch-scaled base learning rate when set.
    pub learning_rate: Option<f64>,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub lars: LarsConfig,
    /// L2-normalize predictions and projections before the MSE.
    pub normalize_loss: bool,
    pub pipeline: Pipeline,
    pub architecture: ByolArchitecture,
    pub autoencoder: AutoencoderConfig,
}

impl Default for ByolConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 50,
            beta: 0.99,
            lr_factor: 0.2,
            learning_rate: None,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            lars: LarsConfig::default(),
            normalize_loss: true,
            pipeline: Pipeline::byol_default(),
            architecture: ByolArchitecture::default(),
            autoencoder: AutoencoderConfig::default(),
        }
    }
}

impl ByolConfig {
    pub fn base_lr(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| batch_scaled_lr(self.lr_factor, self.batch_size))
    }

    pub fn validate(&self, window_length: usize) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", "must lie in [0, 1]"));
        }
        if !(self.base_lr() >= 0.0) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        if !(self.autoencoder.learning_rate >= 0.0) {
            return Err(Error::config(
                "autoencoder.learning_rate",
                "must be non-negative",
            ));
        }
        self.architecture.validate()?;
        self.pipeline.validate(window_length)
    }
}

/// Observed after every optimizer step and EMA update.
pub struct StepRecord<'a> {
    pub step: usize,
    pub loss: f64,
    pub model: &'a ByolModel,
}

#[derive(Clone, Debug)]
pub struct ByolRun {
    pub model: ByolModel,
    pub autoencoder_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

pub fn train_byol(windows: &[Window], config: &ByolConfig, seed: u64) -> Result<ByolRun> {
    train_byol_observed(windows, config, seed, |_| {})
}

/// Fits the rescaling on `windows`, pretrains the autoencoder when enabled,
/// then runs BYOL. `observe` sees the model after every step.
pub fn train_byol_observed<F>(
    windows: &[Window],
    config: &ByolConfig,
    seed: u64,
    mut observe: F,
) -> Result<ByolRun>
where
    F: FnMut(StepRecord<'_>),
{
    let first = windows
        .first()
        .ok_or_else(|| Error::InsufficientData("no training windows".into()))?;
    let length = check_windows(windows, first.channels)?;
    config.validate(length)?;
    let scaler = MinMaxScaler::fit(windows)?;
    let scaled: Vec<Window> = windows.iter().map(|w| scaler.apply(w)).collect();
    let inputs = first.values.len();

    let (encoder, autoencoder_losses) = if config.autoencoder.enabled {
        let run = pretrain_autoencoder(
            &scaled,
            &config.architecture,
            &config.autoencoder,
            config.batch_size,
            seed,
        )?;
        (Some(run.autoencoder.encoder), run.epoch_losses)
    } else {
        (None, Vec::new())
    };
    let mut model = ByolModel::new(&config.architecture, scaler, inputs, encoder, seed)?;
    let epoch_losses = train_byol_from(&mut model, &scaled, config, seed, &mut observe)?;
    Ok(ByolRun {
        model,
        autoencoder_losses,
        epoch_losses,
    })
}

/// BYOL steps on already rescaled windows; returns per-epoch mean losses.
pub fn train_byol_from<F>(
    model: &mut ByolModel,
    scaled: &[Window],
    config: &ByolConfig,
    seed: u64,
    mut observe: F,
) -> Result<Vec<f64>>
where
    F: FnMut(StepRecord<'_>),
{
    let steps_per_epoch =
        batches(&(0..scaled.len()).collect::<Vec<_>>(), config.batch_size).count();
    if steps_per_epoch == 0 && config.epochs > 0 {
        return Err(Error::InsufficientData(
            "at least two windows are needed per batch".into(),
        ));
    }
    let total = steps_per_epoch * config.epochs;
    let base_lr = config.base_lr();
    let mut optimizer = Optimizer::new(config.optimizer, config.lars, config.adam);
    model.set_mode(Mode::Training);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled(scaled.len(), seed, epoch);
        let mut sum = 0.0;
        let mut count = 0;
        for batch in batches(&order, config.batch_size) {
            let (v, vp): (Vec<Window>, Vec<Window>) = batch
                .iter()
                .map(|&i| {
                    make_view_pair(
                        &scaled[i],
                        &config.pipeline,
                        derive_seed(seed, &[stream::AUGMENT, epoch as u64, i as u64]),
                    )
                })
                .unzip();
            let x = Tensor::concat_rows(&flat_batch(&v)?, &flat_batch(&vp)?)?;
            let mut rng = derived_rng(seed, &[stream::DROPOUT, epoch as u64, step as u64]);

            let t = model
                .target_projector
                .forward(&model.target_encoder.forward(&x, &mut rng)?, &mut rng)?;
            model.target_encoder.clear_caches();
            model.target_projector.clear_caches();

            model.encoder.zero_grad();
            model.projector.zero_grad();
            model.predictor.zero_grad();
            let h = model.encoder.forward(&x, &mut rng)?;
            let z = model.projector.forward(&h, &mut rng)?;
            let p = model.predictor.forward(&z, &mut rng)?;
            let (loss, dp) = byol_loss_batch(&p, &t, config.normalize_loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(loss));
            }
            let dz = model.predictor.backward(&dp)?;
            let dh = model.projector.backward(&dz)?;
            model.encoder.backward_params(&dh)?;
            optimizer.step(
                &mut model.online_params_mut(),
                cosine_lr(step, total, base_lr),
            )?;
            ema_update(&mut model.target_encoder, &model.encoder, config.beta)?;
            ema_update(&mut model.target_projector, &model.projector, config.beta)?;
            step += 1;
            observe(StepRecord {
                step,
                loss,
                model: &*model,
            });
            sum += loss;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::debug!("byol epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    for n in [
        &mut model.encoder,
        &mut model.projector,
        &mut model.predictor,
    ] {
        n.clear_caches();
    }
    model.set_mode(Mode::Inference);
    Ok(history)
}
