//! Task-specific CNN baseline: the SimCLR encoder topology with a softmax
//! head, trained end to end on one task's labels.

use serde::{Deserialize, Serialize};

use crate::data::{batch_tensor, Split, Task, Window};
use crate::error::{Error, Result};
use crate::eval::{f1_scores, RunScore};
use crate::nn::{cosine_lr, Adam, AdamConfig, LayerSpec, Mode, Network, Param};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::simclr::{batches, check_windows, shuffled, SimclrArchitecture};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub architecture: SimclrArchitecture,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 50,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            architecture: SimclrArchitecture::default(),
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self, window_length: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        self.architecture.validate()?;
        if window_length < self.architecture.min_length() {
            return Err(Error::config(
                "window_length",
                "shorter than the encoder receptive field",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SupervisedModel {
    pub task: Task,
    pub encoder: Network,
    pub head: Network,
}

impl SupervisedModel {
    pub fn new(arch: &SimclrArchitecture, task: Task, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = derived_rng(seed, &[stream::INIT, 2, task.index() as u64]);
        Ok(Self {
            task,
            encoder: Network::new(&arch.encoder_specs(), &mut rng)?,
            head: Network::new(
                &[LayerSpec::Dense {
                    inputs: arch.embedding_dim(),
                    outputs: task.n_classes(),
                }],
                &mut rng,
            )?,
        })
    }

    pub fn predict(&self, windows: &[Window]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let logits = self
                .head
                .infer(&self.encoder.infer(&batch_tensor(chunk)?)?)?;
            let k = logits.dim(1);
            out.extend(logits.data().chunks(k).map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (c, &v)| if v > b.1 { (c, v) } else { b },
                    )
                    .0
            }));
        }
        Ok(out)
    }
}

/// Mean softmax cross-entropy over rows and its gradient.
fn cross_entropy(logits: &Tensor, y: &[usize]) -> (f64, Tensor) {
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (row, &c) in grad.data_mut().chunks_mut(k).zip(y) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += sum.ln() + max - row[c];
        row.iter_mut()
            .for_each(|v| *v = (*v - max).exp() / sum / n as f64);
        row[c] -= 1.0 / n as f64;
    }
    (loss / n as f64, grad)
}

#[derive(Clone, Debug)]
pub struct SupervisedRun {
    pub model: SupervisedModel,
    pub epoch_losses: Vec<f64>,
}

/// Trains on the `Train` windows of `windows` for one task.
pub fn train_supervised(
    windows: &[Window],
    task: Task,
    config: &SupervisedConfig,
    seed: u64,
) -> Result<SupervisedRun> {
    let train: Vec<&Window> = windows.iter().filter(|w| w.split == Split::Train).collect();
    let owned: Vec<Window> = train.iter().map(|w| (*w).clone()).collect();
    let length = check_windows(&owned, config.architecture.channels)?;
    config.validate(length)?;
    let mut model = SupervisedModel::new(&config.architecture, task, seed)?;
    let n_steps = batches(&(0..owned.len()).collect::<Vec<_>>(), config.batch_size).count();
    let total = n_steps * config.epochs;
    let mut adam = Adam::new(config.adam);
    let run_seed = derive_seed(seed, &[task.index() as u64]);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled(owned.len(), run_seed, epoch);
        let mut sum = 0.0;
        let mut count = 0;
        for batch in batches(&order, config.batch_size) {
            let x = batch_tensor(batch.iter().map(|&i| &owned[i]))?;
            let y: Vec<usize> = batch.iter().map(|&i| owned[i].labels.get(task)).collect();
            let mut rng = derived_rng(run_seed, &[stream::DROPOUT, epoch as u64, step as u64]);
            model.encoder.zero_grad();
            model.head.zero_grad();
            let logits = model
                .head
                .forward(&model.encoder.forward(&x, &mut rng)?, &mut rng)?;
            let (loss, dl) = cross_entropy(&logits, &y);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(loss));
            }
            let dh = model.head.backward(&dl)?;
            model.encoder.backward_params(&dh)?;
            let mut params: Vec<&mut Param> = model
                .encoder
                .params_mut()
                .chain(model.head.params_mut())
                .collect();
            adam.step(&mut params, cosine_lr(step, total, config.learning_rate))?;
            sum += loss;
            count += 1;
            step += 1;
        }
        history.push(sum / count.max(1) as f64);
    }
    model.encoder.clear_caches();
    model.head.clear_caches();
    model.encoder.set_mode(Mode::Inference);
    model.head.set_mode(Mode::Inference);
    Ok(SupervisedRun {
        model,
        epoch_losses: history,
    })
}

/// F1 of the model's own predictions on the `Test` windows.
pub fn score_supervised(
    model: &SupervisedModel,
    windows: &[Window],
    seed: u64,
) -> Result<RunScore> {
    let test: Vec<Window> = windows
        .iter()
        .filter(|w| w.split == Split::Test)
        .cloned()
        .collect();
    let labels: Vec<usize> = test.iter().map(|w| w.labels.get(model.task)).collect();
    let (f1_macro, f1_micro) = f1_scores(&model.predict(&test)?, &labels, model.task.n_classes());
    Ok(RunScore {
        seed,
        f1_macro,
        f1_micro,
        l2: 0.0,
    })
}
