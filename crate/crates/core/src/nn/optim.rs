//! LARS and Adam, plus the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::layer::{Param, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::l2_norm;

/// `base_lr * 0.5 * (1 + cos(pi * step / total_steps))`, zero past the end.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    if step > total_steps {
        return 0.0;
    }
    let progress = step as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Learning rate scaled linearly with the batch size: `factor * batch / 256`.
pub fn batch_scaled_lr(factor: f64, batch_size: usize) -> f64 {
    factor * batch_size as f64 / 256.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LarsConfig {
    pub trust_coefficient: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            trust_coefficient: 0.001,
            weight_decay: 1e-6,
            momentum: 0.9,
            eps: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn ensure_buffers(buffers: &mut Vec<Vec<f64>>, params: &[&mut Param]) -> Result<()> {
    if buffers.is_empty() {
        *buffers = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        return Ok(());
    }
    if buffers.len() != params.len()
        || buffers
            .iter()
            .zip(params)
            .any(|(b, p)| b.len() != p.value.len())
    {
        return Err(Error::Shape(
            "optimizer state does not match the parameter list".into(),
        ));
    }
    Ok(())
}

fn check_grads(params: &[&mut Param]) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        if p.grad.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                p.grad.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(())
}

/// Layer-wise adaptive rate scaling with momentum.
///
/// Weight tensors get the local rate `lr * eta * |w| / (|g| + wd |w| + eps)`
/// applied to `g + wd w`; the ratio falls back to 1 when `|w|` or the
/// denominator is zero. Biases and batch-norm parameters use plain momentum
/// SGD at `lr`.
#[derive(Clone, Debug, Default)]
pub struct Lars {
    pub config: LarsConfig,
    momentum: Vec<Vec<f64>>,
    steps: u64,
}

impl Lars {
    pub fn new(config: LarsConfig) -> Self {
        Self {
            config,
            momentum: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn trust_ratio(&self, weight_norm: f64, grad_norm: f64) -> f64 {
        trust_ratio(&self.config, weight_norm, grad_norm)
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        check_grads(params)?;
        ensure_buffers(&mut self.momentum, params)?;
        let c = self.config;
        for (p, buf) in params.iter_mut().zip(self.momentum.iter_mut()) {
            let (local_lr, decay) = match p.role {
                ParamRole::Weight => {
                    let ratio = trust_ratio(&c, l2_norm(p.value.data()), l2_norm(p.grad.data()));
                    (lr * ratio, c.weight_decay)
                }
                ParamRole::Bias | ParamRole::Norm => (lr, 0.0),
            };
            let Param { value, grad, .. } = &mut **p;
            for ((w, g), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(buf.iter_mut())
            {
                *v = c.momentum * *v + local_lr * (g + decay * *w);
                *w -= *v;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

fn trust_ratio(c: &LarsConfig, weight_norm: f64, grad_norm: f64) -> f64 {
    let denom = grad_norm + c.weight_decay * weight_norm + c.eps;
    if weight_norm == 0.0 || grad_norm + c.weight_decay * weight_norm == 0.0 {
        1.0
    } else {
        c.trust_coefficient * weight_norm / denom
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        check_grads(params)?;
        ensure_buffers(&mut self.first, params)?;
        ensure_buffers(&mut self.second, params)?;
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let correction1 = 1.0 - c.beta1.powi(t);
        let correction2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let Param { value, grad, .. } = &mut **p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Which optimizer updates a network's trainable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Lars,
    Adam,
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Lars(Lars),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lars: LarsConfig, adam: AdamConfig) -> Self {
        match kind {
            OptimizerKind::Lars => Optimizer::Lars(Lars::new(lars)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(adam)),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        match self {
            Optimizer::Lars(o) => o.step(params, lr),
            Optimizer::Adam(o) => o.step(params, lr),
        }
    }
}
