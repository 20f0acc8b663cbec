use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng::RunRng;
use crate::tensor::{gemm, MatRef, Tensor};

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Valid-padding 1-D convolution over `(batch, channels, length)`.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Batch normalization over `(batch, features)`.
    #[serde(rename = "batchnorm1d")]
    BatchNorm1d {
        features: usize,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Sigmoid,
    /// Max over the time axis: `(batch, channels, length) -> (batch, channels)`.
    GlobalMaxPool,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if stride < 1 {
                    return Err("conv1d stride must be at least 1".into());
                }
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err("conv1d channels and kernel must be positive".into());
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if outputs == 0 || inputs == 0 {
                    return Err("dense widths must be at least 1".into());
                }
            }
            LayerSpec::BatchNorm1d { features } => {
                if features == 0 {
                    return Err("batchnorm1d needs at least one feature".into());
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::GlobalMaxPool => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm1d { .. } => "batchnorm1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::GlobalMaxPool => "global-max-pool",
        }
    }

    /// Output extents for an input of extents `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[1] != in_channels {
                    return Err(format!(
                        "conv1d expects (batch, {in_channels}, length), got {input:?}"
                    ));
                }
                if input[2] < kernel {
                    return Err(format!(
                        "conv1d kernel {kernel} is longer than the input length {}",
                        input[2]
                    ));
                }
                Ok(vec![
                    input[0],
                    out_channels,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input.len() != 2 || input[1] != inputs {
                    return Err(format!("dense expects (batch, {inputs}), got {input:?}"));
                }
                Ok(vec![input[0], outputs])
            }
            LayerSpec::BatchNorm1d { features } => {
                if input.len() != 2 || input[1] != features {
                    return Err(format!(
                        "batchnorm1d expects (batch, {features}), got {input:?}"
                    ));
                }
                Ok(input.to_vec())
            }
            LayerSpec::GlobalMaxPool => {
                if input.len() != 3 || input[2] == 0 {
                    return Err(format!(
                        "global-max-pool expects (batch, channels, length>0), got {input:?}"
                    ));
                }
                Ok(vec![input[0], input[1]])
            }
            LayerSpec::Dropout { .. } | LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Batch-norm scale and shift.
    Norm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub role: ParamRole,
}

impl Param {
    pub fn new(value: Tensor, role: ParamRole) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, role }
    }
}

#[derive(Clone, Debug, Default)]
enum Cache {
    #[default]
    Empty,
    Input(Tensor),
    Output(Tensor),
    Mask(Option<Vec<f64>>),
    ArgMax {
        indices: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

#[derive(Clone, Debug)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Param>,
    buffers: Vec<Tensor>,
    cache: Cache,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RunRng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| dist.sample(rng))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape computed from extents")
}

impl Layer {
    /// Materializes parameters: Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(spec: LayerSpec, rng: &mut RunRng) -> Result<Self, String> {
        spec.validate()?;
        let (params, buffers) = match spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                vec![
                    Param::new(
                        glorot(
                            &[out_channels, in_channels, kernel],
                            in_channels * kernel,
                            out_channels * kernel,
                            rng,
                        ),
                        ParamRole::Weight,
                    ),
                    Param::new(Tensor::zeros(&[out_channels]), ParamRole::Bias),
                ],
                vec![],
            ),
            LayerSpec::Dense { inputs, outputs } => (
                vec![
                    Param::new(
                        glorot(&[outputs, inputs], inputs, outputs, rng),
                        ParamRole::Weight,
                    ),
                    Param::new(Tensor::zeros(&[outputs]), ParamRole::Bias),
                ],
                vec![],
            ),
            LayerSpec::BatchNorm1d { features } => (
                vec![
                    Param::new(Tensor::filled(&[features], 1.0), ParamRole::Norm),
                    Param::new(Tensor::zeros(&[features]), ParamRole::Norm),
                ],
                vec![Tensor::zeros(&[features]), Tensor::filled(&[features], 1.0)],
            ),
            _ => (vec![], vec![]),
        };
        Ok(Self {
            spec,
            params,
            buffers,
            cache: Cache::Empty,
        })
    }

    /// Rebuilds a layer from stored parameter values and buffers.
    pub fn from_parts(
        spec: LayerSpec,
        values: Vec<Tensor>,
        buffers: Vec<Tensor>,
    ) -> Result<Self, String> {
        let mut scratch = crate::rng::rng_from(0);
        let mut layer = Layer::init(spec, &mut scratch)?;
        if values.len() != layer.params.len() || buffers.len() != layer.buffers.len() {
            return Err(format!(
                "{} expects {} parameters and {} buffers",
                layer.spec.name(),
                layer.params.len(),
                layer.buffers.len()
            ));
        }
        for (param, value) in layer.params.iter_mut().zip(values) {
            if param.value.shape() != value.shape() {
                return Err(format!(
                    "parameter shape {:?} does not match {:?}",
                    value.shape(),
                    param.value.shape()
                ));
            }
            param.value = value;
        }
        for (slot, value) in layer.buffers.iter_mut().zip(buffers) {
            if slot.shape() != value.shape() {
                return Err(format!(
                    "buffer shape {:?} does not match {:?}",
                    value.shape(),
                    slot.shape()
                ));
            }
            *slot = value;
        }
        Ok(layer)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = Cache::Empty;
    }

    /// Pure inference-mode forward pass.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, String> {
        let out_shape = self.spec.output_shape(x.shape())?;
        Ok(match self.spec {
            LayerSpec::Conv1d { kernel, stride, .. } => conv1d_forward(
                x,
                &self.params[0].value,
                &self.params[1].value,
                kernel,
                stride,
                &out_shape,
            ),
            LayerSpec::Dense { .. } => {
                dense_forward(x, &self.params[0].value, &self.params[1].value, &out_shape)
            }
            LayerSpec::BatchNorm1d { .. } => {
                let inv_std: Vec<f64> = self.buffers[1]
                    .data()
                    .iter()
                    .map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt())
                    .collect();
                let (y, _) = batchnorm_apply(x, self.buffers[0].data(), &inv_std, &self.params);
                y
            }
            LayerSpec::Dropout { .. } => x.clone(),
            // NaN propagates
            LayerSpec::Relu => map(x, |v| if v < 0.0 { 0.0 } else { v }),
            LayerSpec::Sigmoid => map(x, sigmoid),
            LayerSpec::GlobalMaxPool => global_max_pool(x).0,
        })
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward(
        &mut self,
        x: &Tensor,
        training: bool,
        rng: &mut RunRng,
    ) -> Result<Tensor, String> {
        let out_shape = self.spec.output_shape(x.shape())?;
        let (y, cache) = match self.spec {
            LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. } => {
                (self.infer(x)?, Cache::Input(x.clone()))
            }
            LayerSpec::BatchNorm1d { features } => {
                if training {
                    let batch = x.dim(0);
                    let mut mean = vec![0.0; features];
                    let mut var = vec![0.0; features];
                    for b in 0..batch {
                        for (m, v) in mean.iter_mut().zip(x.row(b)) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= batch as f64);
                    for b in 0..batch {
                        for ((s, v), m) in var.iter_mut().zip(x.row(b)).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= batch as f64);
                    let inv_std: Vec<f64> = var
                        .iter()
                        .map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt())
                        .collect();
                    let (y, xhat) = batchnorm_apply(x, &mean, &inv_std, &self.params);
                    let unbias = if batch > 1 {
                        batch as f64 / (batch - 1) as f64
                    } else {
                        1.0
                    };
                    let (running_mean, rest) = self.buffers.split_at_mut(1);
                    for (r, m) in running_mean[0].data_mut().iter_mut().zip(&mean) {
                        *r = (1.0 - BATCHNORM_MOMENTUM) * *r + BATCHNORM_MOMENTUM * m;
                    }
                    for (r, v) in rest[0].data_mut().iter_mut().zip(&var) {
                        *r = (1.0 - BATCHNORM_MOMENTUM) * *r + BATCHNORM_MOMENTUM * v * unbias;
                    }
                    (
                        y,
                        Cache::Norm {
                            xhat,
                            inv_std,
                            batch_stats: true,
                        },
                    )
                } else {
                    let inv_std: Vec<f64> = self.buffers[1]
                        .data()
                        .iter()
                        .map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt())
                        .collect();
                    let (y, xhat) =
                        batchnorm_apply(x, self.buffers[0].data(), &inv_std, &self.params);
                    (
                        y,
                        Cache::Norm {
                            xhat,
                            inv_std,
                            batch_stats: false,
                        },
                    )
                }
            }
            LayerSpec::Dropout { rate } => {
                if training && rate > 0.0 {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| {
                            if rng.random::<f64>() < rate {
                                0.0
                            } else {
                                keep
                            }
                        })
                        .collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (
                        Tensor::new(out_shape, data).map_err(|e| e.to_string())?,
                        Cache::Mask(Some(mask)),
                    )
                } else {
                    (x.clone(), Cache::Mask(None))
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => {
                let y = self.infer(x)?;
                (y.clone(), Cache::Output(y))
            }
            LayerSpec::GlobalMaxPool => {
                let (y, indices) = global_max_pool(x);
                (
                    y,
                    Cache::ArgMax {
                        indices,
                        input_shape: x.shape().to_vec(),
                    },
                )
            }
        };
        self.cache = cache;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the layer input (an empty tensor when `need_input_grad` is false).
    pub fn backward(&mut self, dy: &Tensor, need_input_grad: bool) -> Result<Tensor, String> {
        let cache = std::mem::take(&mut self.cache);
        match (&self.spec, cache) {
            (&LayerSpec::Conv1d { kernel, stride, .. }, Cache::Input(x)) => {
                check_grad_shape(dy, &self.spec.output_shape(x.shape())?)?;
                Ok(self.conv1d_backward(&x, dy, kernel, stride, need_input_grad))
            }
            (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                check_grad_shape(dy, &self.spec.output_shape(x.shape())?)?;
                Ok(self.dense_backward(&x, dy, need_input_grad))
            }
            (
                LayerSpec::BatchNorm1d { features },
                Cache::Norm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let features = *features;
                if dy.len() != xhat.len() {
                    return Err("batchnorm1d gradient has the wrong size".into());
                }
                let batch = dy.dim(0);
                let mut dgamma = vec![0.0; features];
                let mut dbeta = vec![0.0; features];
                for b in 0..batch {
                    let g = dy.row(b);
                    let xh = &xhat[b * features..(b + 1) * features];
                    for j in 0..features {
                        dgamma[j] += g[j] * xh[j];
                        dbeta[j] += g[j];
                    }
                }
                let gamma = self.params[0].value.data().to_vec();
                for (acc, v) in self.params[0].grad.data_mut().iter_mut().zip(&dgamma) {
                    *acc += v;
                }
                for (acc, v) in self.params[1].grad.data_mut().iter_mut().zip(&dbeta) {
                    *acc += v;
                }
                let mut dx = Tensor::zeros(dy.shape());
                let n = batch as f64;
                for b in 0..batch {
                    let g = dy.row(b);
                    let xh = &xhat[b * features..(b + 1) * features];
                    let out = dx.row_mut(b);
                    for j in 0..features {
                        out[j] = if batch_stats {
                            gamma[j] * inv_std[j] / n * (n * g[j] - dbeta[j] - xh[j] * dgamma[j])
                        } else {
                            gamma[j] * inv_std[j] * g[j]
                        };
                    }
                }
                Ok(dx)
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => Ok(match mask {
                Some(mask) => {
                    if mask.len() != dy.len() {
                        return Err("dropout gradient has the wrong size".into());
                    }
                    let data = dy.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                    Tensor::new(dy.shape().to_vec(), data).map_err(|e| e.to_string())?
                }
                None => dy.clone(),
            }),
            (LayerSpec::Relu, Cache::Output(y)) => {
                check_grad_shape(dy, y.shape())?;
                let data = dy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, out)| if *out > 0.0 { *g } else { 0.0 })
                    .collect();
                Tensor::new(dy.shape().to_vec(), data).map_err(|e| e.to_string())
            }
            (LayerSpec::Sigmoid, Cache::Output(y)) => {
                check_grad_shape(dy, y.shape())?;
                let data = dy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                Tensor::new(dy.shape().to_vec(), data).map_err(|e| e.to_string())
            }
            (
                LayerSpec::GlobalMaxPool,
                Cache::ArgMax {
                    indices,
                    input_shape,
                },
            ) => {
                check_grad_shape(dy, &input_shape[..2])?;
                let mut dx = Tensor::zeros(&input_shape);
                let length = input_shape[2];
                let out = dx.data_mut();
                for (slot, (&t, g)) in indices.iter().zip(dy.data()).enumerate() {
                    out[slot * length + t] += g;
                }
                Ok(dx)
            }
            (_, Cache::Empty) => Err(format!(
                "{} backward called without a forward pass",
                self.spec.name()
            )),
            _ => Err(format!("{} has an inconsistent cache", self.spec.name())),
        }
    }

    fn conv1d_backward(
        &mut self,
        x: &Tensor,
        dy: &Tensor,
        kernel: usize,
        stride: usize,
        need_input_grad: bool,
    ) -> Tensor {
        let (batch, cin, length) = (x.dim(0), x.dim(1), x.dim(2));
        let (cout, lout) = (dy.dim(1), dy.dim(2));
        let rows = cin * kernel;
        let mut col = vec![0.0; rows * lout];
        let mut dcol = vec![0.0; rows * lout];
        let mut dx = if need_input_grad {
            Tensor::zeros(x.shape())
        } else {
            Tensor::zeros(&[0])
        };
        let weight = self.params[0].value.data().to_vec();
        for b in 0..batch {
            let xb = x.row(b);
            let gb = dy.row(b);
            im2col(xb, cin, length, kernel, stride, lout, &mut col);
            gemm(
                1.0,
                MatRef::new(gb, cout, lout),
                MatRef::new(&col, rows, lout).t(),
                1.0,
                self.params[0].grad.data_mut(),
            );
            for (o, acc) in self.params[1].grad.data_mut().iter_mut().enumerate() {
                *acc += gb[o * lout..(o + 1) * lout].iter().sum::<f64>();
            }
            if need_input_grad {
                gemm(
                    1.0,
                    MatRef::new(&weight, cout, rows).t(),
                    MatRef::new(gb, cout, lout),
                    0.0,
                    &mut dcol,
                );
                let dxb = dx.row_mut(b);
                for c in 0..cin {
                    for k in 0..kernel {
                        let src = &dcol[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
                        let base = c * length + k;
                        for (t, g) in src.iter().enumerate() {
                            dxb[base + t * stride] += g;
                        }
                    }
                }
            }
        }
        dx
    }

    fn dense_backward(&mut self, x: &Tensor, dy: &Tensor, need_input_grad: bool) -> Tensor {
        let (batch, inputs) = (x.dim(0), x.dim(1));
        let outputs = dy.dim(1);
        gemm(
            1.0,
            MatRef::new(dy.data(), batch, outputs).t(),
            MatRef::new(x.data(), batch, inputs),
            1.0,
            self.params[0].grad.data_mut(),
        );
        let db = self.params[1].grad.data_mut();
        for b in 0..batch {
            for (acc, g) in db.iter_mut().zip(dy.row(b)) {
                *acc += g;
            }
        }
        if !need_input_grad {
            return Tensor::zeros(&[0]);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            1.0,
            MatRef::new(dy.data(), batch, outputs),
            MatRef::new(self.params[0].value.data(), outputs, inputs),
            0.0,
            dx.data_mut(),
        );
        dx
    }
}

fn check_grad_shape(dy: &Tensor, expected: &[usize]) -> Result<(), String> {
    if dy.shape() != expected {
        return Err(format!(
            "gradient shape {:?} does not match output shape {expected:?}",
            dy.shape()
        ));
    }
    Ok(())
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same extents")
}

/// Column `t` of the result holds the receptive field of output position `t`,
/// ordered channel-major then kernel offset, matching the weight layout
/// `(out, in, kernel)`.
fn im2col(
    x: &[f64],
    cin: usize,
    length: usize,
    kernel: usize,
    stride: usize,
    lout: usize,
    col: &mut [f64],
) {
    for c in 0..cin {
        let channel = &x[c * length..(c + 1) * length];
        for k in 0..kernel {
            let dst = &mut col[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
            if stride == 1 {
                dst.copy_from_slice(&channel[k..k + lout]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = channel[k + t * stride];
                }
            }
        }
    }
}

fn conv1d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    kernel: usize,
    stride: usize,
    out_shape: &[usize],
) -> Tensor {
    let (batch, cin, length) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, lout) = (out_shape[1], out_shape[2]);
    let rows = cin * kernel;
    let mut out = Tensor::zeros(out_shape);
    let mut col = vec![0.0; rows * lout];
    for b in 0..batch {
        im2col(x.row(b), cin, length, kernel, stride, lout, &mut col);
        let yb = out.row_mut(b);
        for (o, &bv) in bias.data().iter().enumerate() {
            yb[o * lout..(o + 1) * lout].fill(bv);
        }
        gemm(
            1.0,
            MatRef::new(weight.data(), cout, rows),
            MatRef::new(&col, rows, lout),
            1.0,
            yb,
        );
    }
    out
}

fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, out_shape: &[usize]) -> Tensor {
    let (batch, inputs) = (x.dim(0), x.dim(1));
    let outputs = out_shape[1];
    let mut out = Tensor::zeros(out_shape);
    for b in 0..batch {
        out.row_mut(b).copy_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::new(x.data(), batch, inputs),
        MatRef::new(weight.data(), outputs, inputs).t(),
        1.0,
        out.data_mut(),
    );
    out
}

fn batchnorm_apply(
    x: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    params: &[Param],
) -> (Tensor, Vec<f64>) {
    let features = mean.len();
    let gamma = params[0].value.data();
    let beta = params[1].value.data();
    let mut xhat = vec![0.0; x.len()];
    let mut y = Tensor::zeros(x.shape());
    for b in 0..x.dim(0) {
        let row = x.row(b);
        let out = y.row_mut(b);
        for j in 0..features {
            let h = (row[j] - mean[j]) * inv_std[j];
            xhat[b * features + j] = h;
            out[j] = gamma[j] * h + beta[j];
        }
    }
    (y, xhat)
}

fn global_max_pool(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (batch, channels, length) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(&[batch, channels]);
    let mut indices = Vec::with_capacity(batch * channels);
    let data = x.data();
    for slot in 0..batch * channels {
        let series = &data[slot * length..(slot + 1) * length];
        let (arg, best) =
            series
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, av), (i, &v)| {
                    if v > av || (v.is_nan() && !av.is_nan()) {
                        (i, v)
                    } else {
                        (ai, av)
                    }
                });
        out.data_mut()[slot] = best;
        indices.push(arg);
    }
    (out, indices)
}
