//! Dense numeric core: sequential networks with reverse-mode gradients and
//! the optimizers that train them.

mod layer;
mod network;
mod optim;

pub use layer::{Layer, LayerSpec, Param, ParamRole, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use network::{Mode, Network};
pub use optim::{
    batch_scaled_lr, cosine_lr, Adam, AdamConfig, Lars, LarsConfig, Optimizer, OptimizerKind,
};
