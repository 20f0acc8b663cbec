//! Contrastive self-supervised learning for multichannel actigraphy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod byol;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod simclr;
pub mod supervised;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
