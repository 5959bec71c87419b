//! MIL classifiers: an aggregator reduces a bag of patch features to one
//! slide vector, and an MLP head maps it to class logits. Gradients are
//! derived by hand; see `network.rs`.

mod config;
pub mod lora;
mod network;
mod params;

pub use config::{AggregatorKind, AggregatorSpec, ClamSpec, HeadSpec, LoraSpec, ModelConfig, Strategy};
pub use network::{forward, loss_and_grads, ForwardResult, LossConfig, LossOutput, Mode};
pub use params::{
    head_bias, head_weight, init_params, instance_bias, instance_weight, param_layout, InitKind, ModelParams,
    ATTN_PROJ_B, ATTN_PROJ_W, ATTN_SCORE_B, ATTN_SCORE_W, HEAD_OUT_B, HEAD_OUT_W,
};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Scalar type the networks are generic over (`f32` for training, `f64`
/// for gradient checks).
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}
