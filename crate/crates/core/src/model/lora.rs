//! Low-rank adapters: `W_eff = W_frozen + (alpha / rank) * B * A`.
//!
//! Hidden head layers are always adapted, the attention projection only
//! with `target_attention`. The output layer is trained directly.

use std::borrow::Cow;

use ndarray::Array2;

use super::config::ModelConfig;
use super::params::{head_weight, ModelParams, ATTN_PROJ_W, HEAD_OUT_B, HEAD_OUT_W};
use super::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptedLayer {
    /// Name of the frozen base weight.
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

pub fn adapted_layers(config: &ModelConfig) -> Vec<AdaptedLayer> {
    let Some(lora) = &config.lora else { return Vec::new() };
    let mut out = Vec::new();
    if lora.target_attention && config.uses_attention() {
        out.push(AdaptedLayer {
            name: ATTN_PROJ_W.to_owned(),
            rows: config.aggregator.attn_dim,
            cols: config.feature_dim,
        });
    }
    let mut width = config.aggregator.output_dim(config.feature_dim);
    for (l, &h) in config.head.hidden_sizes.iter().enumerate() {
        out.push(AdaptedLayer { name: head_weight(l), rows: h, cols: width });
        width = h;
    }
    out
}

/// `(A, B)` tensor names for an adapted base weight.
pub fn adapter_names(base: &str) -> (String, String) {
    let stem = base.strip_suffix(".weight").unwrap_or(base);
    (format!("lora.{stem}.a"), format!("lora.{stem}.b"))
}

/// Adapter parameter count for an `out x in` layer at `rank`.
pub fn adapter_param_count(rows: usize, cols: usize, rank: usize) -> usize {
    rank * cols + rows * rank
}

/// Tensors that receive gradients and optimizer updates.
pub fn trainable_names(config: &ModelConfig, params: &ModelParams<impl Real>) -> Vec<String> {
    match &config.lora {
        None => params.names().map(str::to_owned).collect(),
        Some(lora) => params
            .names()
            .filter(|n| {
                n.starts_with("lora.") || *n == HEAD_OUT_W || *n == HEAD_OUT_B || lora.unfrozen.iter().any(|u| u == n)
            })
            .map(str::to_owned)
            .collect(),
    }
}

/// The weight a layer actually applies: the base tensor, plus the scaled
/// low-rank delta when the layer is adapted.
pub fn effective_weight<'a, T: Real>(config: &ModelConfig, params: &'a ModelParams<T>, name: &str) -> Cow<'a, Array2<T>> {
    let base = params.get(name);
    let Some(lora) = &config.lora else { return Cow::Borrowed(base) };
    let (a_name, b_name) = adapter_names(name);
    match (params.try_get(&a_name), params.try_get(&b_name)) {
        (Some(a), Some(b)) => {
            let scale = T::from_f64(lora.scale()).unwrap();
            Cow::Owned(base + &(b.dot(a) * scale))
        }
        _ => Cow::Borrowed(base),
    }
}
