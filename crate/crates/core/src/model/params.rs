use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::lora::{adapted_layers, adapter_names};
use super::Real;
use crate::rng::substream;

pub const ATTN_PROJ_W: &str = "attn.proj.weight";
pub const ATTN_PROJ_B: &str = "attn.proj.bias";
pub const ATTN_SCORE_W: &str = "attn.score.weight";
pub const ATTN_SCORE_B: &str = "attn.score.bias";
pub const HEAD_OUT_W: &str = "head.out.weight";
pub const HEAD_OUT_B: &str = "head.out.bias";

pub fn head_weight(layer: usize) -> String {
    format!("head.{layer}.weight")
}

pub fn head_bias(layer: usize) -> String {
    format!("head.{layer}.bias")
}

pub fn instance_weight(class: usize) -> String {
    format!("clam.inst.{class}.weight")
}

pub fn instance_bias(class: usize) -> String {
    format!("clam.inst.{class}.bias")
}

/// Named 2-D tensors. Weights are `out x in`, biases `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    tensors: BTreeMap<String, Array2<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    Glorot,
    Zero,
}

/// Name, shape and initializer of every tensor the config needs, in name order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, (usize, usize), InitKind)> {
    use InitKind::*;
    let d = config.feature_dim;
    let mut out = Vec::new();
    if config.uses_attention() {
        let a = config.aggregator.attn_dim;
        out.push((ATTN_PROJ_W.to_owned(), (a, d), Glorot));
        out.push((ATTN_PROJ_B.to_owned(), (1, a), Zero));
        // Zero scores start attention uniform, i.e. at mean pooling.
        out.push((ATTN_SCORE_W.to_owned(), (1, a), Zero));
        out.push((ATTN_SCORE_B.to_owned(), (1, 1), Zero));
    }
    let mut width = config.aggregator.output_dim(d);
    for (l, &h) in config.head.hidden_sizes.iter().enumerate() {
        out.push((head_weight(l), (h, width), Glorot));
        out.push((head_bias(l), (1, h), Zero));
        width = h;
    }
    out.push((HEAD_OUT_W.to_owned(), (config.n_classes(), width), Glorot));
    out.push((HEAD_OUT_B.to_owned(), (1, config.n_classes()), Zero));
    if config.clam.is_some() {
        for c in 0..config.n_classes() {
            out.push((instance_weight(c), (2, d), Glorot));
            out.push((instance_bias(c), (1, 2), Zero));
        }
    }
    if let Some(lora) = &config.lora {
        for layer in adapted_layers(config) {
            let (a, b) = adapter_names(&layer.name);
            out.push((a, (lora.rank, layer.cols), Glorot));
            out.push((b, (layer.rows, lora.rank), Zero));
        }
    }
    out.sort_by(|x, y| x.0.cmp(&y.0));
    out
}

/// Deterministic initialization: uniform Glorot weights, zero biases, zero
/// LoRA `B` factors and a zero attention score vector. Each tensor draws from its own name-keyed stream.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> ModelParams<T> {
    let tensors = param_layout(config)
        .into_iter()
        .map(|(name, (rows, cols), init)| {
            let t = match init {
                InitKind::Zero => Array2::zeros((rows, cols)),
                InitKind::Glorot => {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    let mut rng = substream(seed, &name, 0);
                    Array2::from_shape_fn((rows, cols), |_| T::from_f64((2.0 * rng.next_f64() - 1.0) * bound).unwrap())
                }
            };
            (name, t)
        })
        .collect();
    ModelParams { tensors }
}

impl<T: Real> ModelParams<T> {
    pub fn from_tensors(tensors: BTreeMap<String, Array2<T>>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim()))).collect() }
    }

    /// Panics when the tensor is absent; layouts are validated up front.
    pub fn get(&self, name: &str) -> &Array2<T> {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Array2<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn into_tensors(self) -> BTreeMap<String, Array2<T>> {
        self.tensors
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| U::from_f64(x.to_f64().unwrap()).unwrap())))
                .collect(),
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors.iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())).map(|(k, _)| k.as_str())
    }

    /// Check names and shapes against the config's layout.
    pub fn check_layout(&self, config: &ModelConfig) -> crate::Result<()> {
        let layout = param_layout(config);
        if layout.len() != self.tensors.len() {
            return Err(crate::Error::Integrity(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in layout {
            match self.tensors.get(&name) {
                None => return Err(crate::Error::Integrity(format!("missing tensor {name}"))),
                Some(t) if t.dim() != shape => {
                    return Err(crate::Error::Integrity(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.dim(),
                        shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}
