use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pooling,
    Abmil,
    Clam,
    Lora,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Pooling, Strategy::Abmil, Strategy::Clam, Strategy::Lora];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Pooling => "pooling",
            Strategy::Abmil => "abmil",
            Strategy::Clam => "clam",
            Strategy::Lora => "lora",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    Max,
    Meanmax,
    Abmil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    pub attn_dim: usize,
    pub attn_dropout: f64,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self { kind: AggregatorKind::Abmil, attn_dim: 128, attn_dropout: 0.25 }
    }
}

impl AggregatorSpec {
    pub fn output_dim(&self, feature_dim: usize) -> usize {
        match self.kind {
            AggregatorKind::Meanmax => 2 * feature_dim,
            _ => feature_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSpec {
    pub hidden_sizes: Vec<usize>,
    pub dropout: f64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { hidden_sizes: vec![128], dropout: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClamSpec {
    /// Top/bottom attention patches supervised per bag.
    pub k: usize,
    /// Share of the total loss given to the instance loss.
    pub instance_weight: f64,
}

impl Default for ClamSpec {
    fn default() -> Self {
        Self { k: 8, instance_weight: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
    pub target_attention: bool,
    /// Base tensors trained alongside the adapters.
    pub unfrozen: Vec<String>,
}

impl Default for LoraSpec {
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0, target_attention: false, unfrozen: Vec::new() }
    }
}

impl LoraSpec {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Full architecture description; serialized as `model_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub strategy: Strategy,
    pub class_labels: Vec<String>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub aggregator: AggregatorSpec,
    #[serde(default)]
    pub head: HeadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clam: Option<ClamSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraSpec>,
}

fn default_feature_dim() -> usize {
    crate::store::DEFAULT_FEATURE_DIM
}

impl ModelConfig {
    /// The default configuration for `strategy`: ABMIL aggregator except for
    /// pooling, which uses mean-max.
    pub fn for_strategy(strategy: Strategy, class_labels: Vec<String>, feature_dim: usize) -> Self {
        let mut aggregator = AggregatorSpec::default();
        if strategy == Strategy::Pooling {
            aggregator.kind = AggregatorKind::Meanmax;
        }
        Self {
            strategy,
            class_labels,
            feature_dim,
            aggregator,
            head: HeadSpec::default(),
            clam: (strategy == Strategy::Clam).then(ClamSpec::default),
            lora: (strategy == Strategy::Lora).then(LoraSpec::default),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn uses_attention(&self) -> bool {
        self.aggregator.kind == AggregatorKind::Abmil
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.class_labels.len() < 2 {
            return bad(format!("need at least 2 classes, got {}", self.class_labels.len()));
        }
        let distinct: std::collections::BTreeSet<&String> = self.class_labels.iter().collect();
        if distinct.len() != self.class_labels.len() {
            return bad("class labels must be distinct".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        let agg = &self.aggregator;
        if agg.attn_dim == 0 || !(0.0..1.0).contains(&agg.attn_dropout) {
            return bad("attn_dim must be >= 1 and attn_dropout in [0, 1)".into());
        }
        if self.head.hidden_sizes.contains(&0) || !(0.0..1.0).contains(&self.head.dropout) {
            return bad("hidden sizes must be >= 1 and head dropout in [0, 1)".into());
        }
        match self.strategy {
            Strategy::Pooling if self.uses_attention() => {
                return bad("pooling strategy requires a mean, max or meanmax aggregator".into())
            }
            Strategy::Abmil | Strategy::Clam if !self.uses_attention() => {
                return bad(format!("{} strategy requires the abmil aggregator", self.strategy))
            }
            _ => {}
        }
        match (self.strategy, &self.clam) {
            (Strategy::Clam, Some(c)) => {
                if c.k == 0 || !(0.0..=1.0).contains(&c.instance_weight) {
                    return bad("clam requires k >= 1 and instance_weight in [0, 1]".into());
                }
            }
            (Strategy::Clam, None) => return bad("clam strategy requires a clam section".into()),
            (_, Some(_)) => return bad("clam section is only valid for the clam strategy".into()),
            _ => {}
        }
        match (self.strategy, &self.lora) {
            (Strategy::Lora, Some(l)) => {
                if l.rank == 0 || !l.alpha.is_finite() {
                    return bad("lora requires rank >= 1 and finite alpha".into());
                }
                let layers = super::lora::adapted_layers(self);
                if layers.is_empty() {
                    return bad("lora config adapts no layers".into());
                }
                for layer in layers {
                    if l.rank > layer.rows.min(layer.cols) {
                        return bad(format!(
                            "lora rank {} exceeds min dimension of {} ({}x{})",
                            l.rank, layer.name, layer.rows, layer.cols
                        ));
                    }
                }
            }
            (Strategy::Lora, None) => return bad("lora strategy requires a lora section".into()),
            (_, Some(_)) => return bad("lora section is only valid for the lora strategy".into()),
            _ => {}
        }
        Ok(())
    }
}
