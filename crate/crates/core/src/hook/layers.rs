use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ConfigError, LayerPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    PositionalEmbedding,
    AttentionQkv,
    AttentionOutProj,
    FeedForward,
    LmHead,
    Norm,
    Bias,
    Other,
}

impl LayerKind {
    pub const ALL: [LayerKind; 9] = [
        LayerKind::Embedding,
        LayerKind::PositionalEmbedding,
        LayerKind::AttentionQkv,
        LayerKind::AttentionOutProj,
        LayerKind::FeedForward,
        LayerKind::LmHead,
        LayerKind::Norm,
        LayerKind::Bias,
        LayerKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Embedding => "embedding",
            LayerKind::PositionalEmbedding => "positional_embedding",
            LayerKind::AttentionQkv => "attention_qkv",
            LayerKind::AttentionOutProj => "attention_out_proj",
            LayerKind::FeedForward => "feed_forward",
            LayerKind::LmHead => "lm_head",
            LayerKind::Norm => "norm",
            LayerKind::Bias => "bias",
            LayerKind::Other => "other",
        }
    }
}

impl FromStr for LayerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownLayerKind(s.to_owned()))
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parameter tensor in flat-parameter order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub parameter_count: usize,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, parameter_count: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            parameter_count,
        }
    }
}

fn flagged(kind: LayerKind, policy: LayerPolicy, include_out_proj: bool) -> bool {
    match policy {
        LayerPolicy::None => false,
        LayerPolicy::AllLayers => true,
        LayerPolicy::NonAttentionLinear => match kind {
            LayerKind::Embedding
            | LayerKind::PositionalEmbedding
            | LayerKind::FeedForward
            | LayerKind::LmHead => true,
            LayerKind::AttentionOutProj => include_out_proj,
            LayerKind::AttentionQkv | LayerKind::Norm | LayerKind::Bias | LayerKind::Other => false,
        },
    }
}

/// Per-layer compression flags under `policy`.
pub fn classify_layers(
    layers: &[LayerSpec],
    policy: LayerPolicy,
    include_out_proj: bool,
) -> Result<Vec<bool>, ConfigError> {
    layers
        .iter()
        .map(|l| {
            if l.parameter_count == 0 {
                Err(ConfigError::EmptyLayer(l.name.clone()))
            } else {
                Ok(flagged(l.kind, policy, include_out_proj))
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindShare {
    pub kind: LayerKind,
    pub params: u64,
    pub flagged_params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDecision {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub compressed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub policy: LayerPolicy,
    pub include_out_proj: bool,
    pub total_params: u64,
    pub flagged_params: u64,
    pub flagged_share: f64,
    pub per_kind: Vec<KindShare>,
    pub layers: Vec<LayerDecision>,
}

pub fn classification_report(
    layers: &[LayerSpec],
    policy: LayerPolicy,
    include_out_proj: bool,
) -> Result<ClassificationReport, ConfigError> {
    let flags = classify_layers(layers, policy, include_out_proj)?;
    let mut per_kind: BTreeMap<LayerKind, (u64, u64)> = BTreeMap::new();
    let mut decisions = Vec::with_capacity(layers.len());
    for (l, &f) in layers.iter().zip(&flags) {
        let params = l.parameter_count as u64;
        let e = per_kind.entry(l.kind).or_default();
        e.0 += params;
        if f {
            e.1 += params;
        }
        decisions.push(LayerDecision {
            name: l.name.clone(),
            kind: l.kind,
            params,
            compressed: f,
        });
    }
    let total_params: u64 = per_kind.values().map(|e| e.0).sum();
    let flagged_params: u64 = per_kind.values().map(|e| e.1).sum();
    Ok(ClassificationReport {
        policy,
        include_out_proj,
        total_params,
        flagged_params,
        flagged_share: if total_params == 0 {
            0.0
        } else {
            flagged_params as f64 / total_params as f64
        },
        per_kind: per_kind
            .into_iter()
            .map(|(kind, (params, flagged_params))| KindShare {
                kind,
                params,
                flagged_params,
            })
            .collect(),
        layers: decisions,
    })
}
