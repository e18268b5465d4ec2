//! The node-locating model.
//!
//! Page tokens are embedded by a small question-aware context encoder,
//! averaged into one vector per DOM node over the node's direct contents,
//! passed through `L` graph-attention blocks whose heads are each restricted
//! by the mask of one relation graph, and scored by a linear layer with a
//! softmax over all nodes.
//!
//! Everything runs in `f64`. Gradients are derived by hand in [`backward`]
//! and checked against finite differences in the test suite.

mod backward;
pub mod linalg;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphBundle, GraphOptions, RelationKind};
use crate::html_dom::{DomTree, NodeId, TokenSequence};

pub use backward::loss_and_grads;
pub use linalg::Matrix;
pub(crate) use model::question_words;
pub use model::{
    build_mask, forward, gat_head, gat_layer, locate_node, mean_pool, token_bucket, toy_context_encode,
    AttentionTrace, MaskMatrix, NodeDistribution, NodeMatrix,
};
pub use params::{HeadParams, LayerParams, TieParams};
pub use train::{node_accuracy, train, EpochStats, Trained};

/// Half-width of the uniform parameter initialization.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("page has {len} tokens, more than the limit of {max}")]
    TooManyTokens { len: usize, max: usize },
    #[error("non-finite value in attention input")]
    NonFiniteInput,
    #[error("non-finite node logits")]
    NonFiniteLogits,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("gold node {gold} out of range for {n} nodes")]
    GoldOutOfRange { gold: NodeId, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Divide attention scores by `sqrt(d)`, `d` the node width.
    #[default]
    FullDim,
    /// Divide by `sqrt(d / H)`, the per-head width.
    PerHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Relation graph used by each head, `heads` entries.
    pub assignment: Vec<RelationKind>,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub max_tokens: usize,
    /// Rows of the hashed embedding table.
    pub buckets: usize,
    pub batch_size: usize,
    /// Graphs the heads attend over.
    #[serde(default)]
    pub graph: GraphOptions,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 48,
            heads: 12,
            layers: 3,
            assignment: default_assignment(12),
            residual: false,
            scale_mode: ScaleMode::FullDim,
            seed: 0,
            learning_rate: 0.5,
            epochs: 200,
            max_tokens: 1024,
            buckets: 1024,
            batch_size: 8,
            graph: GraphOptions::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.heads == 0 || self.dim == 0 {
            return bad("dim and heads must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if self.layers == 0 {
            return bad("at least one attention layer is required".into());
        }
        if self.assignment.len() != self.heads {
            return bad(format!(
                "assignment names {} heads, expected {}",
                self.assignment.len(),
                self.heads
            ));
        }
        if self.buckets == 0 || self.max_tokens == 0 || self.batch_size == 0 {
            return bad("buckets, max_tokens and batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.graph.gamma) {
            return bad(format!("gamma {} is outside [0, 1]", self.graph.gamma));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning rate {} is invalid", self.learning_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn score_scale(&self) -> f64 {
        match self.scale_mode {
            ScaleMode::FullDim => (self.dim as f64).sqrt(),
            ScaleMode::PerHead => (self.head_dim() as f64).sqrt(),
        }
    }

    /// Whether `params` have the shapes this configuration describes.
    pub fn check_params(&self, params: &TieParams) -> Result<(), ModelError> {
        if params.dim != self.dim
            || params.heads != self.heads
            || params.layer_count() != self.layers
            || params.buckets != self.buckets
        {
            return Err(ModelError::ShapeMismatch(format!(
                "params are d={} H={} L={} B={}, config wants d={} H={} L={} B={}",
                params.dim,
                params.heads,
                params.layer_count(),
                params.buckets,
                self.dim,
                self.heads,
                self.layers,
                self.buckets
            )));
        }
        Ok(())
    }
}

/// Head-to-graph assignment with a third of the heads on the DOM relation
/// and the rest spread over the four position relations. Gives 4 DOM + 2
/// per direction for 12 heads and 4 DOM + 3 per direction for 16.
pub fn default_assignment(heads: usize) -> Vec<RelationKind> {
    let dom = if heads >= 3 { heads / 3 } else { heads.min(1) };
    let dom = if heads == 16 { 4 } else { dom };
    let npr = heads - dom;
    let per_dir = npr / 4;
    let extra = npr % 4;
    let mut out = vec![RelationKind::DomDense; dom];
    for (i, kind) in RelationKind::ALL[1..].iter().enumerate() {
        let count = per_dir + usize::from(i < extra);
        out.extend(std::iter::repeat_n(*kind, count));
    }
    out
}

/// Parse `dom,dom,up,...` or the counted form `dom:4,up:2,...`.
pub fn parse_assignment(spec: &str) -> Result<Vec<RelationKind>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once(':') {
            Some((kind, count)) => {
                let kind: RelationKind = kind.parse()?;
                let count: usize = count
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad head count in `{part}`"))?;
                out.extend(std::iter::repeat_n(kind, count));
            }
            None => out.push(part.parse()?),
        }
    }
    if out.is_empty() {
        return Err("empty head assignment".to_string());
    }
    Ok(out)
}

/// Usage count per relation kind, in `RelationKind::ALL` order.
pub fn assignment_counts(assignment: &[RelationKind]) -> [usize; 5] {
    let mut counts = [0; 5];
    for k in assignment {
        counts[k.code() as usize] += 1;
    }
    counts
}

/// One training or scoring instance for the node locator.
#[derive(Debug, Clone, Copy)]
pub struct NodeExample<'a> {
    pub question: &'a TokenSequence,
    pub page: &'a TokenSequence,
    pub tree: &'a DomTree,
    pub bundle: &'a GraphBundle,
    pub gold: NodeId,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_twelve_heads() {
        let a = default_assignment(12);
        assert_eq!(assignment_counts(&a), [4, 2, 2, 2, 2]);
        assert_eq!(assignment_counts(&default_assignment(16)), [4, 3, 3, 3, 3]);
        assert_eq!(default_assignment(1), vec![RelationKind::DomDense]);
        assert_eq!(default_assignment(7).len(), 7);
    }

    #[test]
    fn assignment_parsing() {
        let a = parse_assignment("dom:4,up:2,down:2,left:2,right:2").unwrap();
        assert_eq!(a, default_assignment(12));
        let b = parse_assignment("dom, up").unwrap();
        assert_eq!(b, vec![RelationKind::DomDense, RelationKind::Up]);
        assert!(parse_assignment("sideways").is_err());
        assert!(parse_assignment("").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig {
            dim: 22,
            ..EncoderConfig::default()
        };
        assert!(matches!(bad.validate(), Err(ModelError::InvalidConfig(_))));
        let bad = EncoderConfig {
            layers: 0,
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            assignment: default_assignment(6),
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn score_scale_modes() {
        let c = EncoderConfig {
            dim: 24,
            ..EncoderConfig::default()
        };
        assert_eq!(c.score_scale(), 24f64.sqrt());
        let c = EncoderConfig {
            scale_mode: ScaleMode::PerHead,
            ..c
        };
        assert_eq!(c.score_scale(), 2f64.sqrt());
    }
}
