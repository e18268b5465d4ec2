//! Answer refining: a toy start/end scorer and the best span inside the
//! predicted answer node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::linalg::softmax;
use crate::encoder::{question_words, token_bucket, NodeDistribution};
use crate::html_dom::{DomError, DomTree, NodeId, TokenSequence, TokenSpan};

/// Extra logit added to every tag token.
pub const TAG_PENALTY: f64 = -4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QaError {
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("no candidate span in window {start}..={end}")]
    EmptyWindow { start: usize, end: usize },
    #[error("window {start}..={end} exceeds {len} tokens")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("node {0} contains no word tokens")]
    NodeWithoutWordTokens(NodeId),
    #[error("score vectors have {start} and {end} entries for {len} tokens")]
    ShapeMismatch { start: usize, end: usize, len: usize },
    #[error("non-finite span logits")]
    NonFinite,
    #[error(transparent)]
    Dom(#[from] DomError),
}

/// Start and end probabilities over page tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScores {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SpanScores {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// Toy span scorer: per-bucket start and end logits plus question-overlap
/// bonuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaParams {
    pub buckets: usize,
    pub start_table: Vec<f64>,
    pub end_table: Vec<f64>,
    pub start_bonus: f64,
    pub end_bonus: f64,
}

impl QaParams {
    /// Zero tables and zero bonuses: uniform over words, tags penalized.
    pub fn new(buckets: usize) -> Self {
        QaParams {
            buckets,
            start_table: vec![0.0; buckets],
            end_table: vec![0.0; buckets],
            start_bonus: 0.0,
            end_bonus: 0.0,
        }
    }

    pub fn with_bonus(mut self, start: f64, end: f64) -> Self {
        self.start_bonus = start;
        self.end_bonus = end;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.start_bonus.is_finite()
            && self.end_bonus.is_finite()
            && self
                .start_table
                .iter()
                .chain(&self.end_table)
                .all(|v| v.is_finite())
    }
}

impl Default for QaParams {
    fn default() -> Self {
        QaParams::new(1024)
    }
}

pub fn toy_span_score(
    question: &TokenSequence,
    page: &TokenSequence,
    params: &QaParams,
) -> Result<SpanScores, QaError> {
    if page.is_empty() {
        return Err(QaError::EmptySequence);
    }
    if params.buckets == 0
        || params.start_table.len() != params.buckets
        || params.end_table.len() != params.buckets
    {
        return Err(QaError::ShapeMismatch {
            start: params.start_table.len(),
            end: params.end_table.len(),
            len: params.buckets,
        });
    }
    let qwords = question_words(question);
    let mut start = Vec::with_capacity(page.len());
    let mut end = Vec::with_capacity(page.len());
    for tok in &page.tokens {
        let b = token_bucket(&tok.text, params.buckets);
        let overlap = tok.is_word() && qwords.contains(&tok.text.to_lowercase());
        let penalty = if tok.is_tag() { TAG_PENALTY } else { 0.0 };
        let o = if overlap { 1.0 } else { 0.0 };
        start.push(params.start_table[b] + params.start_bonus * o + penalty);
        end.push(params.end_table[b] + params.end_bonus * o + penalty);
    }
    let start = softmax(&start).ok_or(QaError::NonFinite)?;
    let end = softmax(&end).ok_or(QaError::NonFinite)?;
    Ok(SpanScores { start, end })
}

/// Best `(i, j)` with `window.start <= i <= j <= window.end` by
/// `start[i] + end[j]`, ties to the smallest `i` and then the smallest `j`.
pub fn constrained_span_select(scores: &SpanScores, window: TokenSpan) -> Result<TokenSpan, QaError> {
    let len = scores.len();
    if scores.end.len() != len {
        return Err(QaError::ShapeMismatch {
            start: len,
            end: scores.end.len(),
            len,
        });
    }
    if window.end >= len {
        return Err(QaError::WindowOutOfRange {
            start: window.start,
            end: window.end,
            len,
        });
    }
    if window.start > window.end {
        return Err(QaError::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    }
    let mut best_start = window.start;
    let mut best: Option<(f64, usize, usize)> = None;
    for j in window.start..=window.end {
        if scores.start[j] > scores.start[best_start] {
            best_start = j;
        }
        let value = scores.start[best_start] + scores.end[j];
        let better = match best {
            None => true,
            Some((v, i, _)) => value > v || (value == v && best_start < i),
        };
        if better {
            best = Some((value, best_start, j));
        }
    }
    let (_, i, j) = best.expect("window is non-empty");
    Ok(TokenSpan::new(i, j))
}

/// Outcome of the answer refining stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    /// Node the span was taken from; differs from the requested node after
    /// a fallback.
    pub node: NodeId,
    pub span: TokenSpan,
    pub text: String,
    pub fallback: Option<QaError>,
}

/// Pick the answer span inside `node`.
///
/// When `node` holds no word tokens and a distribution is given, the most
/// probable node whose subtree has words is used instead and the original
/// error is kept in [`Refined::fallback`].
pub fn refine(
    scores: &SpanScores,
    page: &TokenSequence,
    tree: &DomTree,
    node: NodeId,
    dist: Option<&NodeDistribution>,
) -> Result<Refined, QaError> {
    if scores.len() != page.len() || scores.end.len() != page.len() {
        return Err(QaError::ShapeMismatch {
            start: scores.len(),
            end: scores.end.len(),
            len: page.len(),
        });
    }
    tree.node(node)?;
    let (used, fallback) = if tree.subtree_has_words(page, node) {
        (node, None)
    } else {
        let err = QaError::NodeWithoutWordTokens(node);
        let Some(dist) = dist else {
            return Err(err);
        };
        let next = dist
            .ranked()
            .into_iter()
            .find(|&id| id < tree.len() && tree.subtree_has_words(page, id))
            .ok_or_else(|| err.clone())?;
        (next, Some(err))
    };
    let span = constrained_span_select(scores, tree.node_token_span(used)?)?;
    let text = page.span_text(span);
    Ok(Refined {
        node: used,
        span,
        text,
        fallback,
    })
}
