//! Exact match, token F1 and path overlap score.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::html_dom::{Document, DomError, DomTree, TokenSequence, TokenSpan, PUNCTUATION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction {0} has no gold answer")]
    MissingGold(String),
    #[error("qid {0} appears more than once")]
    DuplicateQid(String),
    #[error("span {start}..={end} is outside a page of {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("page {0} is not loaded")]
    UnknownPage(String),
    #[error(transparent)]
    Dom(#[from] DomError),
}

fn is_punctuation_token(t: &str) -> bool {
    !t.is_empty() && t.chars().all(|c| c.is_ascii_punctuation())
}

/// Lowercase and drop punctuation-only tokens.
pub fn normalize_tokens<'a, I>(tokens: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    tokens
        .into_iter()
        .filter(|t| !t.trim().is_empty() && !is_punctuation_token(t))
        .map(str::to_lowercase)
        .collect()
}

/// Normalized tokens of free answer text, split the way the tokenizer
/// splits page text.
pub fn normalize_text(text: &str) -> Vec<String> {
    let pieces = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c| PUNCTUATION.contains(&c)));
    normalize_tokens(pieces)
}

/// Word texts of `span`, normalized or raw.
pub fn span_words(
    page: &TokenSequence,
    span: TokenSpan,
    normalize: bool,
) -> Result<Vec<String>, MetricsError> {
    if span.start > span.end || span.end >= page.len() {
        return Err(MetricsError::SpanOutOfRange {
            start: span.start,
            end: span.end,
            len: page.len(),
        });
    }
    let words = page.tokens[span.start..=span.end]
        .iter()
        .filter(|t| t.is_word())
        .map(|t| t.text.as_str());
    Ok(if normalize {
        normalize_tokens(words)
    } else {
        words.map(str::to_string).collect()
    })
}

/// 1 when the token sequences are identical, else 0.
pub fn exact_match<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    let same = pred.len() == gold.len() && pred.iter().zip(gold).all(|(a, b)| a.as_ref() == b.as_ref());
    if same {
        1.0
    } else {
        0.0
    }
}

/// Harmonic mean of token precision and recall over multisets.
pub fn token_f1<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g.as_ref()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_ref()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Jaccard similarity × 100 of the root paths of the nodes the two spans
/// resolve to.
pub fn pos_score(tree: &DomTree, pred: TokenSpan, gold: TokenSpan) -> Result<f64, MetricsError> {
    let len = tree.token_count();
    for s in [pred, gold] {
        if s.start > s.end || s.end >= len {
            return Err(MetricsError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
    }
    let p: HashSet<usize> = tree
        .root_path(tree.resolve_answer_node(pred)?)
        .into_iter()
        .collect();
    let g: HashSet<usize> = tree
        .root_path(tree.resolve_answer_node(gold)?)
        .into_iter()
        .collect();
    let inter = p.intersection(&g).count();
    let union = p.union(&g).count();
    Ok(inter as f64 / union as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub qid: String,
    pub page_id: String,
    pub span: TokenSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedAnswer {
    pub qid: String,
    pub span: TokenSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub qid: String,
    /// 0 or 1.
    pub em: f64,
    /// In `[0, 1]`.
    pub f1: f64,
    /// Percentage.
    pub pos: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// False when the example had no prediction and was scored as zero.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub predicted: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub em: f64,
    pub f1: f64,
    pub pos: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub em: f64,
    pub f1: f64,
    pub pos: f64,
    pub per_example: Vec<ExampleScore>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Lowercase and drop punctuation before EM and F1.
    pub normalize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { normalize: true }
    }
}

fn aggregate<'a>(scores: impl Iterator<Item = &'a ExampleScore>) -> Aggregate {
    let (mut em, mut f1, mut pos, mut count) = (0.0, 0.0, 0.0, 0usize);
    for s in scores {
        em += s.em;
        f1 += s.f1;
        pos += s.pos;
        count += 1;
    }
    if count == 0 {
        return Aggregate {
            em: 0.0,
            f1: 0.0,
            pos: 0.0,
            count,
        };
    }
    let n = count as f64;
    Aggregate {
        em: em / n * 100.0,
        f1: f1 / n * 100.0,
        pos: pos / n,
        count,
    }
}

/// Score predictions against gold answers, macro-averaged over gold
/// examples in gold order.
///
/// Gold examples without a prediction count as zero on every metric.
pub fn evaluate(
    predictions: &[PredictedAnswer],
    gold: &[GoldAnswer],
    pages: &HashMap<String, Document>,
    options: EvalOptions,
) -> Result<EvalResult, MetricsError> {
    let mut by_qid: HashMap<&str, &PredictedAnswer> = HashMap::new();
    for p in predictions {
        if by_qid.insert(p.qid.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateQid(p.qid.clone()));
        }
    }
    let mut seen = HashSet::new();
    for g in gold {
        if !seen.insert(g.qid.as_str()) {
            return Err(MetricsError::DuplicateQid(g.qid.clone()));
        }
    }
    if let Some(p) = predictions.iter().find(|p| !seen.contains(p.qid.as_str())) {
        return Err(MetricsError::MissingGold(p.qid.clone()));
    }

    let mut per_example = Vec::with_capacity(gold.len());
    for g in gold {
        let doc = pages
            .get(&g.page_id)
            .ok_or_else(|| MetricsError::UnknownPage(g.page_id.clone()))?;
        let gold_words = span_words(&doc.tokens, g.span, options.normalize)?;
        let score = match by_qid.get(g.qid.as_str()) {
            Some(p) => {
                let pred_words = span_words(&doc.tokens, p.span, options.normalize)?;
                ExampleScore {
                    qid: g.qid.clone(),
                    em: exact_match(&pred_words, &gold_words),
                    f1: token_f1(&pred_words, &gold_words),
                    pos: pos_score(&doc.tree, p.span, g.span)?,
                    group: g.group.clone(),
                    predicted: true,
                }
            }
            None => ExampleScore {
                qid: g.qid.clone(),
                em: 0.0,
                f1: 0.0,
                pos: 0.0,
                group: g.group.clone(),
                predicted: false,
            },
        };
        per_example.push(score);
    }

    let total = aggregate(per_example.iter());
    let mut groups = BTreeMap::new();
    let keys: Vec<&String> = per_example.iter().filter_map(|s| s.group.as_ref()).collect();
    for key in keys {
        if !groups.contains_key(key) {
            let agg = aggregate(per_example.iter().filter(|s| s.group.as_ref() == Some(key)));
            groups.insert(key.clone(), agg);
        }
    }
    Ok(EvalResult {
        em: total.em,
        f1: total.f1,
        pos: total.pos,
        per_example,
        groups,
    })
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per example: `qid,em,f1,pos,group`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "qid,em,f1,pos,group")?;
        for s in &self.per_example {
            writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&s.qid),
                s.em,
                s.f1,
                s.pos,
                csv_field(s.group.as_deref().unwrap_or(""))
            )?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
