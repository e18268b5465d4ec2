use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example, Page};
use super::PipelineError;
use crate::encoder::{forward, locate_node, EncoderConfig, NodeDistribution, NodeExample, TieParams};
use crate::html_dom::{NodeId, TokenSpan};
use crate::metrics::PredictedAnswer;
use crate::span_qa::{refine, toy_span_score, QaParams};

/// Output of both stages for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub node_id: NodeId,
    pub node_prob: f64,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

impl Prediction {
    pub fn span(&self) -> TokenSpan {
        TokenSpan::new(self.token_start, self.token_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedExample {
    pub qid: String,
    pub error: String,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictionRecord {
    Ok(Prediction),
    Failed(FailedExample),
}

impl PredictionRecord {
    pub fn qid(&self) -> &str {
        match self {
            PredictionRecord::Ok(p) => &p.qid,
            PredictionRecord::Failed(f) => &f.qid,
        }
    }

    pub fn prediction(&self) -> Option<&Prediction> {
        match self {
            PredictionRecord::Ok(p) => Some(p),
            PredictionRecord::Failed(_) => None,
        }
    }
}

/// Node-locating training instances, one per example.
pub fn node_examples(dataset: &Dataset) -> Vec<NodeExample<'_>> {
    dataset
        .examples
        .iter()
        .map(|e| {
            let page = dataset.page(e);
            NodeExample {
                question: &e.question,
                page: &page.doc.tokens,
                tree: &page.doc.tree,
                bundle: &page.bundle,
                gold: e.gold_node,
            }
        })
        .collect()
}

/// Answer refining for an already computed node distribution.
pub fn answer_from_distribution(
    example: &Example,
    page: &Page,
    dist: &NodeDistribution,
    qa: &QaParams,
) -> Result<Prediction, PipelineError> {
    let node = locate_node(dist);
    let scores = toy_span_score(&example.question, &page.doc.tokens, qa)?;
    let refined = refine(&scores, &page.doc.tokens, &page.doc.tree, node, Some(dist))?;
    if let Some(reason) = &refined.fallback {
        warn!("{}: {reason}; answered from node {}", example.qid, refined.node);
    }
    Ok(Prediction {
        qid: example.qid.clone(),
        node_id: refined.node,
        node_prob: dist.probs[refined.node],
        token_start: refined.span.start,
        token_end: refined.span.end,
        text: refined.text,
        fallback_used: refined.fallback.is_some(),
        fallback_reason: refined.fallback.map(|e| e.to_string()),
    })
}

/// Locate the answer node, then pick the span inside it.
pub fn run_two_stage(
    example: &Example,
    page: &Page,
    params: &TieParams,
    qa: &QaParams,
    config: &EncoderConfig,
) -> Result<Prediction, PipelineError> {
    let dist = forward(
        &example.question,
        &page.doc.tokens,
        &page.doc.tree,
        &page.bundle,
        params,
        config,
    )?;
    answer_from_distribution(example, page, &dist, qa)
}

fn run_one(
    dataset: &Dataset,
    example: &Example,
    params: &TieParams,
    qa: &QaParams,
    config: &EncoderConfig,
) -> PredictionRecord {
    match run_two_stage(example, dataset.page(example), params, qa, config) {
        Ok(p) => PredictionRecord::Ok(p),
        Err(e) => {
            warn!("{}: {e}", example.qid);
            PredictionRecord::Failed(FailedExample {
                qid: example.qid.clone(),
                error: e.to_string(),
            })
        }
    }
}

/// One record per example, in dataset order. Errors become failure
/// records instead of stopping the batch. `threads > 1` splits the work
/// over scoped threads.
pub fn run_batch(
    dataset: &Dataset,
    params: &TieParams,
    qa: &QaParams,
    config: &EncoderConfig,
    threads: usize,
) -> Vec<PredictionRecord> {
    let n = dataset.examples.len();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return dataset
            .examples
            .iter()
            .map(|e| run_one(dataset, e, params, qa, config))
            .collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .examples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|e| run_one(dataset, e, params, qa, config))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("inference thread panicked"))
            .collect()
    })
}

pub fn write_predictions<W: Write>(mut out: W, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parse a predictions file; blank lines are skipped.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| PipelineError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

impl From<&Prediction> for PredictedAnswer {
    fn from(p: &Prediction) -> Self {
        PredictedAnswer {
            qid: p.qid.clone(),
            span: p.span(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphOptions;
    use crate::pipeline::{generate_synthetic, Layout};

    fn dataset() -> Dataset {
        let set = generate_synthetic(4, 3, Layout::Mixed);
        Dataset::from_records(&set.pages, &set.qa, GraphOptions::default()).unwrap()
    }

    fn one_hot(n: usize, at: usize) -> NodeDistribution {
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        NodeDistribution { probs }
    }

    #[test]
    fn oracle_node_gives_gold() {
        let ds = dataset();
        let qa = QaParams::default();
        for ex in &ds.examples {
            let page = ds.page(ex);
            let dist = one_hot(page.doc.tree.len(), ex.gold_node);
            let p = answer_from_distribution(ex, page, &dist, &qa).unwrap();
            assert_eq!(p.span(), ex.gold_span, "{}", ex.qid);
            assert_eq!(p.text, ex.answer_text);
            assert!(!p.fallback_used);
        }
    }

    #[test]
    fn batch_is_total_and_ordered() {
        let ds = dataset();
        let cfg = EncoderConfig {
            dim: 24,
            layers: 1,
            buckets: 64,
            ..EncoderConfig::default()
        };
        let params = TieParams::init(&cfg);
        let qa = QaParams::default();
        let serial = run_batch(&ds, &params, &qa, &cfg, 1);
        let parallel = run_batch(&ds, &params, &qa, &cfg, 4);
        assert_eq!(serial.len(), ds.examples.len());
        assert_eq!(serial, parallel);
        for (r, ex) in serial.iter().zip(&ds.examples) {
            assert_eq!(r.qid(), ex.qid);
            let p = r.prediction().unwrap();
            let node_span = ds.page(ex).doc.tree.node_token_span(p.node_id).unwrap();
            assert!(p.fallback_used || node_span.contains(&p.span()));
        }
        // a page too long for the model fails its examples, not the batch
        let small = EncoderConfig {
            max_tokens: 4,
            ..cfg.clone()
        };
        let failed = run_batch(&ds, &params, &qa, &small, 2);
        assert_eq!(failed.len(), ds.examples.len());
        assert!(failed.iter().all(|r| matches!(r, PredictionRecord::Failed(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            PredictionRecord::Ok(Prediction {
                qid: "q1".into(),
                node_id: 3,
                node_prob: 0.25,
                token_start: 4,
                token_end: 5,
                text: "a b".into(),
                fallback_used: false,
                fallback_reason: None,
            }),
            PredictionRecord::Failed(FailedExample {
                qid: "q2".into(),
                error: "boom".into(),
            }),
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"qid":"q1","node_id":3,"node_prob":0.25,"token_start":4,"token_end":5,"text":"a b","fallback_used":false}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), records);
    }
}
