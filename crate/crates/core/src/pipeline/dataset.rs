use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::graph::{build_bundle, BBox, GraphBundle, GraphOptions};
use crate::html_dom::{tokenize, Document, NodeId, TokenSequence, TokenSpan};
use crate::metrics::GoldAnswer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagesFile {
    pub pages: Vec<PageRecord>,
}

/// One page as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: String,
    /// Inline HTML, or a path relative to the pages file.
    pub html: String,
    /// Boxes keyed by pre-order node id.
    #[serde(default)]
    pub boxes: BTreeMap<String, BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaFile {
    pub examples: Vec<QaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qid: String,
    pub page_id: String,
    pub question: String,
    pub answer: AnswerRecord,
    /// Free-form key for grouped scores, such as the site type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Gold answer as either an inclusive token span or a byte range of the
/// page source.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_end: Option<usize>,
    #[serde(default)]
    pub text: String,
}

/// A parsed page with its graphs.
#[derive(Debug, Clone)]
pub struct Page {
    pub page_id: String,
    pub doc: Document,
    pub boxes: BTreeMap<NodeId, BBox>,
    pub bundle: GraphBundle,
}

#[derive(Debug, Clone)]
pub struct Example {
    pub qid: String,
    /// Index into [`Dataset::pages`].
    pub page: usize,
    pub question_text: String,
    pub question: TokenSequence,
    pub gold_span: TokenSpan,
    pub gold_node: NodeId,
    pub answer_text: String,
    pub group: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pages: Vec<Page>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn from_records(
        pages: &PagesFile,
        qa: &QaFile,
        options: GraphOptions,
    ) -> Result<Dataset, PipelineError> {
        load_records(pages, None, qa, None, options)
    }

    pub fn page(&self, example: &Example) -> &Page {
        &self.pages[example.page]
    }

    /// Documents keyed by page id, as the evaluator wants them.
    pub fn documents(&self) -> HashMap<String, Document> {
        self.pages
            .iter()
            .map(|p| (p.page_id.clone(), p.doc.clone()))
            .collect()
    }

    pub fn gold_answers(&self) -> Vec<GoldAnswer> {
        self.examples
            .iter()
            .map(|e| GoldAnswer {
                qid: e.qid.clone(),
                page_id: self.pages[e.page].page_id.clone(),
                span: e.gold_span,
                group: e.group.clone(),
            })
            .collect()
    }
}

struct Source<'a> {
    path: PathBuf,
    text: &'a str,
}

impl Source<'_> {
    /// Schema error pointing at the first line mentioning `needle`.
    fn error(&self, needle: &str, message: String) -> PipelineError {
        PipelineError::Schema {
            path: self.path.clone(),
            line: line_of(self.text, needle),
            message,
        }
    }
}

fn schema_error(
    src: Option<&Source<'_>>,
    default_path: &str,
    needle: &str,
    message: String,
) -> PipelineError {
    match src {
        Some(s) => s.error(needle, message),
        None => PipelineError::Schema {
            path: PathBuf::from(default_path),
            line: 0,
            message,
        },
    }
}

/// 1-based line of the first quoted occurrence of `needle`, or 0.
fn line_of(text: &str, needle: &str) -> usize {
    let quoted = format!("\"{needle}\"");
    text.find(&quoted)
        .map(|at| text[..at].matches('\n').count() + 1)
        .unwrap_or(0)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, String), PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let value = serde_json::from_str(&text).map_err(|e| PipelineError::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok((value, text))
}

/// Read, validate and parse a pages file and a QA file.
pub fn load_dataset(
    pages_path: &Path,
    qa_path: &Path,
    options: GraphOptions,
) -> Result<Dataset, PipelineError> {
    let (pages, pages_text): (PagesFile, _) = read_json(pages_path)?;
    let (qa, qa_text): (QaFile, _) = read_json(qa_path)?;
    let pages_src = Source {
        path: pages_path.to_path_buf(),
        text: &pages_text,
    };
    let qa_src = Source {
        path: qa_path.to_path_buf(),
        text: &qa_text,
    };
    load_records(&pages, Some(&pages_src), &qa, Some(&qa_src), options)
}

/// Read and parse a pages file without any questions.
pub fn load_pages(pages_path: &Path, options: GraphOptions) -> Result<Dataset, PipelineError> {
    let (pages, text): (PagesFile, _) = read_json(pages_path)?;
    let src = Source {
        path: pages_path.to_path_buf(),
        text: &text,
    };
    load_records(
        &pages,
        Some(&src),
        &QaFile { examples: Vec::new() },
        None,
        options,
    )
}

fn page_html(record: &PageRecord, src: Option<&Source<'_>>) -> Result<String, PipelineError> {
    let trimmed = record.html.trim_start();
    if trimmed.starts_with('<') || trimmed.is_empty() {
        return Ok(record.html.clone());
    }
    let base = src
        .and_then(|s| s.path.parent())
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let path = base.join(&record.html);
    if path.is_file() {
        debug!("page {}: reading {}", record.page_id, path.display());
        std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))
    } else {
        Ok(record.html.clone())
    }
}

fn load_records(
    pages: &PagesFile,
    pages_src: Option<&Source<'_>>,
    qa: &QaFile,
    qa_src: Option<&Source<'_>>,
    options: GraphOptions,
) -> Result<Dataset, PipelineError> {
    let mut index = HashMap::new();
    let mut loaded = Vec::with_capacity(pages.pages.len());
    for record in &pages.pages {
        if index.insert(record.page_id.clone(), loaded.len()).is_some() {
            return Err(schema_error(
                pages_src,
                "pages",
                &record.page_id,
                format!("duplicate page_id {}", record.page_id),
            ));
        }
        let html = page_html(record, pages_src)?;
        let doc = Document::parse(&html).map_err(|source| PipelineError::Page {
            page_id: record.page_id.clone(),
            source,
        })?;
        for w in &doc.tree.warnings {
            warn!("page {}: {}", record.page_id, w.message);
        }
        let mut boxes = BTreeMap::new();
        for (key, bbox) in &record.boxes {
            let id: NodeId = key.trim().parse().map_err(|_| {
                schema_error(
                    pages_src,
                    "pages",
                    key,
                    format!("page {}: box key `{key}` is not a node id", record.page_id),
                )
            })?;
            if id >= doc.tree.len() {
                return Err(PipelineError::BoxKeyOutOfRange {
                    page_id: record.page_id.clone(),
                    key: id,
                    nodes: doc.tree.len(),
                });
            }
            boxes.insert(id, *bbox);
        }
        let bundle =
            build_bundle(&doc.tree, &doc.tokens, &boxes, options).map_err(|source| PipelineError::Graph {
                page_id: record.page_id.clone(),
                source,
            })?;
        loaded.push(Page {
            page_id: record.page_id.clone(),
            doc,
            boxes,
            bundle,
        });
    }

    let mut qids = HashMap::new();
    let mut examples = Vec::with_capacity(qa.examples.len());
    for record in &qa.examples {
        let fail = |msg: String| schema_error(qa_src, "qa", &record.qid, format!("{}: {msg}", record.qid));
        if qids.insert(record.qid.clone(), ()).is_some() {
            return Err(fail("duplicate qid".into()));
        }
        let &page_idx = index
            .get(&record.page_id)
            .ok_or_else(|| PipelineError::DanglingPageRef {
                qid: record.qid.clone(),
                page_id: record.page_id.clone(),
            })?;
        let page = &loaded[page_idx];
        let a = &record.answer;
        let span = match (a.token_start, a.token_end, a.char_start, a.char_end) {
            (Some(s), Some(e), None, None) => {
                if s > e || e >= page.doc.tokens.len() {
                    return Err(fail(format!(
                        "token span {s}..={e} is outside a page of {} tokens",
                        page.doc.tokens.len()
                    )));
                }
                TokenSpan::new(s, e)
            }
            (None, None, Some(s), Some(e)) => page
                .doc
                .tokens
                .char_to_token_span(s, e)
                .map_err(|err| fail(err.to_string()))?,
            _ => {
                return Err(fail(
                    "answer needs exactly one of token_start/token_end or char_start/char_end".into(),
                ))
            }
        };
        let gold_node = page
            .doc
            .tree
            .resolve_answer_node(span)
            .map_err(|err| fail(err.to_string()))?;
        let question = tokenize(&record.question).map_err(|err| fail(err.to_string()))?;
        let extracted = page.doc.tokens.span_text(span);
        if !a.text.is_empty() && a.text.trim() != extracted {
            debug!(
                "{}: answer text `{}` vs span text `{extracted}`",
                record.qid, a.text
            );
        }
        examples.push(Example {
            qid: record.qid.clone(),
            page: page_idx,
            question_text: record.question.clone(),
            question,
            gold_span: span,
            gold_node,
            answer_text: if a.text.is_empty() {
                extracted
            } else {
                a.text.clone()
            },
            group: record.group.clone(),
        });
    }
    Ok(Dataset {
        pages: loaded,
        examples,
    })
}
