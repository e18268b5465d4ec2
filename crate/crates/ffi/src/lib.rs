//! C interface to the reading comprehension pipeline.
//!
//! Models and documents are opaque handles created and destroyed through
//! this interface. Every fallible call returns a [`TieStatus`] and leaves
//! a message for [`tie_last_error`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tie_core::encoder::{default_assignment, forward, locate_node, EncoderConfig, TieParams};
use tie_core::graph::{build_bundle, BBox, GraphBundle};
use tie_core::html_dom::{tokenize, Document, NodeId};
use tie_core::pipeline::{load_params, load_qa_params, save_params, PipelineError};
use tie_core::span_qa::{refine, toy_span_score, QaParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    Format = 5,
    Model = 6,
    InvalidArgument = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A trained or freshly initialized node locator with its span scorer.
pub struct TieModel {
    params: TieParams,
    config: EncoderConfig,
    qa: QaParams,
}

/// A parsed page with its node boxes.
pub struct TieDocument {
    doc: Document,
    boxes: BTreeMap<NodeId, BBox>,
}

/// Result of [`tie_answer`]. `text` is owned by the caller and released
/// with [`tie_answer_free_text`].
#[repr(C)]
#[derive(Debug)]
pub struct TieAnswer {
    pub node_id: usize,
    pub node_prob: f64,
    /// Inclusive token range of the answer.
    pub token_start: usize,
    pub token_end: usize,
    /// The answer did not come from the top node.
    pub fallback_used: bool,
    pub text: *mut c_char,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(TieStatus, String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::Io { .. } => TieStatus::Io,
            PipelineError::Model(_) => TieStatus::Model,
            PipelineError::Page { .. } | PipelineError::Graph { .. } => TieStatus::Parse,
            _ => TieStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: TieStatus, msg: impl std::fmt::Display) -> Result<T, Failure> {
    Err(Failure(status, msg.to_string()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TieStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TieStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TieStatus::Panic
        }
    }
}

unsafe fn text_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(TieStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|e| fail(TieStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(TieStatus::NullArgument, format!("{name} is null")), Ok)
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller passes either null or a valid, writable pointer.
    unsafe { p.as_mut() }.map_or_else(|| fail(TieStatus::NullArgument, format!("{name} is null")), Ok)
}

/// Failure message of the most recent fallible call on this thread; empty
/// after a success. The pointer stays valid until the next call on the
/// same thread.
#[no_mangle]
pub extern "C" fn tie_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tie_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Model with seeded random parameters, the default head assignment and
/// default training settings.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn tie_model_new(
    dim: usize,
    heads: usize,
    layers: usize,
    seed: u64,
    out: *mut *mut TieModel,
) -> TieStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let config = EncoderConfig {
            dim,
            heads,
            layers,
            assignment: default_assignment(heads),
            seed,
            ..EncoderConfig::default()
        };
        if let Err(e) = config.validate() {
            return fail(TieStatus::InvalidArgument, e);
        }
        let model = TieModel {
            params: TieParams::init(&config),
            qa: QaParams::new(config.buckets),
            config,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Load a parameter file and its configuration sidecar. `qa_path` may be
/// null for the untrained span scorer.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tie_model_load(
    path: *const c_char,
    qa_path: *const c_char,
    out: *mut *mut TieModel,
) -> TieStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = text_arg(path, "path")?;
        let (params, config) = load_params(Path::new(path))?;
        let qa = if qa_path.is_null() {
            QaParams::new(config.buckets)
        } else {
            load_qa_params(Path::new(text_arg(qa_path, "qa_path")?))?
        };
        *out = Box::into_raw(Box::new(TieModel { params, config, qa }));
        Ok(())
    })
}

/// Write the parameters to `path` and the configuration to `path.json`.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tie_model_save(model: *const TieModel, path: *const c_char) -> TieStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let path = text_arg(path, "path")?;
        save_params(Path::new(path), &model.params, &model.config)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tie_model_free(model: *mut TieModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parse a page. `boxes_json` may be null, or a JSON object mapping
/// pre-order node ids to `[x, y, w, h]`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tie_document_parse(
    html: *const c_char,
    boxes_json: *const c_char,
    out: *mut *mut TieDocument,
) -> TieStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let html = text_arg(html, "html")?;
        let doc = Document::parse(html).or_else(|e| fail(TieStatus::Parse, e))?;
        let mut boxes = BTreeMap::new();
        if !boxes_json.is_null() {
            let raw: BTreeMap<String, BBox> = serde_json::from_str(text_arg(boxes_json, "boxes_json")?)
                .or_else(|e| fail(TieStatus::Format, format!("boxes_json: {e}")))?;
            for (key, b) in raw {
                let id: NodeId = key
                    .trim()
                    .parse()
                    .or_else(|_| fail(TieStatus::Format, format!("box key `{key}` is not a node id")))?;
                if id >= doc.tree.len() {
                    return fail(
                        TieStatus::InvalidArgument,
                        format!("box key {id} is out of range for {} nodes", doc.tree.len()),
                    );
                }
                boxes.insert(id, b);
            }
        }
        *out = Box::into_raw(Box::new(TieDocument { doc, boxes }));
        Ok(())
    })
}

/// Number of DOM nodes, or 0 for a null handle.
///
/// # Safety
/// `doc` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tie_document_node_count(doc: *const TieDocument) -> usize {
    doc.as_ref().map_or(0, |d| d.doc.tree.len())
}

/// Number of tokens, or 0 for a null handle.
///
/// # Safety
/// `doc` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tie_document_token_count(doc: *const TieDocument) -> usize {
    doc.as_ref().map_or(0, |d| d.doc.tokens.len())
}

/// # Safety
/// `doc` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tie_document_free(doc: *mut TieDocument) {
    if !doc.is_null() {
        drop(Box::from_raw(doc));
    }
}

fn graphs(model: &TieModel, doc: &TieDocument) -> Result<GraphBundle, Failure> {
    build_bundle(&doc.doc.tree, &doc.doc.tokens, &doc.boxes, model.config.graph)
        .or_else(|e| fail(TieStatus::Parse, e))
}

/// Answer-node probabilities. When `capacity` is smaller than the node
/// count nothing is written, `count` still receives the node count and
/// the call returns `TIE_STATUS_BUFFER_TOO_SMALL`.
///
/// # Safety
/// Handles must be live; `question` NUL-terminated; `probs` valid for
/// `capacity` doubles (or null when `capacity` is 0); `count` writable.
#[no_mangle]
pub unsafe extern "C" fn tie_node_probabilities(
    model: *const TieModel,
    doc: *const TieDocument,
    question: *const c_char,
    probs: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> TieStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let doc = handle(doc, "doc")?;
        let count = out_arg(count, "count")?;
        let q = tokenize(text_arg(question, "question")?).or_else(|e| fail(TieStatus::Parse, e))?;
        let bundle = graphs(model, doc)?;
        let dist = forward(
            &q,
            &doc.doc.tokens,
            &doc.doc.tree,
            &bundle,
            &model.params,
            &model.config,
        )
        .or_else(|e| fail(TieStatus::Model, e))?;
        *count = dist.len();
        if capacity < dist.len() {
            return fail(
                TieStatus::BufferTooSmall,
                format!("{} nodes need a larger buffer than {capacity}", dist.len()),
            );
        }
        if probs.is_null() {
            return fail(TieStatus::NullArgument, "probs is null");
        }
        std::slice::from_raw_parts_mut(probs, dist.len()).copy_from_slice(&dist.probs);
        Ok(())
    })
}

/// Locate the answer node, then the answer span inside it.
///
/// # Safety
/// Handles must be live; `question` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tie_answer(
    model: *const TieModel,
    doc: *const TieDocument,
    question: *const c_char,
    out: *mut TieAnswer,
) -> TieStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = TieAnswer {
            node_id: 0,
            node_prob: 0.0,
            token_start: 0,
            token_end: 0,
            fallback_used: false,
            text: ptr::null_mut(),
        };
        let model = handle(model, "model")?;
        let doc = handle(doc, "doc")?;
        let q = tokenize(text_arg(question, "question")?).or_else(|e| fail(TieStatus::Parse, e))?;
        let bundle = graphs(model, doc)?;
        let (tokens, tree) = (&doc.doc.tokens, &doc.doc.tree);
        let dist = forward(&q, tokens, tree, &bundle, &model.params, &model.config)
            .or_else(|e| fail(TieStatus::Model, e))?;
        let scores = toy_span_score(&q, tokens, &model.qa).or_else(|e| fail(TieStatus::Model, e))?;
        let refined = refine(&scores, tokens, tree, locate_node(&dist), Some(&dist))
            .or_else(|e| fail(TieStatus::Model, e))?;
        let text = CString::new(refined.text.replace('\0', " ")).unwrap_or_default();
        *out = TieAnswer {
            node_id: refined.node,
            node_prob: dist.probs[refined.node],
            token_start: refined.span.start,
            token_end: refined.span.end,
            fallback_used: refined.fallback.is_some(),
            text: text.into_raw(),
        };
        Ok(())
    })
}

/// Release the text of an answer and reset it to null.
///
/// # Safety
/// `answer` must be null or point to an answer filled by [`tie_answer`].
#[no_mangle]
pub unsafe extern "C" fn tie_answer_free_text(answer: *mut TieAnswer) {
    if let Some(a) = answer.as_mut() {
        if !a.text.is_null() {
            drop(CString::from_raw(a.text));
            a.text = ptr::null_mut();
        }
    }
}
