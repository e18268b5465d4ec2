#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use tie_core::encoder::{loss_and_grads, EncoderConfig, NodeExample, TieParams};
use tie_core::graph::{build_bundle, BBox, GraphBundle, GraphOptions};
use tie_core::html_dom::{tokenize, Document, TokenSequence, TokenSpan};
use tie_core::metrics::{GoldAnswer, PredictedAnswer};

pub const EPS: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero and are compared
/// absolutely.
pub const ZERO_FLOOR: f64 = 1e-8;

/// Instance that passes the strict check: default layout, `d = 24`,
/// `H = 12`, `L = 2`.
pub const PINNED_SCALE: f64 = 1.1;
pub const PINNED_SEED: u64 = 4;

/// A small key/value page: 8 nodes, labels left of values.
pub fn grad_page() -> (Document, GraphBundle) {
    let html = "<html><div><span>Color:</span><span>Red</span></div>\
                <div><span>Size:</span><span>Large</span></div><p>note</p></html>";
    let doc = Document::parse(html).unwrap();
    assert!(doc.tree.len() <= 8);
    let boxes: BTreeMap<usize, BBox> = [
        (0, BBox::new(0.0, 0.0, 300.0, 80.0)),
        (1, BBox::new(0.0, 0.0, 300.0, 20.0)),
        (2, BBox::new(0.0, 0.0, 80.0, 20.0)),
        (3, BBox::new(100.0, 0.0, 120.0, 20.0)),
        (4, BBox::new(0.0, 24.0, 300.0, 20.0)),
        (5, BBox::new(0.0, 24.0, 80.0, 20.0)),
        (6, BBox::new(100.0, 24.0, 120.0, 20.0)),
        (7, BBox::new(0.0, 50.0, 200.0, 20.0)),
    ]
    .into_iter()
    .collect();
    let bundle = build_bundle(&doc.tree, &doc.tokens, &boxes, GraphOptions::default()).unwrap();
    assert!(!bundle.up.edges.is_empty() && !bundle.left.edges.is_empty());
    (doc, bundle)
}

pub fn grad_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        dim: 24,
        heads: 12,
        layers: 2,
        buckets: 16,
        seed,
        ..EncoderConfig::default()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mismatch {
    pub array: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Mismatch {
    pub fn abs_diff(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub mismatches: Vec<Mismatch>,
}

/// Central differences over every scalar of a fresh `init_uniform(scale)`
/// model, compared elementwise with the analytic gradient.
pub fn finite_difference_check(cfg: &EncoderConfig, init_scale: f64) -> GradReport {
    let (doc, bundle) = grad_page();
    let q1: TokenSequence = tokenize("What is the size?").unwrap();
    let q2: TokenSequence = tokenize("Which color").unwrap();
    let batch = [
        NodeExample {
            question: &q1,
            page: &doc.tokens,
            tree: &doc.tree,
            bundle: &bundle,
            gold: 6,
        },
        NodeExample {
            question: &q2,
            page: &doc.tokens,
            tree: &doc.tree,
            bundle: &bundle,
            gold: 3,
        },
    ];
    let loss = |p: &TieParams| loss_and_grads(&batch, p, cfg).unwrap().0;
    let params = TieParams::init_uniform(cfg, init_scale);
    let (_, grads) = loss_and_grads(&batch, &params, cfg).unwrap();
    let analytic: Vec<Vec<f64>> = grads.arrays().iter().map(|a| a.to_vec()).collect();

    let mut report = GradReport::default();
    let mut probe = params.clone();
    for (array, values) in analytic.iter().enumerate() {
        for (index, &g) in values.iter().enumerate() {
            let orig = probe.arrays()[array][index];
            probe.arrays_mut()[array][index] = orig + EPS;
            let plus = loss(&probe);
            probe.arrays_mut()[array][index] = orig - EPS;
            let minus = loss(&probe);
            probe.arrays_mut()[array][index] = orig;
            let numeric = (plus - minus) / (2.0 * EPS);

            let scale = g.abs().max(numeric.abs());
            let ok = if scale < ZERO_FLOOR {
                (g - numeric).abs() < ZERO_FLOOR
            } else {
                let rel = (g - numeric).abs() / scale;
                report.worst_rel = report.worst_rel.max(rel);
                rel < REL_TOL
            };
            if !ok {
                report.mismatches.push(Mismatch {
                    array,
                    index,
                    analytic: g,
                    numeric,
                });
            }
            report.checked += 1;
        }
    }
    report
}

const TAGS: &[&str] = &["div", "p", "span", "td", "li", "b"];
const WORDS: &[&str] = &["alpha", "beta", "7", "x.", "(note)", "Gamma"];

/// Random nested HTML with at most `max_nodes` elements, ids assigned in
/// pre-order from the `<html>` root.
pub fn random_html(rng: &mut impl Rng, max_nodes: usize) -> (String, usize) {
    let n = rng.gen_range(1..=max_nodes);
    let mut children = vec![Vec::new(); n];
    for i in 1..n {
        children[rng.gen_range(0..i)].push(i);
    }
    let mut html = String::new();
    let mut count = 0;
    render(rng, &children, 0, &mut html, &mut count);
    (html, count)
}

fn push_words(rng: &mut impl Rng, html: &mut String) {
    for _ in 0..rng.gen_range(0..3) {
        html.push(' ');
        html.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
    }
    html.push(' ');
}

fn render(rng: &mut impl Rng, children: &[Vec<usize>], node: usize, html: &mut String, count: &mut usize) {
    *count += 1;
    if node != 0 && children[node].is_empty() && rng.gen_bool(0.15) {
        html.push_str("<br>");
        return;
    }
    let tag = if node == 0 {
        "html"
    } else {
        TAGS[rng.gen_range(0..TAGS.len())]
    };
    html.push_str(&format!("<{tag}>"));
    push_words(rng, html);
    for &c in &children[node] {
        render(rng, children, c, html, count);
        push_words(rng, html);
    }
    html.push_str(&format!("</{tag}>"));
}

/// A random page plus integer-aligned boxes for a random subset of nodes.
pub fn random_page(rng: &mut impl Rng, max_nodes: usize) -> (Document, BTreeMap<usize, BBox>) {
    let (html, count) = random_html(rng, max_nodes);
    let doc = Document::parse(&html).unwrap();
    assert_eq!(doc.tree.len(), count, "{html}");
    let mut boxes = BTreeMap::new();
    for id in 0..count {
        if rng.gen_bool(0.8) {
            let x = rng.gen_range(0..12) as f64 * 10.0;
            let y = rng.gen_range(0..12) as f64 * 10.0;
            let w = rng.gen_range(0..8) as f64 * 10.0;
            let h = rng.gen_range(0..4) as f64 * 10.0;
            boxes.insert(id, BBox::new(x, y, w, h));
        }
    }
    (doc, boxes)
}

/// Ancestor/descendant pairs plus self-loops, from token span containment.
pub fn dense_dom_oracle(doc: &Document) -> BTreeSet<(usize, usize)> {
    let nodes = &doc.tree.nodes;
    let mut out = BTreeSet::new();
    for a in nodes {
        for b in nodes {
            let inside = a.open_token <= b.open_token && b.close_token <= a.close_token;
            if a.id == b.id || inside {
                out.insert((a.id, b.id));
                out.insert((b.id, a.id));
            }
        }
    }
    out
}

/// The node owning each token: the containing node with the narrowest span.
pub fn token_owners(doc: &Document) -> Vec<usize> {
    (0..doc.tokens.len())
        .map(|t| {
            doc.tree
                .nodes
                .iter()
                .filter(|n| n.open_token <= t && t <= n.close_token)
                .min_by_key(|n| n.close_token - n.open_token)
                .map(|n| n.id)
                .unwrap()
        })
        .collect()
}

pub fn textful_oracle(doc: &Document, boxes: &BTreeMap<usize, BBox>) -> Vec<bool> {
    let owners = token_owners(doc);
    let mut has_word = vec![false; doc.tree.len()];
    for (t, &owner) in owners.iter().enumerate() {
        if doc.tokens.tokens[t].is_word() {
            has_word[owner] = true;
        }
    }
    (0..doc.tree.len())
        .map(|i| has_word[i] && boxes.contains_key(&i))
        .collect()
}

/// The four position relations written out directly from their conditions.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct NprOracle {
    pub up: BTreeSet<(usize, usize)>,
    pub down: BTreeSet<(usize, usize)>,
    pub left: BTreeSet<(usize, usize)>,
    pub right: BTreeSet<(usize, usize)>,
}

pub fn npr_oracle(doc: &Document, boxes: &BTreeMap<usize, BBox>, gamma: f64) -> NprOracle {
    let textful = textful_oracle(doc, boxes);
    let mut out = NprOracle::default();
    for (&i, a) in boxes {
        for (&j, b) in boxes {
            if i == j || !textful[i] || !textful[j] {
                continue;
            }
            let x_overlap = f64::min(a.x + a.w, b.x + b.w) - f64::max(a.x, b.x);
            let y_overlap = f64::min(a.y + a.h, b.y + b.h) - f64::max(a.y, b.y);
            let columns = x_overlap >= gamma * f64::min(a.w, b.w);
            let rows = y_overlap >= gamma * f64::min(a.h, b.h);
            if columns && (a.y >= b.y || a.y + a.h >= b.y + b.h) {
                out.up.insert((i, j));
            }
            if columns && (a.y <= b.y || a.y + a.h <= b.y + b.h) {
                out.down.insert((i, j));
            }
            if rows && (a.x >= b.x || a.x + a.w >= b.x + b.w) {
                out.left.insert((i, j));
            }
            if rows && (a.x <= b.x || a.x + a.w <= b.x + b.w) {
                out.right.insert((i, j));
            }
        }
    }
    out
}

/// Best `(i, j)` with `i <= j` inside the window by exhaustive search; ties
/// go to the smallest start, then the smallest end.
pub fn brute_force_span(start: &[f64], end: &[f64], window: TokenSpan) -> TokenSpan {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in window.start..=window.end {
        for j in i..=window.end {
            let v = start[i] + end[j];
            if best.is_none_or(|(b, _, _)| v > b) {
                best = Some((v, i, j));
            }
        }
    }
    let (_, i, j) = best.unwrap();
    TokenSpan::new(i, j)
}

/// Ten scored examples over one page, each value worked out by hand.
///
/// Tokens: 0 `<html>` 1 `<div>` 2 `<p>` 3 Front 4 Wheel 5 Drive 6 `</p>`
/// 7 `<p>` 8 Price 9 `:` 10 84 11 points 12 `</p>` 13 `</div>` 14 `<table>`
/// 15 `<tr>` 16 `<td>` 17 Red 18 `</td>` 19 `<td>` 20 red 21 car 22 `</td>`
/// 23 `</tr>` 24 `</table>` 25 `</html>`.
///
/// Root paths: p(2) {0,1,2}, p(3) {0,1,3}, tr {0,4,5}, td(6) {0,4,5,6},
/// td(7) {0,4,5,7}.
pub struct MetricsFixture {
    pub pages: std::collections::HashMap<String, Document>,
    pub predictions: Vec<PredictedAnswer>,
    pub gold: Vec<GoldAnswer>,
    /// `(em, f1, pos)` per gold example.
    pub expected: Vec<(f64, f64, f64)>,
}

pub const FIXTURE_HTML: &str = "<html><div><p>Front Wheel Drive</p><p>Price: 84 points</p></div>\
     <table><tr><td>Red</td><td>red car</td></tr></table></html>";

pub fn metrics_fixture() -> MetricsFixture {
    let doc = Document::parse(FIXTURE_HTML).unwrap();
    assert_eq!(doc.tokens.len(), 26);
    type Row = (Option<(usize, usize)>, (usize, usize), (f64, f64, f64));
    let rows: [Row; 10] = [
        // identical
        (Some((3, 5)), (3, 5), (1.0, 1.0, 100.0)),
        // P 1, R 2/3
        (Some((3, 4)), (3, 5), (0.0, 0.8, 100.0)),
        // P 1, R 1/2
        (Some((10, 10)), (10, 11), (0.0, 2.0 / 3.0, 100.0)),
        // `:` dropped, P 1/2, R 1
        (Some((8, 10)), (10, 10), (0.0, 2.0 / 3.0, 100.0)),
        // case folded; sibling cells share 3 of 5 path nodes
        (Some((17, 17)), (20, 20), (1.0, 1.0, 60.0)),
        // red red car vs red car: P 2/3, R 1; tr vs td path 3/4
        (Some((17, 21)), (20, 21), (0.0, 0.8, 75.0)),
        // disjoint words, paths share only the root of 6
        (Some((3, 3)), (21, 21), (0.0, 0.0, 100.0 / 6.0)),
        // whole page: 9 words, 3 shared; root path vs p path 1/3
        (Some((0, 25)), (3, 5), (0.0, 0.5, 100.0 / 3.0)),
        // tags only, no words; div vs p path 2/3
        (Some((6, 7)), (11, 11), (0.0, 0.0, 200.0 / 3.0)),
        // no prediction
        (None, (17, 17), (0.0, 0.0, 0.0)),
    ];
    let mut predictions = Vec::new();
    let mut gold = Vec::new();
    let mut expected = Vec::new();
    for (i, (pred, g, e)) in rows.into_iter().enumerate() {
        let qid = format!("q{i}");
        if let Some((s, t)) = pred {
            predictions.push(PredictedAnswer {
                qid: qid.clone(),
                span: TokenSpan::new(s, t),
            });
        }
        gold.push(GoldAnswer {
            qid,
            page_id: "p".into(),
            span: TokenSpan::new(g.0, g.1),
            group: Some(if i < 5 { "first" } else { "second" }.into()),
        });
        expected.push(e);
    }
    MetricsFixture {
        pages: [("p".to_string(), doc)].into_iter().collect(),
        predictions,
        gold,
        expected,
    }
}

/// Corpus EM, F1 and POS of [`metrics_fixture`]: 2 exact of 10, F1 sum
/// 163/30, POS sum 1955/3.
pub const FIXTURE_TOTALS: (f64, f64, f64) = (20.0, 163.0 / 3.0, 1955.0 / 30.0);
