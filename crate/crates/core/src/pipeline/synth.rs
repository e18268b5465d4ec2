use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{AnswerRecord, PageRecord, PagesFile, QaFile, QaRecord};
use crate::graph::{build_npr, BBox, RelationGraph, DEFAULT_GAMMA};
use crate::html_dom::{Document, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Table,
    Kv,
    Compare,
    /// Table, kv and compare pages in turn.
    Mixed,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Table => "table",
            Layout::Kv => "kv",
            Layout::Compare => "compare",
            Layout::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Layout::Table),
            "kv" => Ok(Layout::Kv),
            "compare" => Ok(Layout::Compare),
            "mixed" => Ok(Layout::Mixed),
            other => Err(format!("unknown layout `{other}` (table, kv, compare, mixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub pages: PagesFile,
    pub qa: QaFile,
}

const SYLLABLES: &[&str] = &[
    "kor", "van", "mel", "dri", "sta", "lun", "pex", "ori", "tal", "bry", "zen", "qua", "fos", "nim", "rel",
    "dax", "vom", "tur", "sel", "gar",
];

const ATTRIBUTES: &[&str] = &[
    "price", "weight", "color", "speed", "height", "width", "capacity", "rating", "voltage", "range",
    "torque", "length", "depth", "power",
];

const COLORS: &[&str] = &[
    "crimson", "teal", "amber", "ivory", "olive", "navy", "coral", "slate", "mauve", "jade",
];

/// Question words that never occur on generated pages.
const QUESTION_ONLY: &[&str] = &["what", "is", "the", "of"];

const QUESTIONS_PER_PAGE: usize = 3;

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn entity_names(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut names = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = SYLLABLES.choose(rng).unwrap();
        let b = SYLLABLES.choose(rng).unwrap();
        let name = capitalize(&format!("{a}{b}"));
        if names.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn attributes(rng: &mut ChaCha8Rng, count: usize) -> Vec<&'static str> {
    ATTRIBUTES.choose_multiple(rng, count).copied().collect()
}

fn value(rng: &mut ChaCha8Rng, attr: &str) -> String {
    if attr == "color" {
        COLORS.choose(rng).unwrap().to_string()
    } else {
        rng.gen_range(10..1000).to_string()
    }
}

/// Emits HTML while numbering elements in pre-order and recording boxes.
struct PageBuilder {
    html: String,
    boxes: BTreeMap<NodeId, BBox>,
    tags: Vec<&'static str>,
    stack: Vec<&'static str>,
}

impl PageBuilder {
    fn new() -> Self {
        PageBuilder {
            html: String::new(),
            boxes: BTreeMap::new(),
            tags: Vec::new(),
            stack: Vec::new(),
        }
    }

    fn open(&mut self, tag: &'static str, bbox: BBox) -> NodeId {
        let id = self.tags.len();
        self.tags.push(tag);
        self.boxes.insert(id, bbox);
        self.stack.push(tag);
        self.html.push('<');
        self.html.push_str(tag);
        self.html.push('>');
        id
    }

    fn text(&mut self, text: &str) {
        self.html.push_str(text);
    }

    fn close(&mut self) {
        let tag = self.stack.pop().expect("balanced builder");
        self.html.push_str("</");
        self.html.push_str(tag);
        self.html.push('>');
    }

    fn leaf(&mut self, tag: &'static str, text: &str, bbox: BBox) -> NodeId {
        let id = self.open(tag, bbox);
        self.text(text);
        self.close();
        id
    }
}

struct Question {
    text: String,
    gold: NodeId,
    /// Node that must be reachable from `gold` along UP edges.
    up_anchor: Option<NodeId>,
}

struct BuiltPage {
    builder: PageBuilder,
    questions: Vec<Question>,
}

fn question(attr: &str, entity: &str) -> String {
    format!("What is the {attr} of {entity}?")
}

fn pick_pairs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    all.shuffle(rng);
    all.truncate(QUESTIONS_PER_PAGE);
    all
}

fn table_page(rng: &mut ChaCha8Rng) -> BuiltPage {
    let rows = rng.gen_range(3..=5);
    let cols = rng.gen_range(3..=4);
    let entities = entity_names(rng, rows);
    let attrs = attributes(rng, cols);
    let width = (cols + 1) as f64 * 100.0;
    let height = (rows + 1) as f64 * 30.0;

    let mut b = PageBuilder::new();
    b.open("html", BBox::new(0.0, 0.0, width, height));
    b.open("table", BBox::new(0.0, 0.0, width, height));
    b.open("tr", BBox::new(0.0, 0.0, width, 30.0));
    let cell = |c: usize, r: usize| BBox::new(c as f64 * 100.0, r as f64 * 30.0, 100.0, 30.0);
    b.leaf("th", "Model", cell(0, 0));
    let mut headers = Vec::with_capacity(cols);
    for (c, attr) in attrs.iter().enumerate() {
        headers.push(b.leaf("th", &capitalize(attr), cell(c + 1, 0)));
    }
    b.close();
    let mut cells = vec![vec![0; cols]; rows];
    for (r, entity) in entities.iter().enumerate() {
        b.open("tr", BBox::new(0.0, (r + 1) as f64 * 30.0, width, 30.0));
        b.leaf("td", entity, cell(0, r + 1));
        for (c, attr) in attrs.iter().enumerate() {
            let v = value(rng, attr);
            cells[r][c] = b.leaf("td", &v, cell(c + 1, r + 1));
        }
        b.close();
    }
    b.close();
    b.close();

    let questions = pick_pairs(rng, rows, cols)
        .into_iter()
        .map(|(r, c)| Question {
            text: question(attrs[c], &entities[r]),
            gold: cells[r][c],
            up_anchor: Some(headers[c]),
        })
        .collect();
    BuiltPage {
        builder: b,
        questions,
    }
}

fn kv_page(rng: &mut ChaCha8Rng) -> BuiltPage {
    let lines = rng.gen_range(4..=6);
    let entity = entity_names(rng, 1).remove(0);
    let attrs = attributes(rng, lines);
    let height = (lines + 1) as f64 * 24.0;

    let mut b = PageBuilder::new();
    b.open("html", BBox::new(0.0, 0.0, 250.0, height));
    let heading = b.leaf("h1", &entity, BBox::new(0.0, 0.0, 250.0, 20.0));
    let mut values = Vec::with_capacity(lines);
    for (i, attr) in attrs.iter().enumerate() {
        let y = (i + 1) as f64 * 24.0;
        b.open("div", BBox::new(0.0, y, 250.0, 20.0));
        b.leaf(
            "span",
            &format!("{}:", capitalize(attr)),
            BBox::new(0.0, y, 80.0, 20.0),
        );
        let v = value(rng, attr);
        values.push(b.leaf("span", &v, BBox::new(100.0, y, 150.0, 20.0)));
        b.close();
    }
    b.close();

    let questions = pick_pairs(rng, 1, lines)
        .into_iter()
        .map(|(_, i)| Question {
            text: question(attrs[i], &entity),
            gold: values[i],
            up_anchor: Some(heading),
        })
        .collect();
    BuiltPage {
        builder: b,
        questions,
    }
}

fn compare_page(rng: &mut ChaCha8Rng) -> BuiltPage {
    let blocks = rng.gen_range(2..=3);
    let lines = rng.gen_range(3..=4);
    let entities = entity_names(rng, blocks);
    let attrs = attributes(rng, lines);
    let height = 30.0 + lines as f64 * 24.0;

    let mut b = PageBuilder::new();
    b.open("html", BBox::new(0.0, 0.0, blocks as f64 * 220.0, height));
    let mut headings = Vec::with_capacity(blocks);
    let mut values = vec![vec![0; lines]; blocks];
    for (e, entity) in entities.iter().enumerate() {
        let x = e as f64 * 220.0;
        b.open("div", BBox::new(x, 0.0, 200.0, height));
        headings.push(b.leaf("h3", entity, BBox::new(x, 0.0, 200.0, 24.0)));
        for (j, attr) in attrs.iter().enumerate() {
            let y = 30.0 + j as f64 * 24.0;
            b.open("p", BBox::new(x, y, 200.0, 20.0));
            b.leaf(
                "b",
                &format!("{}:", capitalize(attr)),
                BBox::new(x, y, 80.0, 20.0),
            );
            let v = value(rng, attr);
            values[e][j] = b.leaf("span", &v, BBox::new(x + 90.0, y, 100.0, 20.0));
            b.close();
        }
        b.close();
    }
    b.close();

    let questions = pick_pairs(rng, blocks, lines)
        .into_iter()
        .map(|(e, j)| Question {
            text: question(attrs[j], &entities[e]),
            gold: values[e][j],
            up_anchor: Some(headings[e]),
        })
        .collect();
    BuiltPage {
        builder: b,
        questions,
    }
}

fn reaches(graph: &RelationGraph, from: NodeId, to: NodeId) -> bool {
    let mut seen = vec![false; graph.n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(i) = queue.pop_front() {
        if i == to {
            return true;
        }
        for &(_, j) in graph.edges.range((i, 0)..(i + 1, 0)) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    false
}

/// Deterministic synthetic pages and questions with known gold nodes and
/// spans.
///
/// # Panics
///
/// Panics if a generated page fails its own consistency checks, which
/// would be a bug in the generator.
pub fn generate_synthetic(seed: u64, n_pages: usize, layout: Layout) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pages = Vec::with_capacity(n_pages);
    let mut examples = Vec::new();
    for i in 0..n_pages {
        let kind = match layout {
            Layout::Mixed => [Layout::Table, Layout::Kv, Layout::Compare][i % 3],
            other => other,
        };
        let built = match kind {
            Layout::Table => table_page(&mut rng),
            Layout::Kv => kv_page(&mut rng),
            _ => compare_page(&mut rng),
        };
        let page_id = format!("p{i:03}");
        let doc = Document::parse(&built.builder.html).expect("generated html parses");
        check_page(&doc, &built);
        let npr = build_npr(&doc.tree, &doc.tokens, &built.builder.boxes, DEFAULT_GAMMA)
            .expect("generated boxes are valid");

        for (q, question) in built.questions.iter().enumerate() {
            let node = &doc.tree.nodes[question.gold];
            let (start, end) = (node.open_token + 1, node.close_token - 1);
            let span = crate::html_dom::TokenSpan::new(start, end);
            assert_eq!(
                doc.tree.resolve_answer_node(span).unwrap(),
                question.gold,
                "gold span must resolve to the gold node"
            );
            if let Some(anchor) = question.up_anchor {
                assert!(
                    reaches(&npr.up, question.gold, anchor),
                    "gold must reach its anchor going up"
                );
            }
            examples.push(QaRecord {
                qid: format!("{page_id}-q{q}"),
                page_id: page_id.clone(),
                question: question.text.clone(),
                answer: AnswerRecord {
                    token_start: Some(start),
                    token_end: Some(end),
                    text: doc.tokens.span_text(span),
                    ..AnswerRecord::default()
                },
                group: Some(kind.name().to_string()),
            });
        }
        pages.push(PageRecord {
            page_id,
            html: built.builder.html,
            boxes: built
                .builder
                .boxes
                .into_iter()
                .map(|(id, b)| (id.to_string(), b))
                .collect(),
        });
    }
    SyntheticSet {
        pages: PagesFile { pages },
        qa: QaFile { examples },
    }
}

fn check_page(doc: &Document, built: &BuiltPage) {
    let tags: Vec<&str> = doc.tree.nodes.iter().map(|n| n.tag_name.as_str()).collect();
    assert_eq!(tags, built.builder.tags, "pre-order ids must match the builder");
    for w in doc.tokens.words() {
        assert!(
            !QUESTION_ONLY.contains(&w.to_lowercase().as_str()),
            "page word `{w}` collides with question wording"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate_synthetic(7, 6, Layout::Mixed);
        let b = generate_synthetic(7, 6, Layout::Mixed);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_synthetic(8, 6, Layout::Mixed);
        assert_ne!(a, c);
    }

    #[test]
    fn every_layout_yields_questions() {
        for layout in [Layout::Table, Layout::Kv, Layout::Compare] {
            let set = generate_synthetic(1, 4, layout);
            assert_eq!(set.pages.pages.len(), 4);
            assert_eq!(set.qa.examples.len(), 4 * QUESTIONS_PER_PAGE);
            assert!(set
                .qa
                .examples
                .iter()
                .all(|e| e.group.as_deref() == Some(layout.name())));
        }
    }

    #[test]
    fn table_header_row_and_boxes() {
        let set = generate_synthetic(3, 1, Layout::Table);
        let page = &set.pages.pages[0];
        assert!(page.html.starts_with("<html><table><tr><th>Model</th>"));
        // html, table, first tr
        assert_eq!(page.boxes["0"], page.boxes["1"]);
        assert_eq!(page.boxes["3"], BBox::new(0.0, 0.0, 100.0, 30.0));
    }

    #[test]
    fn layout_names_round_trip() {
        for l in [Layout::Table, Layout::Kv, Layout::Compare, Layout::Mixed] {
            assert_eq!(l.name().parse::<Layout>().unwrap(), l);
        }
        assert!("grid".parse::<Layout>().is_err());
    }
}
