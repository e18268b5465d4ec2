//! Relation graphs over DOM nodes.
//!
//! Two families: the DOM relation (densified, or the original parent/child
//! form) and the four directional node-position relations `Up`, `Down`,
//! `Left`, `Right` derived from rendered bounding boxes. Coordinates follow
//! the browser convention: origin top-left, `y` grows downward. An `Up`
//! edge `(i, j)` says node `j` sits at or above node `i` with enough
//! horizontal overlap; `Left` is the same on the other axis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::html_dom::{DomTree, NodeId, TokenSequence};

pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} has a negative box dimension (w = {w}, h = {h})")]
    NegativeBoxDimension { node: NodeId, w: f64, h: f64 },
    #[error("node {node} has a non-finite box coordinate")]
    NonFiniteBox { node: NodeId },
    #[error("graph size mismatch: {slot} has {found} nodes, expected {expected}")]
    SizeMismatch {
        slot: RelationKind,
        expected: usize,
        found: usize,
    },
    #[error("graph of kind {found} placed in the {slot} slot")]
    KindMismatch { slot: RelationKind, found: RelationKind },
    #[error("gamma must lie in [0, 1], got {0}")]
    InvalidGamma(f64),
}

/// Upper-left corner plus size, in CSS pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Same box with the axes exchanged.
    fn transposed(&self) -> BBox {
        BBox::new(self.y, self.x, self.h, self.w)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    #[serde(rename = "dom")]
    DomDense,
    Up,
    Down,
    Left,
    Right,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::DomDense,
        RelationKind::Up,
        RelationKind::Down,
        RelationKind::Left,
        RelationKind::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::DomDense => "dom",
            RelationKind::Up => "up",
            RelationKind::Down => "down",
            RelationKind::Left => "left",
            RelationKind::Right => "right",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_npr(self) -> bool {
        self != RelationKind::DomDense
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, RelationKind::Up | RelationKind::Down)
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, RelationKind::Left | RelationKind::Right)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dom" | "domdense" => Ok(RelationKind::DomDense),
            "up" => Ok(RelationKind::Up),
            "down" => Ok(RelationKind::Down),
            "left" => Ok(RelationKind::Left),
            "right" => Ok(RelationKind::Right),
            other => Err(format!("unknown relation kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationGraph {
    pub kind: RelationKind,
    pub n: usize,
    /// Ordered pairs, kept sorted for deterministic output.
    pub edges: BTreeSet<(usize, usize)>,
}

impl RelationGraph {
    pub fn empty(kind: RelationKind, n: usize) -> Self {
        RelationGraph {
            kind,
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges with every pair reversed.
    pub fn transpose(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|&(i, j)| (j, i)).collect()
    }

    /// Number of edges touching `node` in either direction.
    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, j)| i == node || j == node)
            .count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serializes")
    }
}

/// Self-loops plus every ancestor/descendant pair in both directions.
pub fn densify_dom(tree: &DomTree) -> RelationGraph {
    let mut graph = RelationGraph::empty(RelationKind::DomDense, tree.len());
    for node in &tree.nodes {
        graph.edges.insert((node.id, node.id));
        let mut cur = node.parent;
        while let Some(anc) = cur {
            graph.edges.insert((anc, node.id));
            graph.edges.insert((node.id, anc));
            cur = tree.nodes[anc].parent;
        }
    }
    graph
}

/// Parent/child pairs in both directions, no self-loops.
pub fn sparse_dom(tree: &DomTree) -> RelationGraph {
    let mut graph = RelationGraph::empty(RelationKind::DomDense, tree.len());
    for node in &tree.nodes {
        if let Some(p) = node.parent {
            graph.edges.insert((p, node.id));
            graph.edges.insert((node.id, p));
        }
    }
    graph
}

/// Overlap along x of at least `gamma` times the narrower width, and `bj`
/// not strictly below `bi`.
pub fn npr_edge_up(bi: &BBox, bj: &BBox, gamma: f64) -> bool {
    let overlap = (bi.x + bi.w).min(bj.x + bj.w) - bi.x.max(bj.x);
    overlap >= gamma * bi.w.min(bj.w) && (bi.y >= bj.y || bi.y + bi.h >= bj.y + bj.h)
}

pub fn npr_edge_down(bi: &BBox, bj: &BBox, gamma: f64) -> bool {
    npr_edge_up(bj, bi, gamma)
}

pub fn npr_edge_left(bi: &BBox, bj: &BBox, gamma: f64) -> bool {
    npr_edge_up(&bi.transposed(), &bj.transposed(), gamma)
}

pub fn npr_edge_right(bi: &BBox, bj: &BBox, gamma: f64) -> bool {
    npr_edge_left(bj, bi, gamma)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NprGraphs {
    pub up: RelationGraph,
    pub down: RelationGraph,
    pub left: RelationGraph,
    pub right: RelationGraph,
}

/// Nodes that take part in position relations: a box and at least one word
/// among the direct contents.
pub fn textful_nodes(tree: &DomTree, tokens: &TokenSequence, boxes: &BTreeMap<NodeId, BBox>) -> Vec<bool> {
    tree.nodes
        .iter()
        .map(|n| boxes.contains_key(&n.id) && tree.has_direct_words(tokens, n.id))
        .collect()
}

pub fn build_npr(
    tree: &DomTree,
    tokens: &TokenSequence,
    boxes: &BTreeMap<NodeId, BBox>,
    gamma: f64,
) -> Result<NprGraphs, GraphError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(GraphError::InvalidGamma(gamma));
    }
    for (&node, b) in boxes {
        if !b.is_finite() {
            return Err(GraphError::NonFiniteBox { node });
        }
        if b.w < 0.0 || b.h < 0.0 {
            return Err(GraphError::NegativeBoxDimension { node, w: b.w, h: b.h });
        }
    }

    let n = tree.len();
    let textful = textful_nodes(tree, tokens, boxes);
    let members: Vec<(usize, BBox)> = (0..n).filter(|&i| textful[i]).map(|i| (i, boxes[&i])).collect();

    let mut up = RelationGraph::empty(RelationKind::Up, n);
    let mut left = RelationGraph::empty(RelationKind::Left, n);
    for &(i, bi) in &members {
        for &(j, bj) in &members {
            if i == j {
                continue;
            }
            if npr_edge_up(&bi, &bj, gamma) {
                up.edges.insert((i, j));
            }
            if npr_edge_left(&bi, &bj, gamma) {
                left.edges.insert((i, j));
            }
        }
    }
    let down = RelationGraph {
        kind: RelationKind::Down,
        n,
        edges: up.transpose(),
    };
    let right = RelationGraph {
        kind: RelationKind::Right,
        n,
        edges: left.transpose(),
    };
    Ok(NprGraphs {
        up,
        down,
        left,
        right,
    })
}

/// The DOM relation graph and the four position graphs of one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub dom: RelationGraph,
    pub up: RelationGraph,
    pub down: RelationGraph,
    pub left: RelationGraph,
    pub right: RelationGraph,
    pub gamma: f64,
}

impl GraphBundle {
    pub fn n(&self) -> usize {
        self.dom.n
    }

    pub fn get(&self, kind: RelationKind) -> &RelationGraph {
        match kind {
            RelationKind::DomDense => &self.dom,
            RelationKind::Up => &self.up,
            RelationKind::Down => &self.down,
            RelationKind::Left => &self.left,
            RelationKind::Right => &self.right,
        }
    }

    pub fn graphs(&self) -> [&RelationGraph; 5] {
        [&self.dom, &self.up, &self.down, &self.left, &self.right]
    }
}

pub fn bundle(dom: RelationGraph, npr: NprGraphs, gamma: f64) -> Result<GraphBundle, GraphError> {
    let n = dom.n;
    let slots = [
        (RelationKind::DomDense, &dom),
        (RelationKind::Up, &npr.up),
        (RelationKind::Down, &npr.down),
        (RelationKind::Left, &npr.left),
        (RelationKind::Right, &npr.right),
    ];
    for (slot, g) in slots {
        if g.kind != slot {
            return Err(GraphError::KindMismatch { slot, found: g.kind });
        }
        if g.n != n {
            return Err(GraphError::SizeMismatch {
                slot,
                expected: n,
                found: g.n,
            });
        }
    }
    Ok(GraphBundle {
        dom,
        up: npr.up,
        down: npr.down,
        left: npr.left,
        right: npr.right,
        gamma,
    })
}

/// How to build the graphs of a page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub gamma: f64,
    /// Use parent/child DOM edges instead of the densified relation.
    pub sparse_dom: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            gamma: DEFAULT_GAMMA,
            sparse_dom: false,
        }
    }
}

pub fn build_bundle(
    tree: &DomTree,
    tokens: &TokenSequence,
    boxes: &BTreeMap<NodeId, BBox>,
    options: GraphOptions,
) -> Result<GraphBundle, GraphError> {
    let dom = if options.sparse_dom {
        sparse_dom(tree)
    } else {
        densify_dom(tree)
    };
    let npr = build_npr(tree, tokens, boxes, options.gamma)?;
    bundle(dom, npr, options.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::html_dom::Document;

    fn chain() -> Document {
        Document::parse("<html><a><b>x</b></a></html>").unwrap()
    }

    #[test]
    fn densify_single_node() {
        let d = Document::parse("<html>x</html>").unwrap();
        let g = densify_dom(&d.tree);
        assert_eq!(g.edges.into_iter().collect::<Vec<_>>(), vec![(0, 0)]);
    }

    #[test]
    fn densify_chain_is_complete() {
        let g = densify_dom(&chain().tree);
        assert_eq!(g.edge_count(), 9);
        for i in 0..3 {
            for j in 0..3 {
                assert!(g.contains(i, j));
            }
        }
    }

    #[test]
    fn sparse_chain() {
        let d = Document::parse("<html>x</html>").unwrap();
        assert!(sparse_dom(&d.tree).edges.is_empty());
        let g = sparse_dom(&chain().tree);
        let want: BTreeSet<_> = [(0, 1), (1, 0), (1, 2), (2, 1)].into_iter().collect();
        assert_eq!(g.edges, want);
    }

    #[test]
    fn up_edge_examples() {
        let same = BBox::new(3.0, 4.0, 10.0, 5.0);
        assert!(npr_edge_up(&same, &same, 0.5));
        let below = BBox::new(0.0, 100.0, 50.0, 10.0);
        let above = BBox::new(0.0, 0.0, 50.0, 10.0);
        assert!(npr_edge_up(&below, &above, 0.5));
        assert!(!npr_edge_up(&above, &below, 0.5));
        let far = BBox::new(200.0, 0.0, 50.0, 10.0);
        assert!(!npr_edge_up(&below, &far, 0.5));
    }

    #[test]
    fn mirrored_relations() {
        let a = BBox::new(0.0, 0.0, 100.0, 50.0);
        let b = BBox::new(100.0, 0.0, 100.0, 50.0);
        assert!(npr_edge_left(&b, &a, 0.5));
        assert!(!npr_edge_left(&a, &b, 0.5));
        assert!(npr_edge_right(&a, &b, 0.5));
        assert!(npr_edge_down(&a, &BBox::new(0.0, 50.0, 100.0, 50.0), 0.5));
    }

    fn grid() -> (Document, BTreeMap<NodeId, BBox>) {
        let d = Document::parse("<html><div>a</div><div>b</div><div>c</div><div>d</div></html>").unwrap();
        let boxes = [
            (1, BBox::new(0.0, 0.0, 100.0, 50.0)),
            (2, BBox::new(100.0, 0.0, 100.0, 50.0)),
            (3, BBox::new(0.0, 50.0, 100.0, 50.0)),
            (4, BBox::new(100.0, 50.0, 100.0, 50.0)),
        ]
        .into_iter()
        .collect();
        (d, boxes)
    }

    #[test]
    fn grid_relations() {
        let (d, boxes) = grid();
        let g = build_npr(&d.tree, &d.tokens, &boxes, 0.5).unwrap();
        let up: Vec<_> = g.up.edges.iter().copied().collect();
        assert_eq!(up, vec![(3, 1), (4, 2)]);
        let left: Vec<_> = g.left.edges.iter().copied().collect();
        assert_eq!(left, vec![(2, 1), (4, 3)]);
        assert!(!g.up.contains(3, 2) && !g.up.contains(4, 1));
        assert_eq!(g.down.edges, g.up.transpose());
        assert_eq!(g.right.edges, g.left.transpose());
    }

    #[test]
    fn textless_and_boxless_nodes_are_isolated() {
        let (d, mut boxes) = grid();
        boxes.insert(0, BBox::new(0.0, 0.0, 200.0, 100.0));
        boxes.remove(&4);
        let g = build_npr(&d.tree, &d.tokens, &boxes, 0.5).unwrap();
        for r in [&g.up, &g.down, &g.left, &g.right] {
            assert_eq!(r.degree(0), 0);
            assert_eq!(r.degree(4), 0);
        }
    }

    #[test]
    fn no_textful_nodes_means_empty_graphs() {
        let d = Document::parse("<html><div></div><br></html>").unwrap();
        let boxes = (0..3).map(|i| (i, BBox::new(0.0, 0.0, 10.0, 10.0))).collect();
        let g = build_npr(&d.tree, &d.tokens, &boxes, 0.5).unwrap();
        assert!(g.up.edges.is_empty() && g.left.edges.is_empty());
    }

    #[test]
    fn negative_box_is_rejected() {
        let (d, mut boxes) = grid();
        boxes.insert(1, BBox::new(0.0, 0.0, -1.0, 5.0));
        assert!(matches!(
            build_npr(&d.tree, &d.tokens, &boxes, 0.5),
            Err(GraphError::NegativeBoxDimension { node: 1, .. })
        ));
    }

    #[test]
    fn bundle_validation() {
        let (d, boxes) = grid();
        let npr = build_npr(&d.tree, &d.tokens, &boxes, 0.5).unwrap();
        let ok = bundle(densify_dom(&d.tree), npr.clone(), 0.5).unwrap();
        assert_eq!(ok.n(), 5);

        let mut bad = npr.clone();
        bad.up.n = 4;
        assert!(matches!(
            bundle(densify_dom(&d.tree), bad, 0.5),
            Err(GraphError::SizeMismatch {
                slot: RelationKind::Up,
                expected: 5,
                found: 4
            })
        ));

        let mut bad = npr;
        bad.up = densify_dom(&d.tree);
        assert!(matches!(
            bundle(densify_dom(&d.tree), bad, 0.5),
            Err(GraphError::KindMismatch {
                slot: RelationKind::Up,
                ..
            })
        ));
    }

    #[test]
    fn json_shape() {
        let (d, boxes) = grid();
        let g = build_npr(&d.tree, &d.tokens, &boxes, 0.5).unwrap();
        let text = serde_json::to_string(&g.up).unwrap();
        assert_eq!(text, r#"{"kind":"up","n":5,"edges":[[3,1],[4,2]]}"#);
        let back: RelationGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g.up);
    }
}
