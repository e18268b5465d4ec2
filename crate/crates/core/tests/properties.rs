mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tie_core::graph::{build_npr, densify_dom, sparse_dom, DEFAULT_GAMMA};
use tie_core::html_dom::{tokenize, Document, TokenKind, TokenSpan};
use tie_core::metrics::{exact_match, pos_score, token_f1};
use tie_core::span_qa::{constrained_span_select, refine, SpanScores};

fn page(seed: u64, max_nodes: usize) -> (Document, std::collections::BTreeMap<usize, tie_core::graph::BBox>) {
    random_page(&mut ChaCha8Rng::seed_from_u64(seed), max_nodes)
}

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("<div>".to_string()),
        Just("</div>".to_string()),
        Just("<P class=\"a > b\">".to_string()),
        Just("</p>".to_string()),
        Just("<br/>".to_string()),
        Just("<td id='x'>".to_string()),
        "[a-zA-Z0-9]{1,6}",
        "[.,:;!?()\"']{1,3}",
        "[a-z]{1,4}[.,!?]{1,2}",
        "[ \t\n]{1,3}",
        Just("a < b".to_string()),
    ]
}

fn html() -> impl Strategy<Value = String> {
    prop::collection::vec(fragment(), 0..40).prop_map(|parts| parts.concat())
}

fn word_list() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[abc]", 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tokens_cover_the_source_in_order(src in html()) {
        let seq = tokenize(&src).unwrap();
        let mut covered = vec![false; src.len()];
        let mut prev_end = 0;
        for (i, t) in seq.tokens.iter().enumerate() {
            prop_assert_eq!(t.index, i);
            prop_assert!(prev_end <= t.char_start && t.char_start < t.char_end);
            prev_end = t.char_end;
            covered[t.char_start..t.char_end].iter_mut().for_each(|c| *c = true);
            let slice = &src[t.char_start..t.char_end];
            match t.kind {
                TokenKind::Word => prop_assert_eq!(slice, t.text.as_str()),
                TokenKind::TagOpen | TokenKind::TagClose => {
                    let name = t.tag_name().unwrap();
                    prop_assert!(!name.is_empty());
                    prop_assert_eq!(name, name.to_ascii_lowercase());
                    prop_assert!(slice.starts_with('<') && slice.ends_with('>'));
                }
            }
        }
        for (i, c) in src.char_indices() {
            if !covered[i] {
                prop_assert!(c.is_whitespace(), "byte {} ({:?}) dropped from {:?}", i, c, src);
            }
        }
    }

    #[test]
    fn retokenizing_joined_tokens_is_identity(src in html()) {
        let first = tokenize(&src).unwrap();
        let joined: Vec<&str> = first.tokens.iter().map(|t| t.text.as_str()).collect();
        let second = tokenize(&joined.join(" ")).unwrap();
        let kinds = |s: &tie_core::html_dom::TokenSequence| {
            s.tokens.iter().map(|t| (t.kind, t.text.clone())).collect::<Vec<_>>()
        };
        prop_assert_eq!(kinds(&first), kinds(&second));
    }

    #[test]
    fn direct_contents_partition_the_tokens(seed in any::<u64>()) {
        let (doc, _) = page(seed, 40);
        let owners = token_owners(&doc);
        let mut total = 0;
        for node in &doc.tree.nodes {
            let expected: Vec<usize> = (0..doc.tokens.len()).filter(|&t| owners[t] == node.id).collect();
            prop_assert_eq!(&node.direct_content, &expected);
            total += node.direct_content.len();
            for &c in &node.children {
                prop_assert!(c > node.id);
                prop_assert_eq!(doc.tree.nodes[c].parent, Some(node.id));
                let child = &doc.tree.nodes[c];
                prop_assert!(node.open_token < child.open_token && child.close_token < node.close_token);
            }
            prop_assert!(node.children.windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert_eq!(total, doc.tokens.len());
    }

    #[test]
    fn answer_node_is_the_deepest_container(seed in any::<u64>(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let (doc, _) = page(seed, 40);
        let (a, b) = (a.index(doc.tokens.len()), b.index(doc.tokens.len()));
        let span = TokenSpan::new(a.min(b), a.max(b));
        let found = doc.tree.resolve_answer_node(span).unwrap();
        let expected = doc
            .tree
            .nodes
            .iter()
            .filter(|n| n.open_token <= span.start && span.end <= n.close_token)
            .max_by_key(|n| doc.tree.depth(n.id))
            .unwrap()
            .id;
        prop_assert_eq!(found, expected);
    }

    #[test]
    fn densified_dom_matches_span_containment(seed in any::<u64>()) {
        let (doc, _) = page(seed, 40);
        prop_assert_eq!(densify_dom(&doc.tree).edges, dense_dom_oracle(&doc));
        let sparse = sparse_dom(&doc.tree);
        for &(i, j) in &sparse.edges {
            prop_assert!(doc.tree.nodes[j].parent == Some(i) || doc.tree.nodes[i].parent == Some(j));
        }
        prop_assert_eq!(sparse.edge_count(), 2 * (doc.tree.len() - 1));
    }

    #[test]
    fn position_graphs_match_the_oracle(seed in any::<u64>(), gamma in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0])) {
        let (doc, boxes) = page(seed, 30);
        let npr = build_npr(&doc.tree, &doc.tokens, &boxes, gamma).unwrap();
        let oracle = npr_oracle(&doc, &boxes, gamma);
        prop_assert_eq!(&npr.up.edges, &oracle.up);
        prop_assert_eq!(&npr.down.edges, &oracle.down);
        prop_assert_eq!(&npr.left.edges, &oracle.left);
        prop_assert_eq!(&npr.right.edges, &oracle.right);
    }

    #[test]
    fn position_graphs_are_mirrored_and_isolate_textless_nodes(seed in any::<u64>()) {
        let (doc, boxes) = page(seed, 30);
        let npr = build_npr(&doc.tree, &doc.tokens, &boxes, DEFAULT_GAMMA).unwrap();
        prop_assert_eq!(npr.up.transpose(), npr.down.edges.clone());
        prop_assert_eq!(npr.left.transpose(), npr.right.edges.clone());
        let textful = textful_oracle(&doc, &boxes);
        for g in [&npr.up, &npr.down, &npr.left, &npr.right] {
            prop_assert!(g.edges.iter().all(|&(i, j)| i != j));
            for (node, &t) in textful.iter().enumerate() {
                if !t {
                    prop_assert_eq!(g.degree(node), 0);
                }
            }
        }
    }

    #[test]
    fn raising_gamma_only_removes_edges(seed in any::<u64>(), g1 in 0.0..=1.0f64, g2 in 0.0..=1.0f64) {
        let (doc, boxes) = page(seed, 30);
        let (lo, hi) = (g1.min(g2), g1.max(g2));
        let loose = build_npr(&doc.tree, &doc.tokens, &boxes, lo).unwrap();
        let tight = build_npr(&doc.tree, &doc.tokens, &boxes, hi).unwrap();
        prop_assert!(tight.up.edges.is_subset(&loose.up.edges));
        prop_assert!(tight.left.edges.is_subset(&loose.left.edges));
    }

    #[test]
    fn span_select_matches_brute_force(
        scores in prop::collection::vec((-3i32..=3, -3i32..=3), 1..50),
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
    ) {
        let start: Vec<f64> = scores.iter().map(|s| s.0 as f64 / 4.0).collect();
        let end: Vec<f64> = scores.iter().map(|s| s.1 as f64 / 4.0).collect();
        let (a, b) = (a.index(start.len()), b.index(start.len()));
        let window = TokenSpan::new(a.min(b), a.max(b));
        let picked = constrained_span_select(&SpanScores { start: start.clone(), end: end.clone() }, window).unwrap();
        prop_assert!(window.contains(&picked));
        prop_assert_eq!(picked, brute_force_span(&start, &end, window));
    }

    #[test]
    fn refined_span_lies_in_the_used_node(seed in any::<u64>(), raw in prop::collection::vec(-2.0..2.0f64, 200)) {
        let (doc, _) = page(seed, 20);
        let n = doc.tokens.len();
        prop_assume!(n <= 100);
        let scores = SpanScores { start: raw[..n].to_vec(), end: raw[100..100 + n].to_vec() };
        for node in 0..doc.tree.len() {
            match refine(&scores, &doc.tokens, &doc.tree, node, None) {
                Ok(r) => {
                    prop_assert_eq!(r.node, node);
                    prop_assert!(doc.tree.node_token_span(node).unwrap().contains(&r.span));
                    prop_assert!(r.fallback.is_none());
                }
                Err(_) => prop_assert!(!doc.tree.subtree_has_words(&doc.tokens, node)),
            }
        }
    }

    #[test]
    fn constraint_never_beats_the_whole_page(raw in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..60), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let scores = SpanScores { start: raw.iter().map(|r| r.0).collect(), end: raw.iter().map(|r| r.1).collect() };
        let (a, b) = (a.index(raw.len()), b.index(raw.len()));
        let value = |s: TokenSpan| scores.start[s.start] + scores.end[s.end];
        let inside = constrained_span_select(&scores, TokenSpan::new(a.min(b), a.max(b))).unwrap();
        let anywhere = constrained_span_select(&scores, TokenSpan::new(0, raw.len() - 1)).unwrap();
        prop_assert!(value(inside) <= value(anywhere));
    }

    #[test]
    fn peaked_scores_on_the_gold_node_give_the_gold_span(seed in any::<u64>(), pick in any::<prop::sample::Index>(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let (doc, _) = page(seed, 20);
        let node = pick.index(doc.tree.len());
        prop_assume!(doc.tree.subtree_has_words(&doc.tokens, node));
        let window = doc.tree.node_token_span(node).unwrap();
        let width = window.end - window.start + 1;
        let (a, b) = (window.start + a.index(width), window.start + b.index(width));
        let gold = TokenSpan::new(a.min(b), a.max(b));
        let n = doc.tokens.len();
        let mut scores = SpanScores { start: vec![0.0; n], end: vec![0.0; n] };
        scores.start[gold.start] = 5.0;
        scores.end[gold.end] = 5.0;
        let refined = refine(&scores, &doc.tokens, &doc.tree, node, None).unwrap();
        prop_assert_eq!(refined.span, gold);
    }

    #[test]
    fn f1_is_symmetric_and_bounded(a in word_list(), b in word_list()) {
        let f = token_f1(&a, &b);
        prop_assert_eq!(f, token_f1(&b, &a));
        prop_assert!((0.0..=1.0).contains(&f));
        if exact_match(&a, &b) == 1.0 {
            prop_assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn extending_a_correct_answer_lowers_precision(gold in prop::collection::vec("[abc]", 1..5), extra in prop::collection::vec("[xyz]", 1..4)) {
        let mut longer = gold.clone();
        longer.extend(extra);
        prop_assert_eq!(token_f1(&gold, &gold), 1.0);
        prop_assert!(token_f1(&longer, &gold) < 1.0);
    }

    #[test]
    fn path_overlap_is_positive_and_full_only_on_the_same_node(seed in any::<u64>(), idx in prop::collection::vec(any::<prop::sample::Index>(), 4)) {
        let (doc, _) = page(seed, 30);
        let n = doc.tokens.len();
        let span = |a: &prop::sample::Index, b: &prop::sample::Index| {
            let (a, b) = (a.index(n), b.index(n));
            TokenSpan::new(a.min(b), a.max(b))
        };
        let (p, g) = (span(&idx[0], &idx[1]), span(&idx[2], &idx[3]));
        let pos = pos_score(&doc.tree, p, g).unwrap();
        prop_assert!(pos > 0.0 && pos <= 100.0);
        let same = doc.tree.resolve_answer_node(p).unwrap() == doc.tree.resolve_answer_node(g).unwrap();
        prop_assert_eq!(pos == 100.0, same);
    }
}

#[test]
fn generated_pages_have_the_expected_shape() {
    let (doc, boxes) = page(3, 40);
    let ids: BTreeSet<usize> = doc.tree.nodes.iter().map(|n| n.id).collect();
    assert_eq!(ids.len(), doc.tree.len());
    assert!(boxes.keys().all(|k| ids.contains(k)));
    assert_eq!(doc.tree.nodes[0].tag_name, "html");
}
