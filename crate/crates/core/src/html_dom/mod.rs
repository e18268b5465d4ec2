//! Flattened HTML code sequences and the DOM trees parsed from them.
//!
//! A page is first turned into a [`TokenSequence`]: every tag becomes one
//! token normalized to `<name>` / `</name>`, and text is split into word
//! tokens. [`parse_dom`] then matches open/close tags into a [`DomTree`]
//! whose nodes know their token span and their *direct contents*: the
//! tokens inside the node that belong to none of its children, the node's
//! own tag tokens included.

mod parse;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_dom, parse_dom_with, ParseOptions};
pub use tokenize::{tokenize, tokenize_bytes, PUNCTUATION};

/// Tags that never have content or a closing tag.
pub const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr",
];

pub fn is_void_element(name: &str) -> bool {
    VOID_ELEMENTS.contains(&name)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomError {
    #[error("unterminated tag starting at byte {0}")]
    UnterminatedTag(usize),
    #[error("input is not valid UTF-8 (first bad byte at {0})")]
    InvalidUtf8(usize),
    #[error("mismatched tag {found} at token {token} (expected {expected})")]
    MismatchedTag {
        token: usize,
        found: String,
        expected: String,
    },
    #[error("document contains no tokens")]
    EmptyDocument,
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("token span ({start}, {end}) out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("character range {start}..{end} is invalid for a source of {len} bytes")]
    InvalidCharRange { start: usize, end: usize, len: usize },
    #[error("character range {start}..{end} overlaps no token")]
    NoTokenOverlap { start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    TagOpen,
    TagClose,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub kind: TokenKind,
    /// Normalized tag (`<div>`) or the decoded word text.
    pub text: String,
    /// Half-open byte range into the source HTML.
    pub char_start: usize,
    pub char_end: usize,
}

impl Token {
    pub fn is_tag(&self) -> bool {
        !matches!(self.kind, TokenKind::Word)
    }

    pub fn is_word(&self) -> bool {
        matches!(self.kind, TokenKind::Word)
    }

    /// Tag name without brackets, or `None` for words.
    pub fn tag_name(&self) -> Option<&str> {
        match self.kind {
            TokenKind::TagOpen => Some(&self.text[1..self.text.len() - 1]),
            TokenKind::TagClose => Some(&self.text[2..self.text.len() - 1]),
            TokenKind::Word => None,
        }
    }
}

/// The flattened code sequence `c` of one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub source: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Token> {
        self.tokens.get(index)
    }

    /// Texts of the word tokens only, in order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .filter(|t| t.is_word())
            .map(|t| t.text.as_str())
    }

    /// Smallest token span covering every token that overlaps the byte
    /// range `char_start..char_end`.
    pub fn char_to_token_span(&self, char_start: usize, char_end: usize) -> Result<TokenSpan, DomError> {
        if char_start >= char_end || char_end > self.source.len() {
            return Err(DomError::InvalidCharRange {
                start: char_start,
                end: char_end,
                len: self.source.len(),
            });
        }
        let mut hit = self
            .tokens
            .iter()
            .filter(|t| t.char_start < char_end && t.char_end > char_start)
            .map(|t| t.index);
        let first = hit.next().ok_or(DomError::NoTokenOverlap {
            start: char_start,
            end: char_end,
        })?;
        let last = hit.next_back().unwrap_or(first);
        Ok(TokenSpan::new(first, last))
    }

    /// Space-joined word texts inside `span`; tag tokens are skipped.
    pub fn span_text(&self, span: TokenSpan) -> String {
        self.tokens[span.start..=span.end]
            .iter()
            .filter(|t| t.is_word())
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn char_to_token_span(
    seq: &TokenSequence,
    char_start: usize,
    char_end: usize,
) -> Result<TokenSpan, DomError> {
    seq.char_to_token_span(char_start, char_end)
}

/// Inclusive, 0-based token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start {start} after end {end}");
        TokenSpan { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, other: &TokenSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn contains_index(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomNode {
    pub id: NodeId,
    pub tag_name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub open_token: usize,
    /// Close tag index; for void, self-closing and auto-closed elements
    /// this is the last token the element covers.
    pub close_token: usize,
    pub direct_content: Vec<usize>,
    /// True for the `html` root added when the page has no single root.
    #[serde(default)]
    pub synthetic: bool,
}

impl DomNode {
    pub fn span(&self) -> TokenSpan {
        TokenSpan::new(self.open_token, self.close_token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub token: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomTree {
    pub nodes: Vec<DomNode>,
    pub root: NodeId,
    #[serde(default)]
    pub warnings: Vec<ParseWarning>,
}

impl DomTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&DomNode, DomError> {
        self.nodes.get(id).ok_or(DomError::UnknownNode(id))
    }

    pub fn token_count(&self) -> usize {
        self.nodes[self.root].close_token + 1
    }

    pub fn node_token_span(&self, id: NodeId) -> Result<TokenSpan, DomError> {
        self.node(id).map(DomNode::span)
    }

    /// Depth of a node; the root has depth 0.
    pub fn depth(&self, id: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            depth += 1;
            cur = p;
        }
        depth
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn root_path(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn is_ancestor(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = self.nodes[node].parent;
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.nodes[p].parent;
        }
        false
    }

    /// Deepest node whose token span contains `span` entirely.
    pub fn resolve_answer_node(&self, span: TokenSpan) -> Result<NodeId, DomError> {
        let len = self.token_count();
        if span.start > span.end || span.end >= len {
            return Err(DomError::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len,
            });
        }
        let mut cur = self.root;
        // containing nodes form a chain, so at most one child can match
        'descend: loop {
            for &child in &self.nodes[cur].children {
                if self.nodes[child].span().contains(&span) {
                    cur = child;
                    continue 'descend;
                }
            }
            return Ok(cur);
        }
    }

    /// Whether the subtree of `id` holds at least one word token.
    pub fn subtree_has_words(&self, seq: &TokenSequence, id: NodeId) -> bool {
        let span = self.nodes[id].span();
        seq.tokens[span.start..=span.end].iter().any(Token::is_word)
    }

    /// Whether the direct contents of `id` hold at least one word token.
    pub fn has_direct_words(&self, seq: &TokenSequence, id: NodeId) -> bool {
        self.nodes[id]
            .direct_content
            .iter()
            .any(|&t| seq.tokens[t].is_word())
    }
}

pub fn node_token_span(tree: &DomTree, node: NodeId) -> Result<TokenSpan, DomError> {
    tree.node_token_span(node)
}

pub fn resolve_answer_node(tree: &DomTree, span: TokenSpan) -> Result<NodeId, DomError> {
    tree.resolve_answer_node(span)
}

/// A tokenized and parsed page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub tokens: TokenSequence,
    pub tree: DomTree,
}

impl Document {
    pub fn parse(html: &str) -> Result<Self, DomError> {
        Self::parse_with(html, ParseOptions::default())
    }

    pub fn parse_with(html: &str, options: ParseOptions) -> Result<Self, DomError> {
        let tokens = tokenize(html)?;
        let tree = parse_dom_with(&tokens, options)?;
        Ok(Document { tokens, tree })
    }
}
