use super::{is_void_element, DomError, DomNode, DomTree, ParseWarning, TokenKind, TokenSequence};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject unclosed and stray tags instead of repairing them.
    pub strict: bool,
}

pub fn parse_dom(seq: &TokenSequence) -> Result<DomTree, DomError> {
    parse_dom_with(seq, ParseOptions::default())
}

/// Match open/close tags into a tree with pre-order ids.
///
/// Parsing always starts under a synthetic `html` root; it is dropped again
/// when the page consists of exactly one `html` element covering every token.
pub fn parse_dom_with(seq: &TokenSequence, options: ParseOptions) -> Result<DomTree, DomError> {
    if seq.is_empty() {
        return Err(DomError::EmptyDocument);
    }
    let last = seq.len() - 1;
    let mut nodes = vec![DomNode {
        id: 0,
        tag_name: "html".to_string(),
        parent: None,
        children: Vec::new(),
        open_token: 0,
        close_token: last,
        direct_content: Vec::new(),
        synthetic: true,
    }];
    let mut warnings = Vec::new();
    let mut stack: Vec<usize> = vec![0];

    for token in &seq.tokens {
        match token.kind {
            TokenKind::Word => {}
            TokenKind::TagOpen => {
                let name = token.tag_name().unwrap_or_default().to_string();
                let parent = *stack.last().expect("root never popped");
                let id = nodes.len();
                let leaf =
                    is_void_element(&name) || seq.source[token.char_start..token.char_end].ends_with("/>");
                nodes.push(DomNode {
                    id,
                    tag_name: name,
                    parent: Some(parent),
                    children: Vec::new(),
                    open_token: token.index,
                    close_token: token.index,
                    direct_content: Vec::new(),
                    synthetic: false,
                });
                nodes[parent].children.push(id);
                if !leaf {
                    stack.push(id);
                }
            }
            TokenKind::TagClose => {
                let name = token.tag_name().unwrap_or_default();
                let matched = stack[1..]
                    .iter()
                    .rposition(|&id| nodes[id].tag_name == name)
                    .map(|p| p + 1);
                match matched {
                    Some(depth) => {
                        let top = stack.len() - 1;
                        if depth != top {
                            if options.strict {
                                return Err(DomError::MismatchedTag {
                                    token: token.index,
                                    found: token.text.clone(),
                                    expected: format!("</{}>", nodes[stack[top]].tag_name),
                                });
                            }
                            for &open in &stack[depth + 1..] {
                                warnings.push(ParseWarning {
                                    token: token.index,
                                    message: format!(
                                        "auto-closed <{}> opened at token {}",
                                        nodes[open].tag_name, nodes[open].open_token
                                    ),
                                });
                                nodes[open].close_token = token.index - 1;
                            }
                        }
                        nodes[stack[depth]].close_token = token.index;
                        stack.truncate(depth);
                    }
                    None => {
                        if options.strict {
                            let top = stack[stack.len() - 1];
                            return Err(DomError::MismatchedTag {
                                token: token.index,
                                found: token.text.clone(),
                                expected: if top == 0 {
                                    "no close tag".to_string()
                                } else {
                                    format!("</{}>", nodes[top].tag_name)
                                },
                            });
                        }
                        warnings.push(ParseWarning {
                            token: token.index,
                            message: format!("dropped stray {}", token.text),
                        });
                    }
                }
            }
        }
    }

    if stack.len() > 1 {
        if options.strict {
            let top = stack[stack.len() - 1];
            return Err(DomError::MismatchedTag {
                token: last,
                found: "end of input".to_string(),
                expected: format!("</{}>", nodes[top].tag_name),
            });
        }
        for &open in &stack[1..] {
            warnings.push(ParseWarning {
                token: last,
                message: format!(
                    "auto-closed <{}> opened at token {} at end of input",
                    nodes[open].tag_name, nodes[open].open_token
                ),
            });
            nodes[open].close_token = last;
        }
    }

    let drop_synthetic = match nodes[0].children.as_slice() {
        [only] => {
            let n = &nodes[*only];
            n.tag_name == "html" && n.open_token == 0 && n.close_token == last
        }
        _ => false,
    };
    if drop_synthetic {
        nodes.remove(0);
        for node in &mut nodes {
            node.id -= 1;
            node.parent = node.parent.and_then(|p| p.checked_sub(1));
            for c in &mut node.children {
                *c -= 1;
            }
        }
        nodes[0].parent = None;
    }

    fill_direct_content(&mut nodes, seq.len());
    Ok(DomTree {
        nodes,
        root: 0,
        warnings,
    })
}

/// Each token belongs to the deepest node whose span covers it. Pre-order
/// visits descendants after ancestors, so later writes win.
fn fill_direct_content(nodes: &mut [DomNode], token_count: usize) {
    let mut owner = vec![0usize; token_count];
    for node in nodes.iter() {
        for slot in &mut owner[node.open_token..=node.close_token] {
            *slot = node.id;
        }
    }
    for (token, &id) in owner.iter().enumerate() {
        nodes[id].direct_content.push(token);
    }
}
