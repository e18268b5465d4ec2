use super::{DomError, Token, TokenKind, TokenSequence};

/// Characters peeled off the front and back of a word into their own tokens.
pub const PUNCTUATION: &[char] = &['.', ',', ':', ';', '!', '?', '(', ')', '"', '\''];

/// Elements whose text content is dropped.
const RAW_TEXT_ELEMENTS: &[&str] = &["script", "style"];

pub fn tokenize_bytes(html: &[u8]) -> Result<TokenSequence, DomError> {
    let text = std::str::from_utf8(html).map_err(|e| DomError::InvalidUtf8(e.valid_up_to()))?;
    tokenize(text)
}

/// Flatten HTML into tag tokens and word tokens.
pub fn tokenize(html: &str) -> Result<TokenSequence, DomError> {
    let bytes = html.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;

    while pos < bytes.len() {
        if !is_markup_start(bytes, pos) {
            let mut end = pos + 1;
            while end < bytes.len() && !is_markup_start(bytes, end) {
                end += 1;
            }
            push_text(html, pos, end, &mut tokens);
            pos = end;
            continue;
        }

        if bytes[pos..].starts_with(b"<!--") {
            let close = find(bytes, pos + 4, b"-->").ok_or(DomError::UnterminatedTag(pos))?;
            pos = close + 3;
            continue;
        }
        if matches!(bytes[pos + 1], b'!' | b'?') {
            let close = find(bytes, pos + 2, b">").ok_or(DomError::UnterminatedTag(pos))?;
            pos = close + 1;
            continue;
        }

        let is_close = bytes[pos + 1] == b'/';
        let name_start = if is_close { pos + 2 } else { pos + 1 };
        let mut name_end = name_start;
        while name_end < bytes.len() && is_name_byte(bytes[name_end]) {
            name_end += 1;
        }
        let gt = find_tag_end(bytes, name_end).ok_or(DomError::UnterminatedTag(pos))?;
        let name = html[name_start..name_end].to_ascii_lowercase();
        let self_closing = !is_close && bytes[gt - 1] == b'/';
        let text = if is_close {
            format!("</{name}>")
        } else {
            format!("<{name}>")
        };
        tokens.push(Token {
            index: tokens.len(),
            kind: if is_close {
                TokenKind::TagClose
            } else {
                TokenKind::TagOpen
            },
            text,
            char_start: pos,
            char_end: gt + 1,
        });
        pos = gt + 1;

        if !is_close && !self_closing && RAW_TEXT_ELEMENTS.contains(&name.as_str()) {
            pos = find_raw_text_end(bytes, pos, &name).unwrap_or(bytes.len());
        }
    }

    Ok(TokenSequence {
        tokens,
        source: html.to_string(),
    })
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b':')
}

/// A `<` opens markup when followed by a letter, `/letter`, `!` or `?`.
/// Anything else (`a < b`) is text.
fn is_markup_start(bytes: &[u8], pos: usize) -> bool {
    if bytes[pos] != b'<' || pos + 1 >= bytes.len() {
        return false;
    }
    match bytes[pos + 1] {
        b'!' | b'?' => true,
        b'/' => bytes.get(pos + 2).is_some_and(u8::is_ascii_alphabetic),
        b => b.is_ascii_alphabetic(),
    }
}

fn find(bytes: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    if from > bytes.len() {
        return None;
    }
    bytes[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

/// Position of the `>` closing a tag, skipping quoted attribute values.
fn find_tag_end(bytes: &[u8], from: usize) -> Option<usize> {
    let mut quote: Option<u8> = None;
    for (i, &b) in bytes.iter().enumerate().skip(from) {
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => quote = Some(b),
            None if b == b'>' => return Some(i),
            None => {}
        }
    }
    None
}

fn find_raw_text_end(bytes: &[u8], from: usize, name: &str) -> Option<usize> {
    let needle = format!("</{name}");
    let needle = needle.as_bytes();
    (from..bytes.len().saturating_sub(needle.len() - 1)).find(|&i| {
        bytes[i..i + needle.len()].eq_ignore_ascii_case(needle)
            && bytes.get(i + needle.len()).is_none_or(|b| !is_name_byte(*b))
    })
}

/// One decoded character and the source bytes it came from.
struct Unit {
    ch: char,
    start: usize,
    end: usize,
}

fn push_text(html: &str, start: usize, end: usize, tokens: &mut Vec<Token>) {
    let segment = &html[start..end];
    let mut word_start: Option<usize> = None;
    for (off, ch) in segment.char_indices() {
        let at = start + off;
        if ch.is_whitespace() {
            if let Some(ws) = word_start.take() {
                push_word(html, ws, at, tokens);
            }
        } else if word_start.is_none() {
            word_start = Some(at);
        }
    }
    if let Some(ws) = word_start {
        push_word(html, ws, end, tokens);
    }
}

fn push_word(html: &str, start: usize, end: usize, tokens: &mut Vec<Token>) {
    let units = decode_entities(html, start, end);
    let is_punct = |u: &Unit| PUNCTUATION.contains(&u.ch);

    let lead = units.iter().take_while(|u| is_punct(u)).count();
    let trail = if lead == units.len() {
        0
    } else {
        units.iter().rev().take_while(|u| is_punct(u)).count()
    };

    let mut emit = |group: &[Unit]| {
        tokens.push(Token {
            index: tokens.len(),
            kind: TokenKind::Word,
            text: group.iter().map(|u| u.ch).collect(),
            char_start: group[0].start,
            char_end: group[group.len() - 1].end,
        });
    };

    for u in &units[..lead] {
        emit(std::slice::from_ref(u));
    }
    if lead < units.len() - trail {
        emit(&units[lead..units.len() - trail]);
    }
    for u in &units[units.len() - trail..] {
        emit(std::slice::from_ref(u));
    }
}

fn decode_entities(html: &str, start: usize, end: usize) -> Vec<Unit> {
    let word = &html[start..end];
    let mut units = Vec::with_capacity(word.len());
    let mut iter = word.char_indices().peekable();
    while let Some((off, ch)) = iter.next() {
        let at = start + off;
        if ch == '&' {
            if let Some((decoded, len)) = decode_entity(&word[off..]) {
                units.push(Unit {
                    ch: decoded,
                    start: at,
                    end: at + len,
                });
                while iter.peek().is_some_and(|&(o, _)| o < off + len) {
                    iter.next();
                }
                continue;
            }
        }
        units.push(Unit {
            ch,
            start: at,
            end: at + ch.len_utf8(),
        });
    }
    units
}

/// Decode `&amp; &lt; &gt; &quot; &#NN;` at the start of `s`.
fn decode_entity(s: &str) -> Option<(char, usize)> {
    const NAMED: &[(&str, char)] = &[("&amp;", '&'), ("&lt;", '<'), ("&gt;", '>'), ("&quot;", '"')];
    for (name, ch) in NAMED {
        if s.starts_with(name) {
            return Some((*ch, name.len()));
        }
    }
    let rest = s.strip_prefix("&#")?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b';') {
        return None;
    }
    let code: u32 = rest[..digits].parse().ok()?;
    Some((char::from_u32(code)?, digits + 3))
}
