use serde::{Deserialize, Serialize};

/// A token with its position in the source text, in Unicode scalar offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    /// Exclusive.
    pub char_end: usize,
}

impl Token {
    /// Lowercased form used for sparse features.
    pub fn normalized(&self) -> String {
        self.surface.to_lowercase()
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
        )
}

/// Splits on whitespace and detaches leading/trailing punctuation, one token
/// per punctuation character. Interior punctuation ("U.S", "don't") stays.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        if chars[pos].is_whitespace() {
            pos += 1;
            continue;
        }
        let chunk_start = pos;
        while pos < chars.len() && !chars[pos].is_whitespace() {
            pos += 1;
        }
        split_chunk(&chars, chunk_start, pos, &mut tokens);
    }
    tokens
}

fn split_chunk(chars: &[char], start: usize, end: usize, out: &mut Vec<Token>) {
    let mut lead = start;
    while lead < end && is_punct(chars[lead]) {
        out.push(make_token(chars, lead, lead + 1));
        lead += 1;
    }
    if lead == end {
        return;
    }
    let mut trail = end;
    while trail > lead && is_punct(chars[trail - 1]) {
        trail -= 1;
    }
    out.push(make_token(chars, lead, trail));
    for p in trail..end {
        out.push(make_token(chars, p, p + 1));
    }
}

fn make_token(chars: &[char], start: usize, end: usize) -> Token {
    Token {
        surface: chars[start..end].iter().collect(),
        char_start: start,
        char_end: end,
    }
}

/// Slices `text` by Unicode scalar offsets.
pub fn slice_chars(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.by_ref().nth(start).unwrap_or(text.len());
    let b_end = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b_start
    };
    &text[b_start..b_end]
}
