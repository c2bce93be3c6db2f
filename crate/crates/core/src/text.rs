//! Text normalization shared by chunking, metrics, grading and the mock embedder.
//!
//! Every component that compares text goes through [`tokenize`], so a single
//! rule governs what counts as a token: the input is NFC-normalized, split on
//! whitespace, every character that is neither alphanumeric nor whitespace
//! becomes a token of its own, and every token is lowercased.

use std::ops::Range;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// A token together with the byte range it occupies in the NFC form of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
}

fn is_separate(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// NFC-normalizes `text`.
pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// Splits already NFC-normalized text into tokens with byte offsets.
///
/// Offsets refer to `text` itself, so callers that need offsets must pass the
/// output of [`nfc`].
pub fn tokenize_nfc_with_offsets(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |tokens: &mut Vec<Token>, start: usize, end: usize| {
        let lowered: String = text[start..end].to_lowercase().nfc().collect();
        tokens.push(Token {
            text: lowered,
            span: start..end,
        });
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_separate(c) {
            if let Some(start) = word_start.take() {
                flush(&mut tokens, start, i);
            }
            if is_separate(c) {
                flush(&mut tokens, i, i + c.len_utf8());
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(start) = word_start {
        flush(&mut tokens, start, text.len());
    }
    tokens
}

/// Lowercase, NFC, punctuation-separated tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_nfc_with_offsets(&nfc(text))
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-folds `text` for comparison: NFC, full uppercase mapping, then lowercase.
///
/// Going through the uppercase mapping first makes the result identical for a
/// text and its uppercased form (`ß` and `SS` both fold to `ss`).
pub fn fold_case(text: &str) -> String {
    let upper: String = nfc(text).to_uppercase();
    upper.to_lowercase().nfc().collect()
}

/// Truncates `text` to at most `max_chars` characters, preferring to cut after
/// the last sentence terminator, then at the last whitespace, then mid-word.
pub fn truncate_at_sentence(text: &str, max_chars: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut = text
        .char_indices()
        .nth(max_chars)
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let head = &text[..cut];
    if let Some(pos) = head.rfind(['.', '!', '?']) {
        if pos > 0 {
            return head[..=pos].trim().to_string();
        }
    }
    if let Some(pos) = head.rfind(char::is_whitespace) {
        if pos > 0 {
            return head[..pos].trim_end().to_string();
        }
    }
    head.to_string()
}

/// First sentence of `text` (up to and including the first terminator).
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    match text.find(['.', '!', '?']) {
        Some(pos) => &text[..=pos],
        None => text,
    }
}

/// Lowercase ASCII slug: alphanumerics kept, everything else collapsed to `-`.
pub fn slugify(text: &str) -> String {
    let mut out = String::new();
    let mut dash = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if dash && !out.is_empty() {
                out.push('-');
            }
            dash = false;
            out.push(c.to_ascii_lowercase());
        } else {
            dash = true;
        }
    }
    out
}

/// Hex SHA-256 digest of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes `value` as JSON with object keys sorted and no insignificant whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn sorted(value: &serde_json::Value) -> serde_json::Value {
        match value {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&map[k]));
                }
                serde_json::Value::Object(out)
            }
            serde_json::Value::Array(items) => {
                serde_json::Value::Array(items.iter().map(sorted).collect())
            }
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(value)).expect("JSON values always serialize")
}

/// Extracts the outermost `{...}` object from model output that may be wrapped
/// in prose or a fenced code block.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}
