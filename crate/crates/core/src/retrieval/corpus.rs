use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::text::{nfc, tokenize_nfc_with_offsets};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub chunk_id: String,
    pub source_doc: String,
    pub text: String,
    /// Half-open token range `[start, end)` within the source document.
    pub span: (usize, usize),
}

/// Normalizes one record: NFC, unified line endings, control characters
/// dropped, horizontal whitespace runs collapsed to one space, lines trimmed
/// and blank-line runs reduced to a single blank line.
pub fn clean_text(raw: &str) -> String {
    let text = nfc(raw).replace("\r\n", "\n").replace('\r', "\n");
    let mut lines: Vec<String> = Vec::new();
    for line in text.split('\n') {
        let mut out = String::with_capacity(line.len());
        let mut pending_space = false;
        for c in line.chars() {
            if c.is_whitespace() {
                pending_space = true;
            } else if c.is_control() {
                continue;
            } else {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(c);
            }
        }
        let blank = out.is_empty();
        if blank && lines.last().is_some_and(|l| l.is_empty()) {
            continue;
        }
        lines.push(out);
    }
    lines.join("\n").trim().to_string()
}

/// Cleans every record, dropping empty results and exact duplicates (first
/// occurrence kept).
pub fn clean_documents(raw: impl IntoIterator<Item = Document>) -> Vec<Document> {
    let mut seen = HashSet::new();
    raw.into_iter()
        .filter_map(|d| {
            let text = clean_text(&d.text);
            (!text.is_empty() && seen.insert(text.clone())).then_some(Document { id: d.id, text })
        })
        .collect()
}

/// Concatenates corpora in order, removing documents whose text already
/// appeared in an earlier position.
pub fn merge_corpora(corpora: impl IntoIterator<Item = Vec<Document>>) -> Vec<Document> {
    let mut seen = HashSet::new();
    corpora
        .into_iter()
        .flatten()
        .filter(|d| seen.insert(d.text.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    /// Snap window ends back to the last sentence terminator when possible.
    pub semantic: bool,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: 200,
            overlap: 20,
            semantic: false,
        }
    }
}

fn is_terminator(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

/// Splits a document into token windows of `chunk_size` that overlap by
/// exactly `overlap` tokens. Chunk text is the original source slice covering
/// the window's tokens.
pub fn chunk_document(
    doc: &Document,
    cfg: &ChunkConfig,
) -> Result<Vec<DocumentChunk>, RetrievalError> {
    if cfg.chunk_size == 0 || cfg.overlap >= cfg.chunk_size {
        return Err(RetrievalError::BadWindow {
            chunk_size: cfg.chunk_size,
            overlap: cfg.overlap,
        });
    }
    let text = nfc(&doc.text);
    let tokens = tokenize_nfc_with_offsets(&text);
    let n = tokens.len();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + cfg.chunk_size).min(n);
        if cfg.semantic && end < n {
            // Keep at least one token past the overlap so the window advances.
            let floor = start + cfg.overlap + 1;
            if let Some(p) = (floor..end)
                .rev()
                .find(|&p| is_terminator(&tokens[p - 1].text))
            {
                end = p;
            }
        }
        let byte_range = tokens[start].span.start..tokens[end - 1].span.end;
        chunks.push(DocumentChunk {
            chunk_id: format!("{}#{}", doc.id, chunks.len()),
            source_doc: doc.id.clone(),
            text: text[byte_range].to_string(),
            span: (start, end),
        });
        if end == n {
            break;
        }
        start = end - cfg.overlap;
    }
    Ok(chunks)
}
