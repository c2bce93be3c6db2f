use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_index, query_top_k, DocumentChunk, EmbeddingIndex, RetrievalError, RetrievalHit,
};
use crate::backends::{Embedder, TextGenerator};
use crate::prompts::{Prompt, Task};
use crate::text::collapse_whitespace;

pub const DEFAULT_RETRIEVAL_K: usize = 4;

pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const INDEX_FILE: &str = "index.jsonl";

const RAG_PREAMBLE: &str =
    "Use the numbered sources to answer the question. Cite the sources you use by their marker.";
const ZERO_SHOT_PREAMBLE: &str = "Answer the question.";

/// Resolves chunk ids to their text.
pub trait ChunkLookup {
    fn chunk_text(&self, chunk_id: &str) -> Option<&str>;
}

impl ChunkLookup for HashMap<String, String> {
    fn chunk_text(&self, chunk_id: &str) -> Option<&str> {
        self.get(chunk_id).map(String::as_str)
    }
}

/// Builds the augmented prompt. With no hits the zero-shot template is used.
///
/// ```text
/// Use the numbered sources to answer the question. Cite the sources you use by their marker.
///
/// Sources:
/// [1] first hit text
/// [2] second hit text
///
/// Question: ...
/// Answer:
/// ```
pub fn assemble_rag_prompt(
    question: &str,
    hits: &[RetrievalHit],
    lookup: &dyn ChunkLookup,
) -> Result<String, RetrievalError> {
    let question = collapse_whitespace(question);
    if hits.is_empty() {
        return Ok(format!(
            "{ZERO_SHOT_PREAMBLE}\n\nQuestion: {question}\nAnswer:"
        ));
    }
    let mut out = format!("{RAG_PREAMBLE}\n\nSources:\n");
    for (i, hit) in hits.iter().enumerate() {
        let text = lookup
            .chunk_text(&hit.chunk_id)
            .ok_or_else(|| RetrievalError::UnknownChunk(hit.chunk_id.clone()))?;
        out.push_str(&format!("[{}] {}\n", i + 1, collapse_whitespace(text)));
    }
    out.push_str(&format!("\nQuestion: {question}\nAnswer:"));
    Ok(out)
}

/// Chunk texts plus their embedding index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    chunks: Vec<DocumentChunk>,
    by_id: HashMap<String, usize>,
    index: EmbeddingIndex,
}

impl ChunkLookup for KnowledgeBase {
    fn chunk_text(&self, chunk_id: &str) -> Option<&str> {
        self.chunk(chunk_id).map(|c| c.text.as_str())
    }
}

impl KnowledgeBase {
    pub fn empty(dim: usize) -> Self {
        Self {
            chunks: Vec::new(),
            by_id: HashMap::new(),
            index: EmbeddingIndex::new(dim),
        }
    }

    pub fn build(chunks: Vec<DocumentChunk>, emb: &dyn Embedder) -> Result<Self, RetrievalError> {
        let index = build_index(&chunks, emb)?;
        Self::from_parts(chunks, index)
    }

    /// Pairs chunks with an index; every chunk must be indexed and vice versa.
    pub fn from_parts(
        chunks: Vec<DocumentChunk>,
        index: EmbeddingIndex,
    ) -> Result<Self, RetrievalError> {
        let mut by_id = HashMap::with_capacity(chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            if by_id.insert(c.chunk_id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateChunk(c.chunk_id.clone()));
            }
            if !index.contains(&c.chunk_id) {
                return Err(RetrievalError::UnknownChunk(c.chunk_id.clone()));
            }
        }
        if let Some(e) = index
            .entries()
            .iter()
            .find(|e| !by_id.contains_key(&e.chunk_id))
        {
            return Err(RetrievalError::UnknownChunk(e.chunk_id.clone()));
        }
        Ok(Self {
            chunks,
            by_id,
            index,
        })
    }

    pub fn chunks(&self) -> &[DocumentChunk] {
        &self.chunks
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn position(&self, chunk_id: &str) -> Option<usize> {
        self.by_id.get(chunk_id).copied()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&DocumentChunk> {
        self.position(chunk_id).map(|i| &self.chunks[i])
    }

    pub fn retrieve(
        &self,
        question: &str,
        k: usize,
        emb: &dyn Embedder,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if !self.is_empty() && emb.dim() != self.index.dim() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.index.dim(),
                got: emb.dim(),
            });
        }
        query_top_k(&self.index, question, k, emb)
    }

    pub fn write_chunks(
        chunks: &[DocumentChunk],
        mut out: impl Write,
    ) -> Result<(), RetrievalError> {
        for c in chunks {
            serde_json::to_writer(&mut out, c)
                .map_err(|e| RetrievalError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_chunks(input: impl BufRead) -> Result<Vec<DocumentChunk>, RetrievalError> {
        let mut out = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| RetrievalError::Format(format!("chunk line {}: {e}", n + 1)))?,
            );
        }
        Ok(out)
    }

    /// Serialized `(chunks.jsonl, index.jsonl)` contents.
    pub fn encode(&self) -> Result<(Vec<u8>, Vec<u8>), RetrievalError> {
        let mut chunks = Vec::new();
        Self::write_chunks(&self.chunks, &mut chunks)?;
        let mut index = Vec::new();
        self.index.write_jsonl(&mut index)?;
        Ok((chunks, index))
    }

    /// Writes `index.jsonl` and then `chunks.jsonl` into `dir`, each through a
    /// temp file and rename. Loaders treat the chunks file as the marker that
    /// an index is present, so it goes last.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir)?;
        let (chunks, index) = self.encode()?;
        for (name, bytes) in [(INDEX_FILE, index), (CHUNKS_FILE, chunks)] {
            let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let chunks = Self::read_chunks(BufReader::new(fs::File::open(dir.join(CHUNKS_FILE))?))?;
        let index = EmbeddingIndex::load(&dir.join(INDEX_FILE))?;
        Self::from_parts(chunks, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub question: String,
    pub prompt: String,
    pub answer: String,
    pub hits: Vec<RetrievalHit>,
    /// Texts of the retrieved chunks, in hit order.
    pub retrieved: Vec<String>,
}

/// Retrieve, assemble, generate.
pub struct RagPipeline<'a> {
    pub kb: &'a KnowledgeBase,
    pub gen: &'a dyn TextGenerator,
    pub emb: &'a dyn Embedder,
    pub k: usize,
    pub seed: u64,
}

impl RagPipeline<'_> {
    pub fn answer(&self, question: &str) -> Result<RagAnswer, RetrievalError> {
        let hits = self.kb.retrieve(question, self.k, self.emb)?;
        let prompt = assemble_rag_prompt(question, &hits, self.kb)?;
        let req = Prompt::new(Task::Answer)
            .body(prompt.clone())
            .to_request(self.seed);
        let answer = self.gen.generate(&req)?.text.trim().to_string();
        let retrieved = hits
            .iter()
            .filter_map(|h| self.kb.chunk_text(&h.chunk_id).map(str::to_string))
            .collect();
        Ok(RagAnswer {
            question: question.to_string(),
            prompt,
            answer,
            hits,
            retrieved,
        })
    }
}
