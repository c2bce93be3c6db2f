use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DocumentChunk, RetrievalError};
use crate::backends::{embed_one, Embedder, EmbeddingRequest};

/// Texts sent per embedding request during index builds.
const EMBED_BATCH: usize = 32;
const NORM_TOLERANCE: f64 = 1e-9;

/// Scores closer than this rank as equal.
pub const SCORE_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub dim: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub score: f64,
}

/// Exact flat index of unit-normalized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    ids: HashSet<String>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.ids.contains(chunk_id)
    }

    /// Adds a vector after normalizing it to unit length.
    pub fn insert(
        &mut self,
        chunk_id: impl Into<String>,
        mut vector: Vec<f64>,
    ) -> Result<(), RetrievalError> {
        let chunk_id = chunk_id.into();
        if vector.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let norm = l2(&vector);
        if norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::DegenerateVector(chunk_id));
        }
        if self.ids.contains(&chunk_id) {
            return Err(RetrievalError::DuplicateChunk(chunk_id));
        }
        vector.iter_mut().for_each(|x| *x /= norm);
        self.ids.insert(chunk_id.clone());
        self.entries.push(IndexEntry { chunk_id, vector });
        Ok(())
    }

    /// The `k` entries with the highest cosine similarity to `query`, sorted
    /// by score descending and chunk id ascending on ties. A zero query scores
    /// every entry 0.
    ///
    /// Scores are ranked on a grid of [`SCORE_TIE_EPSILON`]: equal cosines
    /// reached through different float operations can differ in the last
    /// bits, and would otherwise skip the id tie-break.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let norm = l2(query);
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        let mut hits: Vec<RetrievalHit> = self
            .entries
            .iter()
            .map(|e| RetrievalHit {
                chunk_id: e.chunk_id.clone(),
                score: e.vector.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() * scale,
            })
            .collect();
        let key = |s: f64| (s / SCORE_TIE_EPSILON).round() as i64;
        hits.sort_by(|a, b| {
            key(b.score)
                .cmp(&key(a.score))
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    pub fn header(&self) -> IndexHeader {
        IndexHeader {
            dim: self.dim,
            count: self.entries.len(),
        }
    }

    /// Writes the header line followed by one JSON line per entry.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), RetrievalError> {
        serde_json::to_writer(&mut out, &self.header())
            .map_err(|e| RetrievalError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)
                .map_err(|e| RetrievalError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, RetrievalError> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| RetrievalError::Format("missing header line".into()))??;
        let header: IndexHeader = serde_json::from_str(&header_line)
            .map_err(|e| RetrievalError::Format(format!("header: {e}")))?;
        let mut index = Self::new(header.dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::Format(format!("entry: {e}")))?;
            if entry.vector.len() != header.dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: header.dim,
                    got: entry.vector.len(),
                });
            }
            // Stored vectors are already unit length; keep their bits as written.
            if (l2(&entry.vector) - 1.0).abs() > NORM_TOLERANCE {
                return Err(RetrievalError::Format(format!(
                    "vector of {} is not unit length",
                    entry.chunk_id
                )));
            }
            if !index.ids.insert(entry.chunk_id.clone()) {
                return Err(RetrievalError::DuplicateChunk(entry.chunk_id));
            }
            index.entries.push(entry);
        }
        if index.len() != header.count {
            return Err(RetrievalError::Format(format!(
                "header declares {} entries, found {}",
                header.count,
                index.len()
            )));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        Self::read_jsonl(BufReader::new(fs::File::open(path)?))
    }
}

/// Embeds every chunk (batches run in parallel) and stores the unit vectors.
pub fn build_index(
    chunks: &[DocumentChunk],
    emb: &dyn Embedder,
) -> Result<EmbeddingIndex, RetrievalError> {
    let dim = emb.dim();
    let batches: Vec<Vec<Vec<f64>>> = chunks
        .par_chunks(EMBED_BATCH)
        .map(|batch| {
            let req = EmbeddingRequest {
                texts: batch.iter().map(|c| c.text.clone()).collect(),
            };
            let resp = emb.embed(&req)?;
            if resp.dim != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    got: resp.dim,
                });
            }
            if resp.vectors.len() != batch.len() {
                return Err(RetrievalError::Format(format!(
                    "embedding backend returned {} vectors for {} texts",
                    resp.vectors.len(),
                    batch.len()
                )));
            }
            Ok(resp.vectors)
        })
        .collect::<Result<_, _>>()?;
    let mut index = EmbeddingIndex::new(dim);
    for (chunk, vector) in chunks.iter().zip(batches.into_iter().flatten()) {
        index.insert(chunk.chunk_id.clone(), vector)?;
    }
    Ok(index)
}

/// Embeds `question` and returns the `min(k, |index|)` best matches.
pub fn query_top_k(
    index: &EmbeddingIndex,
    question: &str,
    k: usize,
    emb: &dyn Embedder,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if index.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let q = embed_one(emb, question)?;
    index.search(&q, k)
}
