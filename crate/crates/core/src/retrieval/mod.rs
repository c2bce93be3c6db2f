//! Corpus ingestion, exact cosine retrieval, prompt assembly and training-set
//! construction.
//!
//! Ingestion runs clean → merge → chunk. Chunks are embedded into a flat
//! [`EmbeddingIndex`] of unit vectors, so a query is one dot product per
//! entry and the result is exact. [`KnowledgeBase`] pairs the chunk texts
//! with their index for retrieval-augmented prompts and RAFT examples.

mod corpus;
mod index;
mod raft;
mod rag;
mod split;

use thiserror::Error;

use crate::backends::BackendError;

pub use corpus::{
    chunk_document, clean_documents, clean_text, merge_corpora, ChunkConfig, Document,
    DocumentChunk,
};
pub use index::{
    build_index, query_top_k, EmbeddingIndex, IndexEntry, IndexHeader, RetrievalHit,
    SCORE_TIE_EPSILON,
};
pub use raft::{build_raft_dataset, cot_answer, QaPair, RaftConfig, RaftExample};
pub use rag::{
    assemble_rag_prompt, ChunkLookup, KnowledgeBase, RagAnswer, RagPipeline, CHUNKS_FILE,
    DEFAULT_RETRIEVAL_K, INDEX_FILE,
};
pub use split::{split_dataset, DatasetSplit, SplitRatios};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("bad window: overlap {overlap} must be smaller than chunk size {chunk_size}")]
    BadWindow { chunk_size: usize, overlap: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chunk {0} has a zero embedding")]
    DegenerateVector(String),
    #[error("duplicate chunk id {0}")]
    DuplicateChunk(String),
    #[error("unknown chunk id {0}")]
    UnknownChunk(String),
    #[error("not enough distractors: need {needed}, corpus offers {available}")]
    NotEnoughDistractors { needed: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}
