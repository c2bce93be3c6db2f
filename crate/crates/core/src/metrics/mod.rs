//! ROUGE-N, ROUGE-L, BLEU, cosine similarity and the relevance rate, plus the
//! evaluation harness that aggregates them into a [`MetricReport`].
//!
//! All text metrics work on [`crate::text::tokenize`] output, so every score
//! can be recomputed by hand from lowercase, punctuation-separated tokens.

mod eval;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, EmbeddingRequest};
use crate::retrieval::RetrievalError;
use crate::text::tokenize;

pub use eval::{
    evaluate_pipeline, render_table, EvalConfig, EvalDetail, EvalItem, ItemScores, MetricReport,
    QaSystem, AVG_BLEU_DEFINITION, TABLE_ROWS,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("no input items")]
    EmptyInput,
    #[error("length mismatch: {left} versus {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("dimension mismatch: {left} versus {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    /// Precision and recall from a match count; empty sides give 0.
    pub fn from_counts(matched: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::new(
            ratio(matched, candidate_total),
            ratio(matched, reference_total),
        )
    }

    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_order(n: usize) -> Result<(), MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidParameter(
            "n-gram order must be at least 1".into(),
        ));
    }
    Ok(())
}

/// ROUGE-N on token sequences: clipped n-gram overlap over candidate
/// (precision) and reference (recall) n-gram counts.
pub fn rouge_n_tokens(
    candidate: &[String],
    reference: &[String],
    n: usize,
) -> Result<PrfScore, MetricError> {
    check_order(n)?;
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(PrfScore::from_counts(
        overlap,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    ))
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<PrfScore, MetricError> {
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> PrfScore {
    PrfScore::from_counts(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

pub fn rouge_l(candidate: &str, reference: &str) -> PrfScore {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to numerator and denominator of every precision with n ≥ 2.
    AddOne,
}

/// Modified (clipped) n-gram precision as `(clipped, total)`.
pub fn modified_precision(
    candidate: &[String],
    references: &[Vec<String>],
    n: usize,
) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
    let clipped = cand
        .iter()
        .map(|(g, c)| {
            let max_ref = ref_counts
                .iter()
                .map(|r| r.get(g).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            (*c).min(max_ref)
        })
        .sum();
    (clipped, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`; ties go to the shorter reference.
pub fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Sentence BLEU with uniform weights over orders `1..=max_n`.
pub fn bleu_tokens(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::InvalidParameter(format!(
            "BLEU order {max_n} is outside 1..=4"
        )));
    }
    if references.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (clipped, total) = modified_precision(candidate, references, n);
        let (num, den) = match smoothing {
            Smoothing::AddOne if n >= 2 => (clipped + 1, total + 1),
            _ => (clipped, total),
        };
        if num == 0 || den == 0 {
            return Ok(0.0);
        }
        log_sum += (num as f64 / den as f64).ln();
    }
    let r = closest_ref_len(c, references);
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

pub fn bleu(
    candidate: &str,
    references: &[&str],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    bleu_tokens(&tokenize(candidate), &refs, max_n, smoothing)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine that scores a zero vector (for example an empty text) as 0.
pub(crate) fn cosine_or_zero(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    match cosine(u, v) {
        Err(MetricError::ZeroVector) => Ok(0.0),
        other => other,
    }
}

pub(crate) fn embed_all(
    emb: &dyn Embedder,
    texts: Vec<String>,
) -> Result<Vec<Vec<f64>>, MetricError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let n = texts.len();
    let resp = emb.embed(&EmbeddingRequest { texts })?;
    if resp.vectors.len() != n {
        return Err(MetricError::LengthMismatch {
            left: n,
            right: resp.vectors.len(),
        });
    }
    Ok(resp.vectors)
}

/// Whether `answer` is within `threshold` cosine of any of its documents.
pub(crate) fn is_relevant(
    answer: &[f64],
    docs: &[Vec<f64>],
    threshold: f64,
) -> Result<bool, MetricError> {
    let mut best = f64::NEG_INFINITY;
    for d in docs {
        best = best.max(cosine_or_zero(answer, d)?);
    }
    Ok(best >= threshold)
}

/// Fraction of answers whose best cosine against their own retrieved
/// documents reaches `threshold`. An answer with no documents is irrelevant.
pub fn relevance_rate(
    answers: &[String],
    retrieved_docs: &[Vec<String>],
    emb: &dyn Embedder,
    threshold: f64,
) -> Result<f64, MetricError> {
    if answers.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if answers.len() != retrieved_docs.len() {
        return Err(MetricError::LengthMismatch {
            left: answers.len(),
            right: retrieved_docs.len(),
        });
    }
    let mut relevant = 0usize;
    for (answer, docs) in answers.iter().zip(retrieved_docs) {
        let mut texts = vec![answer.clone()];
        texts.extend(docs.iter().cloned());
        let vecs = embed_all(emb, texts)?;
        if is_relevant(&vecs[0], &vecs[1..], threshold)? {
            relevant += 1;
        }
    }
    Ok(relevant as f64 / answers.len() as f64)
}
