use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KnowledgeBase, RetrievalError};
use crate::text::{collapse_whitespace, first_sentence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub oracle_chunk_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaftConfig {
    pub k: usize,
    pub p_oracle: f64,
    pub seed: u64,
}

impl Default for RaftConfig {
    fn default() -> Self {
        Self {
            k: 4,
            p_oracle: 0.8,
            seed: 0,
        }
    }
}

/// One training row. Serializes to the five-key JSONL layout; the distractor
/// ids stay in memory for validation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaftExample {
    pub question: String,
    pub docs: Vec<String>,
    pub oracle_present: bool,
    pub oracle_position: Option<usize>,
    pub answer: String,
    #[serde(skip_serializing, default)]
    pub distractor_ids: Vec<String>,
}

/// Chain-of-thought answer. With the oracle at 0-based `position` the
/// reasoning cites its marker `[position + 1]`.
pub fn cot_answer(reference: &str, oracle_text: &str, position: Option<usize>) -> String {
    let evidence = collapse_whitespace(first_sentence(oracle_text));
    match position {
        Some(p) => format!(
            "Reasoning: according to source [{}], {evidence} Answer: {reference}",
            p + 1
        ),
        None => format!(
            "Reasoning: none of the sources supports the answer; recalling the reference material, {evidence} Answer: {reference}"
        ),
    }
}

/// Builds one example per QA pair.
///
/// The RNG is `ChaCha8Rng::seed_from_u64(cfg.seed)`, consumed per pair in
/// order: `random_bool(p_oracle)` decides oracle inclusion, then
/// `rand::seq::index::sample` draws the distractors from the non-oracle
/// chunks (in knowledge-base order), then, when the oracle is included,
/// `random_range(0..k)` picks its position.
pub fn build_raft_dataset(
    pairs: &[QaPair],
    kb: &KnowledgeBase,
    cfg: &RaftConfig,
) -> Result<Vec<RaftExample>, RetrievalError> {
    if cfg.k == 0 {
        return Err(RetrievalError::InvalidParameter(
            "k must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.p_oracle) {
        return Err(RetrievalError::InvalidParameter(format!(
            "p_oracle {} is outside [0, 1]",
            cfg.p_oracle
        )));
    }
    let oracle_idx: Vec<usize> = pairs
        .iter()
        .map(|p| {
            kb.position(&p.oracle_chunk_id)
                .ok_or_else(|| RetrievalError::UnknownChunk(p.oracle_chunk_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let available = kb.len().saturating_sub(1);
    let needed = if cfg.p_oracle >= 1.0 {
        cfg.k - 1
    } else {
        cfg.k
    };
    if !pairs.is_empty() && available < needed {
        return Err(RetrievalError::NotEnoughDistractors { needed, available });
    }

    let chunks = kb.chunks();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(pairs.len());
    for (pair, &oi) in pairs.iter().zip(&oracle_idx) {
        let include = rng.random_bool(cfg.p_oracle);
        let n_distractors = if include { cfg.k - 1 } else { cfg.k };
        let picks: Vec<usize> = sample(&mut rng, available, n_distractors)
            .into_iter()
            .map(|i| if i >= oi { i + 1 } else { i })
            .collect();
        let mut docs: Vec<String> = picks.iter().map(|&i| chunks[i].text.clone()).collect();
        let distractor_ids = picks.iter().map(|&i| chunks[i].chunk_id.clone()).collect();
        let position = if include {
            let pos = rng.random_range(0..cfg.k);
            docs.insert(pos, chunks[oi].text.clone());
            Some(pos)
        } else {
            None
        };
        out.push(RaftExample {
            question: pair.question.clone(),
            docs,
            oracle_present: include,
            oracle_position: position,
            answer: cot_answer(&pair.answer, &chunks[oi].text, position),
            distractor_ids,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockEmbedder;
    use crate::retrieval::DocumentChunk;

    fn kb(n: usize) -> KnowledgeBase {
        let chunks = (0..n)
            .map(|i| DocumentChunk {
                chunk_id: format!("c#{i}"),
                source_doc: "c".into(),
                text: format!("Fact number {i} about sorting."),
                span: (0, 5),
            })
            .collect();
        KnowledgeBase::build(chunks, &MockEmbedder).unwrap()
    }

    fn pairs(n: usize, corpus: usize) -> Vec<QaPair> {
        (0..n)
            .map(|i| QaPair {
                question: format!("What is fact {}?", i % corpus),
                oracle_chunk_id: format!("c#{}", i % corpus),
                answer: format!("Fact {}", i % corpus),
            })
            .collect()
    }

    #[test]
    fn boundaries_of_p_oracle() {
        let kb = kb(10);
        let all = build_raft_dataset(
            &pairs(30, 10),
            &kb,
            &RaftConfig {
                k: 4,
                p_oracle: 1.0,
                seed: 3,
            },
        )
        .unwrap();
        assert!(all.iter().all(|e| e.oracle_present && e.docs.len() == 4));
        let none = build_raft_dataset(
            &pairs(30, 10),
            &kb,
            &RaftConfig {
                k: 4,
                p_oracle: 0.0,
                seed: 3,
            },
        )
        .unwrap();
        for (e, p) in none.iter().zip(pairs(30, 10)) {
            assert!(!e.oracle_present);
            assert!(e.oracle_position.is_none());
            assert!(!e.distractor_ids.contains(&p.oracle_chunk_id));
            assert_eq!(e.docs.len(), 4);
        }
    }

    #[test]
    fn oracle_sits_at_recorded_position() {
        let kb = kb(8);
        let ps = pairs(40, 8);
        let out = build_raft_dataset(
            &ps,
            &kb,
            &RaftConfig {
                k: 3,
                p_oracle: 0.5,
                seed: 9,
            },
        )
        .unwrap();
        for (e, p) in out.iter().zip(&ps) {
            if let Some(pos) = e.oracle_position {
                assert_eq!(e.docs[pos], kb.chunk(&p.oracle_chunk_id).unwrap().text);
                assert!(e
                    .answer
                    .starts_with(&format!("Reasoning: according to source [{}]", pos + 1)));
            }
            assert!(e.answer.ends_with(&format!("Answer: {}", p.answer)));
        }
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        let err = build_raft_dataset(
            &pairs(1, 3),
            &kb(3),
            &RaftConfig {
                k: 4,
                p_oracle: 0.8,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::NotEnoughDistractors {
                needed: 4,
                available: 2
            }
        ));
    }

    #[test]
    fn jsonl_has_exactly_five_keys() {
        let out = build_raft_dataset(
            &pairs(1, 5),
            &kb(5),
            &RaftConfig {
                k: 2,
                p_oracle: 1.0,
                seed: 0,
            },
        )
        .unwrap();
        let v = serde_json::to_value(&out[0]).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            vec![
                "answer",
                "docs",
                "oracle_position",
                "oracle_present",
                "question"
            ]
        );
    }
}
