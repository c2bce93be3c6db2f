use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bleu_tokens, cosine_or_zero, embed_all, is_relevant, rouge_l_tokens, rouge_n_tokens,
    MetricError, PrfScore, Smoothing,
};
use crate::backends::Embedder;
use crate::retrieval::{RagAnswer, RagPipeline, RetrievalError};
use crate::text::tokenize;

pub const AVG_BLEU_DEFINITION: &str = "arithmetic mean of bleu1, bleu2, bleu3 and bleu4";

/// Row labels of the summary table, in print order.
pub const TABLE_ROWS: [&str; 5] = [
    "ROUGE-1",
    "ROUGE-2",
    "ROUGE-L",
    "Average BLEU",
    "Cosine Similarity",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: String,
    pub reference: String,
}

/// Anything that answers a question from retrieved context.
pub trait QaSystem: Sync {
    fn ask(&self, question: &str) -> Result<RagAnswer, RetrievalError>;
}

impl QaSystem for RagPipeline<'_> {
    fn ask(&self, question: &str) -> Result<RagAnswer, RetrievalError> {
        self.answer(question)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub relevance_threshold: f64,
    pub smoothing: Smoothing,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            relevance_threshold: 0.5,
            smoothing: Smoothing::None,
        }
    }
}

/// Corpus-level means. Serialized keys are fixed; ROUGE values are F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub avg_bleu: f64,
    pub cosine_similarity: f64,
    pub relevance_rate: f64,
    pub hallucination_rate: f64,
    pub n_items: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub question: String,
    pub answer: String,
    pub rouge1: PrfScore,
    pub rouge2: PrfScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: PrfScore,
    pub bleu: [f64; 4],
    pub cosine: f64,
    pub relevant: bool,
}

/// Full evaluation output: the summary report plus per-item scores with
/// precision and recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDetail {
    pub report: MetricReport,
    pub avg_bleu_definition: String,
    pub relevance_threshold: f64,
    pub smoothing: Smoothing,
    pub items: Vec<ItemScores>,
    /// `(item index, message)` for every item that failed.
    pub failures: Vec<(usize, String)>,
}

fn score_item(
    item: &EvalItem,
    system: &dyn QaSystem,
    emb: &dyn Embedder,
    cfg: &EvalConfig,
) -> Result<ItemScores, MetricError> {
    let out = system.ask(&item.question)?;
    let cand = tokenize(&out.answer);
    let reference = tokenize(&item.reference);
    let refs = [reference.clone()];
    let mut bleu = [0.0; 4];
    for (i, b) in bleu.iter_mut().enumerate() {
        *b = bleu_tokens(&cand, &refs, i + 1, cfg.smoothing)?;
    }
    let mut texts = vec![out.answer.clone(), item.reference.clone()];
    texts.extend(out.retrieved.iter().cloned());
    let vecs = embed_all(emb, texts)?;
    Ok(ItemScores {
        question: item.question.clone(),
        answer: out.answer,
        rouge1: rouge_n_tokens(&cand, &reference, 1)?,
        rouge2: rouge_n_tokens(&cand, &reference, 2)?,
        rouge_l: rouge_l_tokens(&cand, &reference),
        bleu,
        cosine: cosine_or_zero(&vecs[0], &vecs[1])?,
        relevant: is_relevant(&vecs[0], &vecs[2..], cfg.relevance_threshold)?,
    })
}

/// Answers every question, scores it against its reference, and averages.
/// Items run in parallel; aggregation follows dataset order so the report is
/// bit-identical across runs. Failed items are counted in `errors` and left
/// out of the means.
pub fn evaluate_pipeline(
    dataset: &[EvalItem],
    system: &dyn QaSystem,
    emb: &dyn Embedder,
    cfg: &EvalConfig,
) -> Result<EvalDetail, MetricError> {
    if dataset.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let results: Vec<Result<ItemScores, MetricError>> = dataset
        .par_iter()
        .map(|item| score_item(item, system, emb, cfg))
        .collect();
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => items.push(s),
            Err(e) => {
                tracing::warn!(item = i, error = %e, "evaluation item failed");
                failures.push((i, e.to_string()));
            }
        }
    }
    let n = items.len();
    let mean = |f: &dyn Fn(&ItemScores) -> f64| {
        if n == 0 {
            0.0
        } else {
            items.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let bleu: [f64; 4] = std::array::from_fn(|k| mean(&|s| s.bleu[k]));
    let relevance_rate = mean(&|s| if s.relevant { 1.0 } else { 0.0 });
    let report = MetricReport {
        rouge1: mean(&|s| s.rouge1.f1),
        rouge2: mean(&|s| s.rouge2.f1),
        rouge_l: mean(&|s| s.rouge_l.f1),
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        avg_bleu: bleu.iter().sum::<f64>() / 4.0,
        cosine_similarity: mean(&|s| s.cosine),
        relevance_rate,
        hallucination_rate: if n == 0 { 0.0 } else { 1.0 - relevance_rate },
        n_items: n,
        errors: failures.len(),
    };
    Ok(EvalDetail {
        report,
        avg_bleu_definition: AVG_BLEU_DEFINITION.to_string(),
        relevance_threshold: cfg.relevance_threshold,
        smoothing: cfg.smoothing,
        items,
        failures,
    })
}

/// Plain-text summary table with exactly the five rows of [`TABLE_ROWS`].
pub fn render_table(report: &MetricReport) -> String {
    let values = [
        report.rouge1,
        report.rouge2,
        report.rouge_l,
        report.avg_bleu,
        report.cosine_similarity,
    ];
    let mut out = format!("{:<20}{}\n", "Metric", "Score");
    for (label, v) in TABLE_ROWS.iter().zip(values) {
        out.push_str(&format!("{label:<20}{v:.3}\n"));
    }
    out
}
