//! Seeded end-to-end run against the mock backends: course, lessons with
//! narration and a doubt, quizzes (one failed and retaken), the final exam,
//! and the RAG evaluation over the bundled QA set.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assessment::GradeReport;
use crate::clock::SteppingClock;
use crate::config::ServiceConfig;
use crate::curriculum::NodeState;
use crate::engine::{Backends, Engine, EngineError, EngineResult, DEFAULT_EXAM_QUESTIONS};
use crate::lesson::{narration_plan, simulate_plan};
use crate::metrics::{evaluate_pipeline, render_table, EvalConfig, EvalItem, MetricReport};
use crate::retrieval::{
    chunk_document, clean_documents, ChunkConfig, Document, KnowledgeBase, QaPair, RagPipeline,
};
use crate::store::Store;
use crate::tutor::{Channel, DoubtExchange, SessionState, Trigger};

pub const DEMO_COURSE: &str = "Binary Search";
pub const DEMO_USER: &str = "demo-learner";

/// Synthesis is assumed to run at four times real time when simulating the
/// narration pipeline.
const SYNTH_SPEEDUP: u64 = 4;

const CORPUS: [(&str, &str); 10] = [
    ("big-o", include_str!("../data/corpus/big-o.txt")),
    (
        "binary-search",
        include_str!("../data/corpus/binary-search.txt"),
    ),
    (
        "binary-search-bounds",
        include_str!("../data/corpus/binary-search-bounds.txt"),
    ),
    (
        "dynamic-programming",
        include_str!("../data/corpus/dynamic-programming.txt"),
    ),
    ("graphs-bfs", include_str!("../data/corpus/graphs-bfs.txt")),
    ("graphs-dfs", include_str!("../data/corpus/graphs-dfs.txt")),
    (
        "hash-tables",
        include_str!("../data/corpus/hash-tables.txt"),
    ),
    ("heaps", include_str!("../data/corpus/heaps.txt")),
    ("merge-sort", include_str!("../data/corpus/merge-sort.txt")),
    ("quicksort", include_str!("../data/corpus/quicksort.txt")),
];

const QA: &str = include_str!("../data/qa.jsonl");

pub fn demo_corpus() -> Vec<Document> {
    clean_documents(CORPUS.iter().map(|(id, text)| Document::new(*id, *text)))
}

pub fn demo_qa() -> Vec<QaPair> {
    QA.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled QA set is valid"))
        .collect()
}

pub fn demo_knowledge_base(emb: &dyn crate::backends::Embedder) -> EngineResult<KnowledgeBase> {
    let mut chunks = Vec::new();
    for d in demo_corpus() {
        chunks.extend(chunk_document(&d, &ChunkConfig::default())?);
    }
    Ok(KnowledgeBase::build(chunks, emb)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LessonSummary {
    pub node_id: String,
    pub title: String,
    pub content_hash: String,
    pub slides: usize,
    pub narration_chars: usize,
    /// Simulated wall time with synthesis of the next segment overlapping
    /// playback of the current one.
    pub pipelined_ms: u64,
    pub sequential_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizAttempt {
    pub node_id: String,
    pub score: f64,
    pub passed: bool,
    pub newly_unlocked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub course_id: String,
    pub nodes: Vec<String>,
    pub lessons: Vec<LessonSummary>,
    pub doubt: Option<DoubtExchange>,
    pub quizzes: Vec<QuizAttempt>,
    pub exam: GradeReport,
    pub metrics: MetricReport,
    pub table: String,
}

impl DemoReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Runs the whole flow with a fresh store under `dir`.
pub fn run_demo(seed: u64, dir: &Path) -> EngineResult<DemoReport> {
    run_demo_on(seed, Store::open(dir)?)
}

/// Runs the flow against an already opened store. Steps that find their
/// documents already present reuse them, so a run can be repeated on a store
/// left behind by an interrupted one.
pub fn run_demo_on(seed: u64, store: Store) -> EngineResult<DemoReport> {
    let cfg = ServiceConfig {
        seed,
        data_dir: store.root().to_path_buf(),
        ..ServiceConfig::default()
    };
    let backends = Backends::mock(seed);
    let mut engine = Engine::new(
        store,
        backends.clone(),
        cfg.clone(),
        Arc::new(SteppingClock::default()),
    )?;
    engine.install_knowledge_base(demo_knowledge_base(backends.emb.as_ref())?)?;

    let course = engine.create_course(DEMO_COURSE, None)?;
    let course_id = course.course_id.clone();
    let mut lessons = Vec::new();
    let mut quizzes = Vec::new();
    let mut doubt = None;
    let mut failed_once = false;

    loop {
        let progress = engine.progress(DEMO_USER, &course_id)?;
        let Some(node_id) = progress
            .node_states
            .iter()
            .find(|(_, s)| matches!(s, NodeState::Unlocked | NodeState::InProgress))
            .map(|(id, _)| id.clone())
        else {
            break;
        };
        if !lessons.iter().any(|l: &LessonSummary| l.node_id == node_id) {
            let deck = engine.start_node(DEMO_USER, &node_id)?;
            let segments = engine.narration(DEMO_USER, &node_id)?;
            let plan = narration_plan(&segments)?;
            let play: Vec<u64> = segments.iter().map(|s| s.est_duration_ms).collect();
            let synth: Vec<u64> = play.iter().map(|p| p / SYNTH_SPEEDUP).collect();
            let timeline = simulate_plan(&plan, &synth, &play)?;
            if doubt.is_none() {
                // A rerun may find the session already paused for this doubt.
                let session = engine.session(DEMO_USER, &node_id)?;
                if session.state == SessionState::Playing {
                    if session.position == 1 {
                        engine.advance(DEMO_USER, &node_id)?;
                    }
                    engine.interrupt(DEMO_USER, &node_id, Trigger::WakeWord)?;
                }
                let title = &course
                    .roadmap
                    .node(&node_id)
                    .expect("node from progress")
                    .title;
                doubt = Some(engine.doubt(
                    DEMO_USER,
                    &node_id,
                    &format!("Why does {} need a sorted array?", title.to_lowercase()),
                    Channel::VoiceTranscript,
                )?);
                engine.resume(DEMO_USER, &node_id)?;
            }
            while engine.session(DEMO_USER, &node_id)?.state == SessionState::Playing {
                engine.advance(DEMO_USER, &node_id)?;
            }
            lessons.push(LessonSummary {
                node_id: node_id.clone(),
                title: course
                    .roadmap
                    .node(&node_id)
                    .map(|n| n.title.clone())
                    .unwrap_or_default(),
                content_hash: deck.content_hash.clone(),
                slides: deck.slides.len(),
                narration_chars: segments
                    .iter()
                    .map(|s| s.summary_text.chars().count())
                    .sum(),
                pipelined_ms: timeline.total_ms,
                sequential_ms: synth.iter().sum::<u64>() + play.iter().sum::<u64>(),
            });
        }
        let quiz = engine.issue_quiz(DEMO_USER, &node_id)?;
        let key = engine.quiz_paper(&quiz.quiz_id)?;
        let answers: Vec<usize> = key
            .items
            .iter()
            .map(|i| {
                if failed_once {
                    i.correct_index
                } else {
                    (i.correct_index + 1) % 4
                }
            })
            .collect();
        failed_once = true;
        let sub = engine.submit_quiz(&quiz.quiz_id, &answers)?;
        quizzes.push(QuizAttempt {
            node_id: node_id.clone(),
            score: sub.grade.score,
            passed: sub.outcome.passed,
            newly_unlocked: sub.outcome.newly_unlocked,
        });
    }

    let paper = engine.issue_exam(DEMO_USER, &course_id, DEFAULT_EXAM_QUESTIONS)?;
    let questions = engine.exam_questions(&paper.exam_id)?;
    let answers: Vec<String> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| match i % 5 {
            0 => q.reference_answer.to_uppercase(),
            1 => q.reference_answer.clone(),
            2 => String::new(),
            3 => "Hash tables resolve collisions with chaining.".to_string(),
            _ => {
                let words: Vec<&str> = q.reference_answer.split_whitespace().collect();
                words[..words.len().div_ceil(2)].join(" ")
            }
        })
        .collect();
    let exam = engine.submit_exam(&paper.exam_id, &answers)?;

    let kb = engine.knowledge_base();
    let pipeline = RagPipeline {
        kb,
        gen: backends.gen.as_ref(),
        emb: backends.emb.as_ref(),
        k: cfg.retrieval_k,
        seed,
    };
    let items: Vec<EvalItem> = demo_qa()
        .into_iter()
        .map(|q| EvalItem {
            question: q.question,
            reference: q.answer,
        })
        .collect();
    let eval_cfg = EvalConfig {
        relevance_threshold: cfg.relevance_threshold,
        ..EvalConfig::default()
    };
    let detail =
        evaluate_pipeline(&items, &pipeline, backends.emb.as_ref(), &eval_cfg).map_err(|e| {
            EngineError::new(
                crate::engine::ErrorKind::Internal,
                "MetricError",
                e.to_string(),
            )
        })?;

    Ok(DemoReport {
        seed,
        course_id,
        nodes: course.roadmap.nodes.iter().map(|n| n.id.clone()).collect(),
        lessons,
        doubt,
        quizzes,
        exam,
        table: render_table(&detail.report),
        metrics: detail.report,
    })
}
