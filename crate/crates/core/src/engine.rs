//! Orchestration over the store: every operation the HTTP API exposes, as a
//! plain method. The server is a thin translation layer over [`Engine`].
//!
//! Layout under the store root:
//!
//! | document | key |
//! |---|---|
//! | course + roadmap | `courses/{course}` |
//! | progress | `users/{user}/{course}` |
//! | frozen deck | `decks/{user}/{node}` |
//! | narration | `decks/{user}/{node}.narration` |
//! | tutor session | `sessions/{user}/{node}` |
//! | quiz paper | `assessments/quizzes/{quiz}` |
//! | quiz attempts | `assessments/attempts/{user}/{node}` |
//! | exam paper | `assessments/exams/{exam}` |
//! | quiz / exam result | `reports/quizzes/{quiz}`, `reports/exams/{exam}` |

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{
    exam_report, generate_final_exam, generate_notes, generate_quiz, grade_exam, grade_quiz,
    AssessmentError, ExamQuestion, GradeReport, NotesDocument, QuizConfig, QuizGrade, QuizPaper,
    StudentQuiz,
};
use crate::backends::{
    BackendError, Embedder, HttpEmbedder, HttpGenerator, HttpSpeech, MockEmbedder, MockGenerator,
    MockSpeech, RetryPolicy, SpeechSynthesizer, TextGenerator,
};
use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::curriculum::{
    generate_roadmap, initial_progress, CourseRoadmap, CurriculumError, NodeState, ProgressRecord,
    QuizOutcome, RoadmapConfig,
};
use crate::lesson::{
    execute_narration, export_deck, fetch_deck, freeze_deck, generate_deck, summarize_deck,
    DeckConfig, ExportFormat, LessonDeck, LessonError, NarrationSegment,
};
use crate::retrieval::{KnowledgeBase, RetrievalError, CHUNKS_FILE, INDEX_FILE};
use crate::store::{KeyedLocks, Store, StoreError, Subtree};
use crate::text::sha256_hex;
use crate::tutor::{
    answer_doubt, load_session, open_session, save_session, Channel, DoubtConfig, DoubtExchange,
    Trigger, TutorError, TutorSession,
};

pub const DEFAULT_EXAM_QUESTIONS: usize = 5;
pub const DEFAULT_VOICE: &str = "default";

/// How an error should be reported to a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Invalid,
    Backend,
    Internal,
}

#[derive(Debug, Error)]
#[error("{detail}")]
pub struct EngineError {
    pub kind: ErrorKind,
    /// Stable machine-readable code, e.g. `NodeLocked`.
    pub code: &'static str,
    pub detail: String,
}

impl EngineError {
    pub fn new(kind: ErrorKind, code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            detail: detail.into(),
        }
    }

    fn not_found(code: &'static str, what: &str) -> Self {
        Self::new(ErrorKind::NotFound, code, format!("{what} not found"))
    }

    fn invalid(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::Invalid, "ValidationError", detail)
    }
}

pub type EngineResult<T> = Result<T, EngineError>;

impl From<BackendError> for EngineError {
    fn from(e: BackendError) -> Self {
        let code = match e {
            BackendError::Timeout(_) => "BackendTimeout",
            BackendError::Rejected(_) => "BackendRejected",
            BackendError::Unavailable(_) => "BackendUnavailable",
        };
        Self::new(ErrorKind::Backend, code, e.to_string())
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidKey(_) => Self::invalid(e.to_string()),
            StoreError::AlreadyExists(_) => {
                Self::new(ErrorKind::Conflict, "AlreadyExists", e.to_string())
            }
            _ => Self::new(ErrorKind::Internal, "StorageError", e.to_string()),
        }
    }
}

impl From<CurriculumError> for EngineError {
    fn from(e: CurriculumError) -> Self {
        match e {
            CurriculumError::Backend(b) => b.into(),
            CurriculumError::MalformedRoadmap(_) => {
                Self::new(ErrorKind::Invalid, "MalformedRoadmap", e.to_string())
            }
            CurriculumError::InvalidRoadmap(_) => {
                Self::new(ErrorKind::Invalid, "InvalidRoadmap", e.to_string())
            }
            CurriculumError::NodeLocked(_) => {
                Self::new(ErrorKind::Conflict, "NodeLocked", e.to_string())
            }
            CurriculumError::UnknownNode(_) => {
                Self::new(ErrorKind::NotFound, "UnknownNode", e.to_string())
            }
            CurriculumError::AlreadyPassed(_) => {
                Self::new(ErrorKind::Conflict, "AlreadyPassed", e.to_string())
            }
            CurriculumError::InvalidScore(_) | CurriculumError::InvalidThreshold(_) => {
                Self::invalid(e.to_string())
            }
        }
    }
}

impl From<LessonError> for EngineError {
    fn from(e: LessonError) -> Self {
        match e {
            LessonError::Backend(b) => b.into(),
            LessonError::Storage(s) => s.into(),
            LessonError::MalformedSlide(_) => {
                Self::new(ErrorKind::Backend, "MalformedSlide", e.to_string())
            }
            LessonError::AlreadyFrozen { .. } => {
                Self::new(ErrorKind::Conflict, "AlreadyFrozen", e.to_string())
            }
            LessonError::UnsupportedFormat(_) => {
                Self::new(ErrorKind::Invalid, "UnsupportedFormat", e.to_string())
            }
            LessonError::HashMismatch => {
                Self::new(ErrorKind::Internal, "HashMismatch", e.to_string())
            }
            LessonError::NotFrozen => Self::new(ErrorKind::Conflict, "NotFrozen", e.to_string()),
            LessonError::EmptyDeck | LessonError::InvalidParameter(_) => {
                Self::invalid(e.to_string())
            }
        }
    }
}

impl From<RetrievalError> for EngineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Backend(b) => b.into(),
            RetrievalError::DimensionMismatch { .. } => {
                Self::new(ErrorKind::Internal, "DimensionMismatch", e.to_string())
            }
            _ => Self::new(ErrorKind::Internal, "RetrievalError", e.to_string()),
        }
    }
}

impl From<TutorError> for EngineError {
    fn from(e: TutorError) -> Self {
        match e {
            TutorError::Backend(b) => b.into(),
            TutorError::Retrieval(r) => r.into(),
            TutorError::Storage(s) => s.into(),
            TutorError::DeckMissing(_) => {
                Self::new(ErrorKind::NotFound, "DeckMissing", e.to_string())
            }
            TutorError::NodeLocked(_) => {
                Self::new(ErrorKind::Conflict, "NodeLocked", e.to_string())
            }
            TutorError::NotPlaying(_) => {
                Self::new(ErrorKind::Conflict, "NotPlaying", e.to_string())
            }
            TutorError::InvalidTransition { .. } => {
                Self::new(ErrorKind::Conflict, "InvalidTransition", e.to_string())
            }
            TutorError::EmptyQuestion => {
                Self::new(ErrorKind::Invalid, "EmptyQuestion", e.to_string())
            }
        }
    }
}

impl From<AssessmentError> for EngineError {
    fn from(e: AssessmentError) -> Self {
        match e {
            AssessmentError::Backend(b) => b.into(),
            AssessmentError::MalformedQuiz(_)
            | AssessmentError::MalformedExam(_)
            | AssessmentError::MalformedNotes(_) => {
                Self::new(ErrorKind::Backend, "MalformedOutput", e.to_string())
            }
            AssessmentError::NotFrozen => {
                Self::new(ErrorKind::Conflict, "NotFrozen", e.to_string())
            }
            AssessmentError::DeckMissing(_) => {
                Self::new(ErrorKind::NotFound, "DeckMissing", e.to_string())
            }
            AssessmentError::CourseIncomplete(_) => {
                Self::new(ErrorKind::Conflict, "CourseIncomplete", e.to_string())
            }
            AssessmentError::Metric(_) => {
                Self::new(ErrorKind::Internal, "MetricError", e.to_string())
            }
            AssessmentError::InvalidParameter(_)
            | AssessmentError::LengthMismatch { .. }
            | AssessmentError::InvalidAnswer { .. }
            | AssessmentError::EmptyReference => Self::invalid(e.to_string()),
        }
    }
}

/// The four model services. Generator and summarizer share a contract.
#[derive(Clone)]
pub struct Backends {
    pub gen: Arc<dyn TextGenerator>,
    pub sum: Arc<dyn TextGenerator>,
    pub emb: Arc<dyn Embedder>,
    pub tts: Arc<dyn SpeechSynthesizer>,
}

impl Backends {
    pub fn mock(seed: u64) -> Self {
        Self {
            gen: Arc::new(MockGenerator::new(seed)),
            sum: Arc::new(MockGenerator::new(seed.wrapping_add(1))),
            emb: Arc::new(MockEmbedder),
            tts: Arc::new(MockSpeech),
        }
    }

    /// HTTP clients for configured URLs, mocks for the rest.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, BackendError> {
        let mut b = Self::mock(cfg.seed);
        let policy = RetryPolicy::default();
        let key = cfg.api_key.clone();
        if let Some(u) = &cfg.gen_url {
            b.gen = Arc::new(HttpGenerator::new(u, key.clone(), policy.clone()));
        }
        if let Some(u) = &cfg.sum_url {
            b.sum = Arc::new(HttpGenerator::new(u, key.clone(), policy.clone()));
        }
        if let Some(u) = &cfg.emb_url {
            b.emb = Arc::new(HttpEmbedder::connect(u, key.clone(), policy.clone())?);
        }
        if let Some(u) = &cfg.tts_url {
            b.tts = Arc::new(HttpSpeech::new(u, key, policy));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseRecord {
    pub course_id: String,
    pub title: String,
    pub syllabus: Option<String>,
    pub roadmap: CourseRoadmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuizRecord {
    user_id: String,
    course_id: String,
    paper: QuizPaper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizSubmission {
    pub quiz_id: String,
    pub grade: QuizGrade,
    pub outcome: QuizOutcome,
    pub progress: ProgressRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExamRecord {
    exam_id: String,
    user_id: String,
    course_id: String,
    questions: Vec<ExamQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamPaperQuestion {
    pub question_id: String,
    pub node_id: String,
    pub prompt: String,
}

/// The exam as shown to the learner: no reference answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamPaper {
    pub exam_id: String,
    pub course_id: String,
    pub questions: Vec<ExamPaperQuestion>,
}

pub struct Engine {
    store: Store,
    backends: Backends,
    cfg: ServiceConfig,
    clock: Arc<dyn Clock>,
    kb: KnowledgeBase,
    locks: KeyedLocks,
}

/// Course id of a namespaced node id `{course}.{local}`.
fn course_of(node_id: &str) -> EngineResult<&str> {
    node_id
        .split_once('.')
        .map(|(c, _)| c)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| EngineError::not_found("UnknownNode", &format!("node {node_id}")))
}

fn short_hash(parts: &[&str]) -> String {
    sha256_hex(parts.join("\0").as_bytes())[..16].to_string()
}

impl Engine {
    pub fn new(
        store: Store,
        backends: Backends,
        cfg: ServiceConfig,
        clock: Arc<dyn Clock>,
    ) -> EngineResult<Self> {
        cfg.validate()
            .map_err(|e| EngineError::invalid(e.to_string()))?;
        let dir = Self::index_dir_for(&store, &cfg);
        let kb = if dir.join(CHUNKS_FILE).exists() {
            let kb = KnowledgeBase::load(&dir)?;
            if kb.index().dim() != backends.emb.dim() {
                return Err(RetrievalError::DimensionMismatch {
                    expected: backends.emb.dim(),
                    got: kb.index().dim(),
                }
                .into());
            }
            kb
        } else {
            KnowledgeBase::empty(backends.emb.dim())
        };
        Ok(Self {
            store,
            backends,
            cfg,
            clock,
            kb,
            locks: KeyedLocks::new(),
        })
    }

    fn index_dir_for(store: &Store, cfg: &ServiceConfig) -> PathBuf {
        cfg.index_dir
            .clone()
            .unwrap_or_else(|| store.subtree_dir(Subtree::Indexes))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    /// Replaces the retrieval corpus and persists it to the index directory.
    pub fn install_knowledge_base(&mut self, kb: KnowledgeBase) -> EngineResult<()> {
        if kb.index().dim() != self.backends.emb.dim() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.backends.emb.dim(),
                got: kb.index().dim(),
            }
            .into());
        }
        match &self.cfg.index_dir {
            Some(dir) => kb.save(dir)?,
            None => {
                let (chunks, index) = kb.encode()?;
                self.store.put_file(Subtree::Indexes, INDEX_FILE, &index)?;
                self.store
                    .put_file(Subtree::Indexes, CHUNKS_FILE, &chunks)?;
            }
        }
        self.kb = kb;
        Ok(())
    }

    fn deck_config(&self) -> DeckConfig {
        DeckConfig {
            slides_per_deck: self.cfg.slides_per_deck,
            batch_size: self.cfg.gen_batch_size,
            seed: self.cfg.seed,
            ..DeckConfig::default()
        }
    }

    // Courses and progress.

    /// Generates a course. The id depends only on title and syllabus, so a
    /// repeated request returns the stored course.
    pub fn create_course(&self, title: &str, syllabus: Option<&str>) -> EngineResult<CourseRecord> {
        let cfg = RoadmapConfig {
            seed: self.cfg.seed,
            ..RoadmapConfig::default()
        };
        let roadmap = generate_roadmap(
            title,
            syllabus,
            self.backends.gen.as_ref(),
            &cfg,
            self.clock.as_ref(),
        )?;
        let course_id = roadmap.course_id.clone();
        self.locks.with(&format!("course:{course_id}"), || {
            if let Some(existing) = self
                .store
                .get::<CourseRecord>(Subtree::Courses, &[&course_id])?
            {
                return Ok(existing);
            }
            let record = CourseRecord {
                course_id: course_id.clone(),
                title: title.trim().to_string(),
                syllabus: syllabus
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty()),
                roadmap,
            };
            self.store.put(Subtree::Courses, &[&course_id], &record)?;
            Ok(record)
        })
    }

    pub fn course(&self, course_id: &str) -> EngineResult<CourseRecord> {
        self.store
            .get(Subtree::Courses, &[course_id])?
            .ok_or_else(|| EngineError::not_found("UnknownCourse", &format!("course {course_id}")))
    }

    pub fn roadmap(&self, course_id: &str) -> EngineResult<CourseRoadmap> {
        Ok(self.course(course_id)?.roadmap)
    }

    fn progress_lock(user_id: &str, course_id: &str) -> String {
        format!("progress:{user_id}:{course_id}")
    }

    /// Loads progress, creating the initial record on first access. Caller
    /// holds the progress lock.
    fn load_progress(
        &self,
        user_id: &str,
        roadmap: &CourseRoadmap,
    ) -> EngineResult<ProgressRecord> {
        let key = [user_id, roadmap.course_id.as_str()];
        if let Some(p) = self.store.get(Subtree::Users, &key)? {
            return Ok(p);
        }
        let p = initial_progress(user_id, roadmap, self.clock.now())?;
        self.store.put(Subtree::Users, &key, &p)?;
        Ok(p)
    }

    fn save_progress(&self, p: &ProgressRecord) -> EngineResult<()> {
        self.store
            .put(Subtree::Users, &[&p.user_id, &p.course_id], p)?;
        Ok(())
    }

    pub fn progress(&self, user_id: &str, course_id: &str) -> EngineResult<ProgressRecord> {
        let roadmap = self.roadmap(course_id)?;
        self.locks
            .with(&Self::progress_lock(user_id, course_id), || {
                self.load_progress(user_id, &roadmap)
            })
    }

    fn node_roadmap(&self, node_id: &str) -> EngineResult<CourseRoadmap> {
        let roadmap = self.roadmap(course_of(node_id)?)?;
        if roadmap.node(node_id).is_none() {
            return Err(EngineError::not_found(
                "UnknownNode",
                &format!("node {node_id}"),
            ));
        }
        Ok(roadmap)
    }

    // Lessons.

    /// Returns the learner's frozen deck for a node, generating and freezing
    /// it on the first call, and opens (or resumes) the tutor session.
    pub fn start_node(&self, user_id: &str, node_id: &str) -> EngineResult<LessonDeck> {
        let roadmap = self.node_roadmap(node_id)?;
        let progress = self.progress(user_id, &roadmap.course_id)?;
        if progress.state(node_id) == Some(NodeState::Locked) {
            return Err(CurriculumError::NodeLocked(node_id.to_string()).into());
        }
        let deck = self.ensure_deck(user_id, &roadmap, node_id)?;
        self.locks.with(
            &Self::progress_lock(user_id, &roadmap.course_id),
            || -> EngineResult<()> {
                let mut progress = self.load_progress(user_id, &roadmap)?;
                self.locks.with(
                    &format!("session:{user_id}:{node_id}"),
                    || -> EngineResult<()> {
                        let existing = load_session(user_id, node_id, &self.store)?;
                        let session = open_session(
                            &mut progress,
                            Some(&deck),
                            node_id,
                            existing,
                            self.clock.now(),
                        )?;
                        save_session(&session, &self.store)?;
                        Ok(())
                    },
                )?;
                self.save_progress(&progress)
            },
        )?;
        Ok(deck)
    }

    fn ensure_deck(
        &self,
        user_id: &str,
        roadmap: &CourseRoadmap,
        node_id: &str,
    ) -> EngineResult<LessonDeck> {
        self.locks.with(&format!("deck:{user_id}:{node_id}"), || {
            if let Some(d) = fetch_deck(user_id, node_id, &self.store)? {
                return Ok(d);
            }
            let node = roadmap.node(node_id).expect("node checked by caller");
            let context: Vec<String> = if self.kb.is_empty() {
                Vec::new()
            } else {
                let query = format!("{} {}", node.title, node.summary);
                self.kb
                    .retrieve(&query, self.cfg.retrieval_k, self.backends.emb.as_ref())?
                    .iter()
                    .filter_map(|h| self.kb.chunk(&h.chunk_id).map(|c| c.text.clone()))
                    .collect()
            };
            let deck = generate_deck(
                node,
                user_id,
                self.backends.gen.as_ref(),
                &context,
                &self.deck_config(),
                self.clock.as_ref(),
            )?;
            Ok(freeze_deck(deck, &self.store)?)
        })
    }

    pub fn deck(&self, user_id: &str, node_id: &str) -> EngineResult<LessonDeck> {
        fetch_deck(user_id, node_id, &self.store)?.ok_or_else(|| {
            EngineError::not_found("DeckMissing", &format!("deck for {user_id}/{node_id}"))
        })
    }

    pub fn export_deck(&self, user_id: &str, node_id: &str, format: &str) -> EngineResult<Vec<u8>> {
        let format: ExportFormat = format.parse()?;
        Ok(export_deck(&self.deck(user_id, node_id)?, format)?)
    }

    /// Narration segments for the frozen deck, synthesized once and stored.
    pub fn narration(&self, user_id: &str, node_id: &str) -> EngineResult<Vec<NarrationSegment>> {
        let key_name = format!("{node_id}.narration");
        let key = [user_id, key_name.as_str()];
        self.locks.with(&format!("deck:{user_id}:{node_id}"), || {
            if let Some(s) = self.store.get(Subtree::Decks, &key)? {
                return Ok(s);
            }
            let deck = self.deck(user_id, node_id)?;
            let segments = summarize_deck(&deck, self.backends.sum.as_ref(), &self.deck_config())?;
            let segments = execute_narration(
                &segments,
                self.backends.tts.as_ref(),
                DEFAULT_VOICE,
                |_, _| {},
            )?;
            self.store.put_new(Subtree::Decks, &key, &segments)?;
            Ok(segments)
        })
    }

    // Tutor sessions.

    pub fn session(&self, user_id: &str, node_id: &str) -> EngineResult<TutorSession> {
        load_session(user_id, node_id, &self.store)?.ok_or_else(|| {
            EngineError::not_found(
                "SessionMissing",
                &format!("session for {user_id}/{node_id}"),
            )
        })
    }

    fn with_session<R>(
        &self,
        user_id: &str,
        node_id: &str,
        f: impl FnOnce(&mut TutorSession) -> EngineResult<R>,
    ) -> EngineResult<R> {
        self.locks
            .with(&format!("session:{user_id}:{node_id}"), || {
                let mut s = self.session(user_id, node_id)?;
                let out = f(&mut s)?;
                save_session(&s, &self.store)?;
                Ok(out)
            })
    }

    pub fn interrupt(
        &self,
        user_id: &str,
        node_id: &str,
        trigger: Trigger,
    ) -> EngineResult<TutorSession> {
        self.with_session(user_id, node_id, |s| {
            s.interrupt(trigger, self.clock.now())?;
            Ok(s.clone())
        })
    }

    pub fn resume(&self, user_id: &str, node_id: &str) -> EngineResult<TutorSession> {
        self.with_session(user_id, node_id, |s| {
            s.resume(self.clock.now())?;
            Ok(s.clone())
        })
    }

    pub fn advance(&self, user_id: &str, node_id: &str) -> EngineResult<TutorSession> {
        self.with_session(user_id, node_id, |s| {
            s.advance(self.clock.now())?;
            Ok(s.clone())
        })
    }

    pub fn doubt(
        &self,
        user_id: &str,
        node_id: &str,
        question: &str,
        channel: Channel,
    ) -> EngineResult<DoubtExchange> {
        let deck = self.deck(user_id, node_id)?;
        let cfg = DoubtConfig {
            k: self.cfg.retrieval_k,
            seed: self.cfg.seed,
            ..DoubtConfig::default()
        };
        self.with_session(user_id, node_id, |s| {
            Ok(answer_doubt(
                s,
                question,
                channel,
                &deck,
                self.backends.sum.as_ref(),
                &self.kb,
                self.backends.emb.as_ref(),
                &cfg,
                self.clock.now(),
            )?)
        })
    }

    // Assessment.

    /// Issues a quiz over the frozen deck. Each attempt gets a fresh seed.
    pub fn issue_quiz(&self, user_id: &str, node_id: &str) -> EngineResult<StudentQuiz> {
        let roadmap = self.node_roadmap(node_id)?;
        let progress = self.progress(user_id, &roadmap.course_id)?;
        match progress.state(node_id) {
            Some(NodeState::Locked) => {
                return Err(CurriculumError::NodeLocked(node_id.to_string()).into())
            }
            Some(NodeState::Passed) => {
                return Err(CurriculumError::AlreadyPassed(node_id.to_string()).into())
            }
            _ => {}
        }
        let deck = self.deck(user_id, node_id)?;
        let node = roadmap.node(node_id).expect("checked above");
        let attempts: u64 = self
            .store
            .get(Subtree::Assessments, &["attempts", user_id, node_id])?
            .unwrap_or(0);
        let cfg = QuizConfig {
            pass_threshold: self.cfg.gating_threshold,
            seed: self.cfg.seed.wrapping_add(attempts),
            ..QuizConfig::default()
        };
        let paper = generate_quiz(node, &deck, self.backends.gen.as_ref(), &cfg)?;
        let record = QuizRecord {
            user_id: user_id.to_string(),
            course_id: roadmap.course_id.clone(),
            paper,
        };
        self.store.put(
            Subtree::Assessments,
            &["quizzes", &record.paper.quiz_id],
            &record,
        )?;
        Ok(record.paper.student_view())
    }

    /// Grades a quiz and applies the outcome to the learner's progress.
    pub fn submit_quiz(&self, quiz_id: &str, answers: &[usize]) -> EngineResult<QuizSubmission> {
        let record: QuizRecord = self
            .store
            .get(Subtree::Assessments, &["quizzes", quiz_id])?
            .ok_or_else(|| EngineError::not_found("UnknownQuiz", &format!("quiz {quiz_id}")))?;
        let grade = grade_quiz(&record.paper, answers)?;
        let roadmap = self.roadmap(&record.course_id)?;
        let node_id = record.paper.node_id.as_str();
        self.locks.with(
            &Self::progress_lock(&record.user_id, &record.course_id),
            || {
                if self.store.exists(Subtree::Reports, &["quizzes", quiz_id])? {
                    return Err(EngineError::new(
                        ErrorKind::Conflict,
                        "QuizAlreadySubmitted",
                        format!("quiz {quiz_id} was already submitted"),
                    ));
                }
                let mut progress = self.load_progress(&record.user_id, &roadmap)?;
                let outcome = progress.record_quiz_result(
                    &roadmap,
                    node_id,
                    grade.score,
                    record.paper.pass_threshold,
                    self.clock.now(),
                )?;
                let submission = QuizSubmission {
                    quiz_id: quiz_id.to_string(),
                    grade,
                    outcome,
                    progress,
                };
                // Counter first: if we stop before the report lands, the next
                // quiz gets a fresh seed and this one is still submittable.
                let attempts_key = ["attempts", record.user_id.as_str(), node_id];
                let attempts: u64 = self
                    .store
                    .get(Subtree::Assessments, &attempts_key)?
                    .unwrap_or(0);
                self.store
                    .put(Subtree::Assessments, &attempts_key, &(attempts + 1))?;
                self.store
                    .put_new(Subtree::Reports, &["quizzes", quiz_id], &submission)?;
                self.save_progress(&submission.progress)?;
                Ok(submission)
            },
        )
    }

    /// Full quiz including the answer key. Not exposed over HTTP.
    pub fn quiz_paper(&self, quiz_id: &str) -> EngineResult<QuizPaper> {
        let record: QuizRecord = self
            .store
            .get(Subtree::Assessments, &["quizzes", quiz_id])?
            .ok_or_else(|| EngineError::not_found("UnknownQuiz", &format!("quiz {quiz_id}")))?;
        Ok(record.paper)
    }

    /// Exam questions with reference answers. Not exposed over HTTP.
    pub fn exam_questions(&self, exam_id: &str) -> EngineResult<Vec<ExamQuestion>> {
        let record: ExamRecord = self
            .store
            .get(Subtree::Assessments, &["exams", exam_id])?
            .ok_or_else(|| EngineError::not_found("UnknownExam", &format!("exam {exam_id}")))?;
        Ok(record.questions)
    }

    /// Question/answer notes over the decks of the nodes the learner passed.
    pub fn notes(&self, course_id: &str, user_id: &str) -> EngineResult<NotesDocument> {
        let roadmap = self.roadmap(course_id)?;
        let progress = self.progress(user_id, course_id)?;
        let mut decks = Vec::new();
        for id in progress.passed_nodes() {
            if let Some(d) = fetch_deck(user_id, &id, &self.store)? {
                decks.push(d);
            }
        }
        Ok(generate_notes(
            &roadmap,
            &decks,
            self.backends.gen.as_ref(),
            self.cfg.seed,
        )?)
    }

    pub fn issue_exam(
        &self,
        user_id: &str,
        course_id: &str,
        n_questions: usize,
    ) -> EngineResult<ExamPaper> {
        let roadmap = self.roadmap(course_id)?;
        let progress = self.progress(user_id, course_id)?;
        let mut decks = Vec::new();
        for n in &roadmap.nodes {
            if let Some(d) = fetch_deck(user_id, &n.id, &self.store)? {
                decks.push(d);
            }
        }
        let questions = generate_final_exam(
            &roadmap,
            &progress,
            &decks,
            self.backends.gen.as_ref(),
            n_questions,
            self.cfg.seed,
        )?;
        let exam_id = format!(
            "exam-{}",
            short_hash(&[
                user_id,
                course_id,
                &n_questions.to_string(),
                &self.cfg.seed.to_string()
            ])
        );
        let record = ExamRecord {
            exam_id: exam_id.clone(),
            user_id: user_id.to_string(),
            course_id: course_id.to_string(),
            questions,
        };
        self.store
            .put(Subtree::Assessments, &["exams", &exam_id], &record)?;
        Ok(ExamPaper {
            exam_id,
            course_id: course_id.to_string(),
            questions: record
                .questions
                .iter()
                .map(|q| ExamPaperQuestion {
                    question_id: q.question_id.clone(),
                    node_id: q.node_id.clone(),
                    prompt: q.prompt.clone(),
                })
                .collect(),
        })
    }

    pub fn submit_exam(&self, exam_id: &str, answers: &[String]) -> EngineResult<GradeReport> {
        let record: ExamRecord = self
            .store
            .get(Subtree::Assessments, &["exams", exam_id])?
            .ok_or_else(|| EngineError::not_found("UnknownExam", &format!("exam {exam_id}")))?;
        let threshold = self.cfg.grading_threshold;
        let grades = grade_exam(
            &record.questions,
            answers,
            self.backends.emb.as_ref(),
            threshold,
        )?;
        let report = exam_report(
            &record.questions,
            answers,
            &grades,
            self.backends.sum.as_ref(),
            threshold,
            self.cfg.seed,
        )?;
        self.locks.with(&format!("exam:{exam_id}"), || {
            match self
                .store
                .put_new(Subtree::Reports, &["exams", exam_id], &report)
            {
                Err(StoreError::AlreadyExists(_)) => Err(EngineError::new(
                    ErrorKind::Conflict,
                    "ExamAlreadySubmitted",
                    format!("exam {exam_id} was already submitted"),
                )),
                r => Ok(r?),
            }
        })?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppingClock;

    fn engine(dir: &std::path::Path) -> Engine {
        Engine::new(
            Store::open(dir).unwrap(),
            Backends::mock(7),
            ServiceConfig::default(),
            Arc::new(SteppingClock::default()),
        )
        .unwrap()
    }

    #[test]
    fn locked_start_is_conflict_and_root_start_freezes() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(dir.path());
        let course = e.create_course("Binary Search", None).unwrap();
        let roadmap = &course.roadmap;
        let locked = roadmap.nodes.iter().find(|n| !n.is_root()).unwrap();
        let err = e.start_node("u1", &locked.id).unwrap_err();
        assert_eq!((err.kind, err.code), (ErrorKind::Conflict, "NodeLocked"));
        let root = roadmap.roots().next().unwrap();
        let deck = e.start_node("u1", &root.id).unwrap();
        assert!(deck.frozen);
        assert_eq!(e.start_node("u1", &root.id).unwrap(), deck);
        let p = e.progress("u1", &course.course_id).unwrap();
        assert_eq!(p.state(&root.id), Some(NodeState::InProgress));
        assert_eq!(e.session("u1", &root.id).unwrap().position, 1);
    }

    #[test]
    fn unknown_ids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(dir.path());
        assert_eq!(e.roadmap("nope").unwrap_err().kind, ErrorKind::NotFound);
        assert_eq!(
            e.start_node("u", "nope.x").unwrap_err().kind,
            ErrorKind::NotFound
        );
        assert_eq!(
            e.submit_quiz("quiz-0", &[]).unwrap_err().code,
            "UnknownQuiz"
        );
    }
}
