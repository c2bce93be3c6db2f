//! Self-directed teaching engine: prerequisite-gated course roadmaps, frozen
//! per-learner lesson decks, narrated tutor sessions with doubt answering,
//! quizzes and similarity-graded exams, all grounded in a retrieval layer,
//! plus the evaluation harness for RAG answer quality.

pub mod assessment;
pub mod backends;
pub mod clock;
pub mod config;
pub mod curriculum;
pub mod demo;
pub mod engine;
pub mod lesson;
pub mod metrics;
pub mod prompts;
pub mod retrieval;
pub mod store;
pub mod text;
pub mod tutor;

pub use assessment::{GradeReport, QuizPaper};
pub use config::ServiceConfig;
pub use curriculum::{CourseRoadmap, ProgressRecord, TopicNode};
pub use engine::{Backends, Engine, EngineError, ErrorKind};
pub use lesson::{LessonDeck, NarrationSegment};
pub use metrics::MetricReport;
pub use retrieval::{DocumentChunk, EmbeddingIndex, RaftExample};
pub use store::Store;
pub use tutor::{DoubtExchange, TutorSession};
