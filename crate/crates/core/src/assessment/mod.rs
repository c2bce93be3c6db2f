//! Quizzes that gate progression, revision notes, and the final long-answer
//! exam graded by embedding similarity of case-folded text.

mod exam;
mod notes;
mod quiz;

use thiserror::Error;

use crate::backends::BackendError;
use crate::metrics::MetricError;

pub use exam::{
    exam_report, generate_final_exam, grade_exam, grade_long_answer, normalize_answer,
    ExamQuestion, GradeReport, LongAnswerGrade, QuestionGrade, DEFAULT_GRADING_THRESHOLD,
};
pub use notes::{generate_notes, notes_markdown, NotePair, NotesDocument, NotesSection};
pub use quiz::{
    generate_quiz, grade_quiz, McqItem, QuizConfig, QuizGrade, QuizPaper, StudentItem, StudentQuiz,
    MCQ_OPTIONS,
};

#[derive(Debug, Error)]
pub enum AssessmentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed quiz output: {0}")]
    MalformedQuiz(String),
    #[error("malformed exam output: {0}")]
    MalformedExam(String),
    #[error("malformed notes output: {0}")]
    MalformedNotes(String),
    #[error("invalid assessment parameter: {0}")]
    InvalidParameter(String),
    #[error("expected {expected} answers, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("answer {index} chooses option {choice}, which does not exist")]
    InvalidAnswer { index: usize, choice: usize },
    #[error("deck is not frozen")]
    NotFrozen,
    #[error("no frozen deck for node {0}")]
    DeckMissing(String),
    #[error("course is not complete: {0} nodes still to pass")]
    CourseIncomplete(usize),
    #[error("reference answer is empty")]
    EmptyReference,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Parses a JSON reply, asking the backend once for a repair when `parse`
/// rejects it.
pub(crate) fn with_repair<T>(
    gen: &dyn crate::backends::TextGenerator,
    prompt: &crate::prompts::Prompt,
    seed: u64,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Result<T, String>, BackendError> {
    let reply = gen.generate(&prompt.to_request(seed))?.text;
    match parse(&reply) {
        Ok(v) => Ok(Ok(v)),
        Err(problem) => {
            tracing::warn!(task = prompt.task.as_str(), %problem, "reply rejected, asking for a repair");
            let again = gen
                .generate(&prompt.repair(&reply, &problem).to_request(seed))?
                .text;
            Ok(parse(&again))
        }
    }
}
