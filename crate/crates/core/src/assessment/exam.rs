use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{with_repair, AssessmentError};
use crate::backends::{Embedder, EmbeddingRequest, TextGenerator};
use crate::curriculum::{CourseRoadmap, ProgressRecord};
use crate::lesson::LessonDeck;
use crate::metrics::cosine;
use crate::metrics::MetricError;
use crate::prompts::{render_slides, Prompt, Task};
use crate::text::{collapse_whitespace, extract_json_object, fold_case};

pub const DEFAULT_GRADING_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamQuestion {
    pub question_id: String,
    pub node_id: String,
    pub prompt: String,
    pub reference_answer: String,
}

#[derive(Deserialize)]
struct QuestionReply {
    prompt: String,
    reference_answer: String,
}

fn parse_question(text: &str) -> Result<(String, String), String> {
    let json = extract_json_object(text).ok_or("no JSON object in reply")?;
    let r: QuestionReply = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if r.prompt.trim().is_empty() || r.reference_answer.trim().is_empty() {
        return Err("prompt and reference_answer must be non-empty".into());
    }
    Ok((
        r.prompt.trim().to_string(),
        r.reference_answer.trim().to_string(),
    ))
}

/// Samples `n_questions` long-answer questions across the course.
///
/// With `ChaCha8Rng::seed_from_u64(seed)` the roadmap's node order is
/// shuffled, question `i` is assigned node `i mod |nodes|` (so any two
/// questions from a course of two or more nodes cover two nodes), and a
/// slide of that node's deck is drawn with `random_range`. The backend
/// writes the question and its reference answer from that slide.
pub fn generate_final_exam(
    roadmap: &CourseRoadmap,
    progress: &ProgressRecord,
    decks: &[LessonDeck],
    gen: &dyn TextGenerator,
    n_questions: usize,
    seed: u64,
) -> Result<Vec<ExamQuestion>, AssessmentError> {
    let remaining = progress.node_states.len() - progress.passed_nodes().len();
    if remaining > 0 || roadmap.nodes.is_empty() {
        return Err(AssessmentError::CourseIncomplete(remaining));
    }
    if n_questions == 0 {
        return Err(AssessmentError::InvalidParameter(
            "an exam needs at least one question".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..roadmap.nodes.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n_questions);
    for i in 0..n_questions {
        let node = &roadmap.nodes[order[i % order.len()]];
        let deck = decks
            .iter()
            .find(|d| d.node_id == node.id && !d.slides.is_empty())
            .ok_or_else(|| AssessmentError::DeckMissing(node.id.clone()))?;
        let slide = &deck.slides[rng.random_range(0..deck.slides.len())];
        let prompt = Prompt::new(Task::ExamQuestion)
            .field("topic", &node.title)
            .field("question_number", i + 1)
            .body(render_slides([slide]));
        let (text, reference) = with_repair(gen, &prompt, seed, parse_question)?
            .map_err(AssessmentError::MalformedExam)?;
        out.push(ExamQuestion {
            question_id: format!("q{}", i + 1),
            node_id: node.id.clone(),
            prompt: text,
            reference_answer: reference,
        });
    }
    Ok(out)
}

/// Case-folded, whitespace-collapsed form used before embedding.
pub fn normalize_answer(text: &str) -> String {
    collapse_whitespace(&fold_case(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongAnswerGrade {
    pub similarity: f64,
    pub passed: bool,
    /// The student answer was empty; similarity is 0 by rule.
    pub empty_answer: bool,
}

/// Cosine similarity of the embeddings of the normalized student and
/// reference answers; passes at `threshold`.
pub fn grade_long_answer(
    student: &str,
    reference: &str,
    emb: &dyn Embedder,
    threshold: f64,
) -> Result<LongAnswerGrade, AssessmentError> {
    let reference = normalize_answer(reference);
    if reference.is_empty() {
        return Err(AssessmentError::EmptyReference);
    }
    let student = normalize_answer(student);
    if student.is_empty() {
        return Ok(LongAnswerGrade {
            similarity: 0.0,
            passed: false,
            empty_answer: true,
        });
    }
    let resp = emb.embed(&EmbeddingRequest {
        texts: vec![student, reference],
    })?;
    if resp.vectors.len() != 2 {
        return Err(MetricError::LengthMismatch {
            left: 2,
            right: resp.vectors.len(),
        }
        .into());
    }
    let similarity = match cosine(&resp.vectors[0], &resp.vectors[1]) {
        Ok(s) => s,
        // Text made only of characters the embedder ignores.
        Err(MetricError::ZeroVector) => 0.0,
        Err(e) => return Err(e.into()),
    };
    Ok(LongAnswerGrade {
        similarity,
        passed: similarity >= threshold,
        empty_answer: false,
    })
}

pub fn grade_exam(
    questions: &[ExamQuestion],
    answers: &[String],
    emb: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<LongAnswerGrade>, AssessmentError> {
    if questions.len() != answers.len() {
        return Err(AssessmentError::LengthMismatch {
            expected: questions.len(),
            got: answers.len(),
        });
    }
    questions
        .iter()
        .zip(answers)
        .map(|(q, a)| grade_long_answer(a, &q.reference_answer, emb, threshold))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionGrade {
    pub question_id: String,
    pub similarity: f64,
    pub passed: bool,
    pub empty_answer: bool,
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub questions: Vec<QuestionGrade>,
    pub overall_score: f64,
    pub overall_passed: bool,
    pub grading_threshold: f64,
    pub feedback: String,
    /// False when the generation backend failed and only similarities are reported.
    pub feedback_available: bool,
}

/// Assembles the report. Feedback for failed questions comes from `gen`; if
/// any feedback call fails, the report keeps the grades and falls back to a
/// similarity-only summary.
pub fn exam_report(
    questions: &[ExamQuestion],
    submissions: &[String],
    grades: &[LongAnswerGrade],
    gen: &dyn TextGenerator,
    threshold: f64,
    seed: u64,
) -> Result<GradeReport, AssessmentError> {
    if questions.len() != grades.len() || questions.len() != submissions.len() {
        return Err(AssessmentError::LengthMismatch {
            expected: questions.len(),
            got: grades.len().min(submissions.len()),
        });
    }
    if questions.is_empty() {
        return Err(AssessmentError::InvalidParameter(
            "an exam needs at least one question".into(),
        ));
    }
    let mut feedback_available = true;
    let mut per_question: Vec<QuestionGrade> = Vec::with_capacity(questions.len());
    for ((q, answer), g) in questions.iter().zip(submissions).zip(grades) {
        let mut feedback = None;
        if !g.passed && feedback_available {
            let prompt = Prompt::new(Task::Feedback)
                .field("question", &q.prompt)
                .field("similarity", format!("{:.3}", g.similarity))
                .body(format!(
                    "Student answer:\n{answer}\n\nReference:\n{}",
                    q.reference_answer
                ));
            match gen.generate(&prompt.to_request(seed)) {
                Ok(r) => feedback = Some(r.text.trim().to_string()),
                Err(e) => {
                    tracing::warn!(error = %e, "feedback backend failed, reporting similarities only");
                    feedback_available = false;
                }
            }
        }
        per_question.push(QuestionGrade {
            question_id: q.question_id.clone(),
            similarity: g.similarity,
            passed: g.passed,
            empty_answer: g.empty_answer,
            feedback,
        });
    }
    if !feedback_available {
        for q in &mut per_question {
            q.feedback = None;
        }
    }
    let overall_score = grades.iter().map(|g| g.similarity).sum::<f64>() / grades.len() as f64;
    let failed: Vec<&QuestionGrade> = per_question.iter().filter(|q| !q.passed).collect();
    let mut summary = if failed.is_empty() {
        format!("Every answer reached the similarity threshold {threshold:.2}.")
    } else {
        let list: Vec<String> = failed
            .iter()
            .map(|q| format!("{} ({:.3})", q.question_id, q.similarity))
            .collect();
        format!(
            "Below the similarity threshold {threshold:.2}: {}.",
            list.join(", ")
        )
    };
    for q in &failed {
        if let Some(f) = &q.feedback {
            summary.push_str(&format!("\n{}: {f}", q.question_id));
        }
    }
    Ok(GradeReport {
        questions: per_question,
        overall_score,
        overall_passed: overall_score >= threshold,
        grading_threshold: threshold,
        feedback: summary,
        feedback_available,
    })
}
