use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{with_repair, AssessmentError};
use crate::backends::TextGenerator;
use crate::curriculum::{TopicNode, DEFAULT_PASS_THRESHOLD};
use crate::lesson::LessonDeck;
use crate::prompts::{render_slides, Prompt, Task};
use crate::text::{extract_json_object, sha256_hex};

pub const MCQ_OPTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
}

impl McqItem {
    fn problem(&self) -> Option<String> {
        if self.stem.trim().is_empty() {
            return Some("empty stem".into());
        }
        if self.options.len() != MCQ_OPTIONS {
            return Some(format!(
                "expected {MCQ_OPTIONS} options, got {}",
                self.options.len()
            ));
        }
        if self.options.iter().any(|o| o.trim().is_empty()) {
            return Some("empty option".into());
        }
        let distinct: HashSet<&str> = self.options.iter().map(|o| o.trim()).collect();
        if distinct.len() != MCQ_OPTIONS {
            return Some(format!("duplicate options in \"{}\"", self.stem));
        }
        if self.correct_index >= MCQ_OPTIONS {
            return Some(format!("correct_index {} out of range", self.correct_index));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizPaper {
    pub quiz_id: String,
    pub node_id: String,
    pub items: Vec<McqItem>,
    pub pass_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentItem {
    pub stem: String,
    pub options: Vec<String>,
}

/// The quiz as shown to the learner: no answer key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentQuiz {
    pub quiz_id: String,
    pub node_id: String,
    pub items: Vec<StudentItem>,
    pub pass_threshold: f64,
}

impl QuizPaper {
    pub fn student_view(&self) -> StudentQuiz {
        StudentQuiz {
            quiz_id: self.quiz_id.clone(),
            node_id: self.node_id.clone(),
            items: self
                .items
                .iter()
                .map(|i| StudentItem {
                    stem: i.stem.clone(),
                    options: i.options.clone(),
                })
                .collect(),
            pass_threshold: self.pass_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizConfig {
    pub n_items: usize,
    /// Same value as the course gating threshold.
    pub pass_threshold: f64,
    pub seed: u64,
}

impl Default for QuizConfig {
    fn default() -> Self {
        Self {
            n_items: 5,
            pass_threshold: DEFAULT_PASS_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Deserialize)]
struct QuizReply {
    items: Vec<McqItem>,
}

fn parse_quiz(text: &str, n: usize) -> Result<Vec<McqItem>, String> {
    let json = extract_json_object(text).ok_or("no JSON object in reply")?;
    let reply: QuizReply = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if reply.items.len() != n {
        return Err(format!("expected {n} items, got {}", reply.items.len()));
    }
    for item in &reply.items {
        if let Some(p) = item.problem() {
            return Err(p);
        }
    }
    Ok(reply.items)
}

/// Multiple-choice quiz over the frozen deck's slides. The prompt carries the
/// slide text and nothing else.
pub fn generate_quiz(
    node: &TopicNode,
    deck: &LessonDeck,
    gen: &dyn TextGenerator,
    cfg: &QuizConfig,
) -> Result<QuizPaper, AssessmentError> {
    if !deck.frozen {
        return Err(AssessmentError::NotFrozen);
    }
    if cfg.n_items == 0 {
        return Err(AssessmentError::InvalidParameter(
            "a quiz needs at least one item".into(),
        ));
    }
    if !(cfg.pass_threshold > 0.0 && cfg.pass_threshold <= 1.0) {
        return Err(AssessmentError::InvalidParameter(format!(
            "pass threshold {} is outside (0, 1]",
            cfg.pass_threshold
        )));
    }
    let prompt = Prompt::new(Task::Quiz)
        .field("topic", &node.title)
        .field("items", cfg.n_items)
        .body(render_slides(&deck.slides));
    let items = with_repair(gen, &prompt, cfg.seed, |t| parse_quiz(t, cfg.n_items))?
        .map_err(AssessmentError::MalformedQuiz)?;
    let quiz_id = sha256_hex(
        format!(
            "{}\0{}\0{}\0{}\0{}",
            deck.user_id, deck.node_id, deck.content_hash, cfg.n_items, cfg.seed
        )
        .as_bytes(),
    )[..16]
        .to_string();
    Ok(QuizPaper {
        quiz_id: format!("quiz-{quiz_id}"),
        node_id: node.id.clone(),
        items,
        pass_threshold: cfg.pass_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizGrade {
    pub correct: usize,
    pub total: usize,
    pub score: f64,
    pub passed: bool,
}

pub fn grade_quiz(paper: &QuizPaper, answers: &[usize]) -> Result<QuizGrade, AssessmentError> {
    if answers.len() != paper.items.len() {
        return Err(AssessmentError::LengthMismatch {
            expected: paper.items.len(),
            got: answers.len(),
        });
    }
    if let Some((index, &choice)) = answers.iter().enumerate().find(|(_, a)| **a >= MCQ_OPTIONS) {
        return Err(AssessmentError::InvalidAnswer { index, choice });
    }
    let correct = paper
        .items
        .iter()
        .zip(answers)
        .filter(|(item, a)| item.correct_index == **a)
        .count();
    let score = correct as f64 / paper.items.len() as f64;
    Ok(QuizGrade {
        correct,
        total: paper.items.len(),
        score,
        passed: score >= paper.pass_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, GenerationRequest, GenerationResponse, MockGenerator};
    use crate::clock::SteppingClock;
    use crate::lesson::{generate_deck, DeckConfig};

    fn frozen_deck() -> (TopicNode, LessonDeck) {
        let node = TopicNode::new("bs.intro", "Binary Search", &[]);
        let mut d = generate_deck(
            &node,
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        d.frozen = true;
        (node, d)
    }

    #[test]
    fn mock_quiz_has_valid_items() {
        let (node, deck) = frozen_deck();
        let q =
            generate_quiz(&node, &deck, &MockGenerator::new(3), &QuizConfig::default()).unwrap();
        assert_eq!(q.items.len(), 5);
        assert!(q.items.iter().all(|i| i.problem().is_none()));
        let view = serde_json::to_value(q.student_view()).unwrap();
        assert!(!view.to_string().contains("correct_index"));
    }

    #[test]
    fn zero_items_is_rejected() {
        let (node, deck) = frozen_deck();
        let cfg = QuizConfig {
            n_items: 0,
            ..QuizConfig::default()
        };
        assert!(matches!(
            generate_quiz(&node, &deck, &MockGenerator::new(3), &cfg),
            Err(AssessmentError::InvalidParameter(_))
        ));
    }

    struct DuplicateOptions;
    impl TextGenerator for DuplicateOptions {
        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            Ok(GenerationResponse {
                text: r#"{"items":[{"stem":"s","options":["a","a","b","c"],"correct_index":0}]}"#
                    .into(),
                finish: "stop".into(),
            })
        }
    }

    #[test]
    fn duplicate_options_are_malformed() {
        let (node, deck) = frozen_deck();
        let cfg = QuizConfig {
            n_items: 1,
            ..QuizConfig::default()
        };
        assert!(matches!(
            generate_quiz(&node, &deck, &DuplicateOptions, &cfg),
            Err(AssessmentError::MalformedQuiz(_))
        ));
    }

    fn paper(n: usize) -> QuizPaper {
        QuizPaper {
            quiz_id: "q".into(),
            node_id: "n".into(),
            items: (0..n)
                .map(|i| McqItem {
                    stem: format!("s{i}"),
                    options: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                    correct_index: i % 4,
                })
                .collect(),
            pass_threshold: 0.7,
        }
    }

    #[test]
    fn grading_by_hand() {
        let p = paper(5);
        let all = grade_quiz(&p, &[0, 1, 2, 3, 0]).unwrap();
        assert_eq!(all.score, 1.0);
        assert!(all.passed);
        let three = grade_quiz(&p, &[0, 1, 2, 0, 1]).unwrap();
        assert_eq!(three.score, 0.6);
        assert!(!three.passed);
        assert!(matches!(
            grade_quiz(&p, &[0]),
            Err(AssessmentError::LengthMismatch { .. })
        ));
        assert!(matches!(
            grade_quiz(&p, &[0, 1, 2, 3, 9]),
            Err(AssessmentError::InvalidAnswer { .. })
        ));
    }
}
