use serde::{Deserialize, Serialize};

use super::{with_repair, AssessmentError};
use crate::backends::TextGenerator;
use crate::curriculum::CourseRoadmap;
use crate::lesson::LessonDeck;
use crate::prompts::{render_slides, Prompt, Task};
use crate::text::extract_json_object;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotePair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotesSection {
    pub node_id: String,
    pub title: String,
    pub pairs: Vec<NotePair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotesDocument {
    pub course_id: String,
    pub title: String,
    pub sections: Vec<NotesSection>,
}

#[derive(Deserialize)]
struct NotesReply {
    pairs: Vec<NotePair>,
}

fn parse_notes(text: &str) -> Result<Vec<NotePair>, String> {
    let json = extract_json_object(text).ok_or("no JSON object in reply")?;
    let reply: NotesReply = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let pairs: Vec<NotePair> = reply
        .pairs
        .into_iter()
        .filter(|p| !p.question.trim().is_empty() && !p.answer.trim().is_empty())
        .collect();
    if pairs.is_empty() {
        return Err("no usable question/answer pairs".into());
    }
    Ok(pairs)
}

/// One section of question/answer pairs per deck, in roadmap order. Callers
/// pass the decks of the nodes the learner has passed.
pub fn generate_notes(
    roadmap: &CourseRoadmap,
    decks: &[LessonDeck],
    gen: &dyn TextGenerator,
    seed: u64,
) -> Result<NotesDocument, AssessmentError> {
    let mut sections = Vec::new();
    for node in &roadmap.nodes {
        let Some(deck) = decks.iter().find(|d| d.node_id == node.id) else {
            continue;
        };
        let prompt = Prompt::new(Task::Notes)
            .field("topic", &node.title)
            .field("summary", &node.summary)
            .body(render_slides(&deck.slides));
        let pairs = with_repair(gen, &prompt, seed, parse_notes)?
            .map_err(AssessmentError::MalformedNotes)?;
        sections.push(NotesSection {
            node_id: node.id.clone(),
            title: node.title.clone(),
            pairs,
        });
    }
    Ok(NotesDocument {
        course_id: roadmap.course_id.clone(),
        title: roadmap.title.clone(),
        sections,
    })
}

/// One level-2 heading per section.
pub fn notes_markdown(notes: &NotesDocument) -> String {
    let mut out = format!("# Notes: {}\n\n", notes.title);
    for s in &notes.sections {
        out.push_str(&format!("## {}\n\n", s.title));
        for p in &s.pairs {
            out.push_str(&format!("**Q:** {}\n\n{}\n\n", p.question, p.answer));
        }
    }
    out
}
