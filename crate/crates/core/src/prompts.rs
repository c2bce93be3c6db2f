//! Prompt construction for every generation task.
//!
//! A user message starts with a block of `key: value` header lines, then a
//! blank line, then free-form material (slide text, retrieved passages). The
//! header keeps parameters machine-readable so the deterministic mock
//! generator can honor them; real models read it as ordinary instructions.

use crate::backends::{GenerationRequest, Message, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Roadmap,
    Slides,
    Summarize,
    Doubt,
    Quiz,
    Notes,
    ExamQuestion,
    Feedback,
    Answer,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Roadmap => "roadmap",
            Task::Slides => "slides",
            Task::Summarize => "summarize",
            Task::Doubt => "doubt",
            Task::Quiz => "quiz",
            Task::Notes => "notes",
            Task::ExamQuestion => "exam_question",
            Task::Feedback => "feedback",
            Task::Answer => "answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "roadmap" => Task::Roadmap,
            "slides" => Task::Slides,
            "summarize" => Task::Summarize,
            "doubt" => Task::Doubt,
            "quiz" => Task::Quiz,
            "notes" => Task::Notes,
            "exam_question" => Task::ExamQuestion,
            "feedback" => Task::Feedback,
            "answer" => Task::Answer,
            _ => return None,
        })
    }

    fn instructions(self) -> &'static str {
        match self {
            Task::Roadmap => concat!(
                "You design course roadmaps. Reply with one JSON object: ",
                r#"{"course_id": str, "title": str, "nodes": [{"id": str, "title": str, "summary": str, "prerequisites": [str]}]}. "#,
                "Prerequisites must reference node ids of the same roadmap and form no cycle. ",
                "Start from a single introductory node and respect min_nodes and max_nodes."
            ),
            Task::Slides => concat!(
                "You write lecture slides. Reply with one JSON object: ",
                r#"{"slides": [{"ordinal": int, "title": str, "bullets": [str], "body": str}]}. "#,
                "Produce exactly the ordinals from first_ordinal to last_ordinal. ",
                "Ground the content in the provided context passages."
            ),
            Task::Summarize => concat!(
                "You turn slide text into a short spoken explanation. ",
                "Reply with plain text of at most max_chars characters."
            ),
            Task::Doubt => concat!(
                "You are a tutor answering a student's question during a lecture. ",
                "Use the current slide and the numbered sources. ",
                "Reply with plain text of at most max_chars characters."
            ),
            Task::Quiz => concat!(
                "You write multiple-choice questions using only the lecture slides given. ",
                "Reply with one JSON object: ",
                r#"{"items": [{"stem": str, "options": [str, str, str, str], "correct_index": int}]}. "#,
                "Options must be pairwise distinct."
            ),
            Task::Notes => concat!(
                "You write revision notes as question and answer pairs for one topic. ",
                r#"Reply with one JSON object: {"pairs": [{"question": str, "answer": str}]}."#
            ),
            Task::ExamQuestion => concat!(
                "You write one long-answer exam question about the given slide. ",
                r#"Reply with one JSON object: {"prompt": str, "reference_answer": str}."#
            ),
            Task::Feedback => concat!(
                "You give a student specific feedback on a long answer compared with the reference. ",
                "Reply with plain text."
            ),
            Task::Answer => "Answer the question. Reply with plain text.",
        }
    }
}

/// A structured prompt: task, header fields, free-form body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub task: Task,
    pub fields: Vec<(String, String)>,
    pub body: String,
}

impl Prompt {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            fields: Vec::new(),
            body: String::new(),
        }
    }

    pub fn field(mut self, key: &str, value: impl ToString) -> Self {
        let value = value.to_string().replace(['\n', '\r'], " ");
        self.fields.push((key.to_string(), value));
        self
    }

    pub fn body(mut self, body: impl Into<String>) -> Self {
        self.body = body.into();
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.get(key).and_then(|v| v.trim().parse().ok())
    }

    pub fn render_user(&self) -> String {
        let mut out = format!("task: {}\n", self.task.as_str());
        for (k, v) in &self.fields {
            out.push_str(&format!("{k}: {v}\n"));
        }
        if !self.body.is_empty() {
            out.push('\n');
            out.push_str(&self.body);
        }
        out
    }

    pub fn to_request(&self, seed: u64) -> GenerationRequest {
        GenerationRequest::new(
            vec![
                Message::system(self.task.instructions()),
                Message::user(self.render_user()),
            ],
            seed,
        )
    }

    /// Builds a follow-up prompt asking the model to fix its previous reply.
    pub fn repair(&self, previous: &str, problem: &str) -> Prompt {
        let mut fixed = self.clone();
        fixed.fields.push(("repair".into(), "true".into()));
        fixed.body = format!(
            "{}\n\nYour previous reply was rejected: {}\nPrevious reply:\n{}\nReply again following the format exactly.",
            self.body, problem, previous
        );
        fixed
    }

    /// Recovers a prompt from the last user message of a request.
    pub fn parse_request(req: &GenerationRequest) -> Option<Prompt> {
        let user = req.messages.iter().rev().find(|m| m.role == Role::User)?;
        Self::parse(&user.content)
    }

    pub fn parse(text: &str) -> Option<Prompt> {
        let (header, body) = match text.split_once("\n\n") {
            Some((h, b)) => (h, b),
            None => (text, ""),
        };
        let mut lines = header.lines();
        let task = lines.next()?.strip_prefix("task: ")?;
        let task = Task::parse(task.trim())?;
        let fields = lines
            .filter_map(|l| l.split_once(": "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Some(Prompt {
            task,
            fields,
            body: body.to_string(),
        })
    }
}

/// Renders slides in the layout every slide-consuming prompt uses.
pub fn render_slides<'a>(slides: impl IntoIterator<Item = &'a crate::lesson::Slide>) -> String {
    let mut out = String::new();
    for s in slides {
        out.push_str(&format!("## Slide {}: {}\n", s.ordinal, s.title));
        for b in &s.bullets {
            out.push_str(&format!("- {b}\n"));
        }
        if !s.body.is_empty() {
            out.push_str(&s.body);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Renders numbered source passages: `[1] text`.
pub fn render_sources<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("[{}] {}\n", i + 1, crate::text::collapse_whitespace(t)))
        .collect()
}
