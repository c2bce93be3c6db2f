//! Deterministic in-process backends.
//!
//! * [`MockGenerator`] is a template engine keyed on the prompt header (see
//!   [`crate::prompts`]). Its output is a pure function of the request
//!   messages and seed, and is schema-valid for every structured task.
//! * [`MockEmbedder`] maps each token to one of 256 buckets with 64-bit
//!   FNV-1a seeded by [`MOCK_EMBED_SEED`] and returns the L2-normalized count
//!   vector. Identical texts embed identically; token-disjoint texts without
//!   bucket collisions are orthogonal.
//! * [`MockSpeech`] reports `60 * chars` milliseconds and returns the bytes
//!   `MOCK-AUDIO:` followed by the UTF-8 text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{
    BackendError, Embedder, EmbeddingRequest, EmbeddingResponse, GenerationRequest,
    GenerationResponse, SpeechRequest, SpeechResponse, SpeechSynthesizer, TextGenerator,
};
use crate::prompts::{Prompt, Task};
use crate::text::{first_sentence, slugify, tokenize, truncate_at_sentence};

pub const MOCK_EMBED_DIM: usize = 256;
pub const MOCK_EMBED_SEED: u64 = 0x5eed_0000_0000_0001;
pub const MOCK_AUDIO_PREFIX: &[u8] = b"MOCK-AUDIO:";
pub const MOCK_MS_PER_CHAR: u64 = 60;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `seed` (little-endian) followed by `bytes`.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Bucket of a token in the mock embedding space.
pub fn mock_bucket(token: &str) -> usize {
    (fnv1a64(MOCK_EMBED_SEED, token.as_bytes()) % MOCK_EMBED_DIM as u64) as usize
}

#[derive(Debug, Clone, Default)]
pub struct MockEmbedder;

impl MockEmbedder {
    pub fn new() -> Self {
        Self
    }

    pub fn vector(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; MOCK_EMBED_DIM];
        for tok in tokenize(text) {
            v[mock_bucket(&tok)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        MOCK_EMBED_DIM
    }

    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        Ok(EmbeddingResponse {
            vectors: req.texts.iter().map(|t| Self::vector(t)).collect(),
            dim: MOCK_EMBED_DIM,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockSpeech;

impl SpeechSynthesizer for MockSpeech {
    fn synthesize(&self, req: &SpeechRequest) -> Result<SpeechResponse, BackendError> {
        if req.text.is_empty() {
            return Err(BackendError::Rejected("empty text".into()));
        }
        let mut audio = MOCK_AUDIO_PREFIX.to_vec();
        audio.extend_from_slice(req.text.as_bytes());
        Ok(SpeechResponse {
            audio,
            duration_ms: MOCK_MS_PER_CHAR * req.text.chars().count() as u64,
        })
    }
}

/// Template-driven generator. `seed` is mixed with the request seed.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    seed: u64,
}

const FACETS: &[&str] = &[
    "Overview",
    "Motivation",
    "Key Terms",
    "Core Idea",
    "Step by Step",
    "Worked Example",
    "Complexity",
    "Common Mistakes",
    "Variations",
    "Applications",
    "Edge Cases",
    "Comparisons",
    "Implementation Notes",
    "Practice",
    "Proof Sketch",
    "History",
    "Tooling",
    "Review",
    "Further Reading",
    "Summary",
];

const ROADMAP_TOPICS: &[(&str, &str)] = &[
    ("Foundations", "the vocabulary and background needed for"),
    ("Core Mechanics", "how the central procedure of"),
    ("Worked Problems", "solving typical exercises with"),
    ("Analysis", "reasoning about cost and correctness of"),
    ("Pitfalls", "frequent mistakes made when applying"),
    ("Applications", "real uses of"),
    ("Advanced Variants", "extensions and generalizations of"),
];

const VERBS: &[&str] = &["explains", "shows", "describes", "illustrates", "clarifies"];

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, req: &GenerationRequest) -> ChaCha8Rng {
        let mut bytes = Vec::new();
        for m in &req.messages {
            bytes.extend_from_slice(m.content.as_bytes());
            bytes.push(0);
        }
        ChaCha8Rng::seed_from_u64(fnv1a64(self.seed ^ req.seed, &bytes))
    }

    fn roadmap(&self, p: &Prompt, rng: &mut ChaCha8Rng) -> String {
        let course = p.get("course").unwrap_or("Course").to_string();
        let min = p.get_usize("min_nodes").unwrap_or(3).max(1);
        let max = p.get_usize("max_nodes").unwrap_or(40).max(min);
        let cap = max - 1;
        let lo = (min - 1).max(2).min(cap);
        let hi = (lo + 3).min(cap);
        let extra = rng.random_range(lo..=hi);
        let mut nodes = vec![json!({
            "id": "intro",
            "title": format!("Introduction to {course}"),
            "summary": format!("What {course} is and why it matters."),
            "prerequisites": [],
        })];
        let mut ids = vec!["intro".to_string()];
        for i in 0..extra {
            let (name, phrase) = match ROADMAP_TOPICS.get(i) {
                Some((n, p)) => (n.to_string(), p.to_string()),
                None => (
                    format!("Topic {}", i + 1),
                    "further material on".to_string(),
                ),
            };
            let id = slugify(&name);
            // Tree shape: every node hangs under one earlier node.
            let parent = if i == 0 {
                0
            } else {
                rng.random_range(0..ids.len())
            };
            nodes.push(json!({
                "id": id,
                "title": format!("{course}: {name}"),
                "summary": format!("Covers {phrase} {course}."),
                "prerequisites": [ids[parent]],
            }));
            ids.push(id);
        }
        json!({
            "course_id": slugify(&course),
            "title": course,
            "nodes": nodes,
        })
        .to_string()
    }

    fn slides(&self, p: &Prompt, rng: &mut ChaCha8Rng) -> String {
        let topic = p.get("topic").unwrap_or("the topic");
        let first = p.get_usize("first_ordinal").unwrap_or(1);
        let last = p.get_usize("last_ordinal").unwrap_or(first);
        let passages = parse_sources(&p.body);
        let slides: Vec<_> = (first..=last)
            .map(|ord| {
                let facet = FACETS[(ord - 1) % FACETS.len()];
                let verb = VERBS[rng.random_range(0..VERBS.len())];
                let bullets = vec![
                    format!("{facet} of {topic}: point {ord}.1"),
                    format!("Slide {ord} {verb} how {topic} behaves in practice"),
                    format!("Remember the {} detail of {topic}", facet.to_lowercase()),
                ];
                let mut body = format!(
                    "This slide {verb} the {} of {topic}. Work through the points above before moving on.",
                    facet.to_lowercase()
                );
                if !passages.is_empty() {
                    let src = &passages[(ord - 1) % passages.len()];
                    body.push_str(&format!(" From the course material: {}", first_sentence(src)));
                }
                json!({
                    "ordinal": ord,
                    "title": format!("{facet}: {topic}"),
                    "bullets": bullets,
                    "body": body,
                })
            })
            .collect();
        json!({ "slides": slides }).to_string()
    }

    fn summarize(&self, p: &Prompt) -> String {
        let max = p.get_usize("max_chars").unwrap_or(600);
        let passage = section(&p.body, "Passage:").unwrap_or(p.body.as_str());
        let mut sentences = passage.split_inclusive(['.', '!', '?']);
        let mut out = sentences.next().unwrap_or("").trim().to_string();
        if let Some(second) = sentences.next() {
            out.push(' ');
            out.push_str(second.trim());
        }
        let out = truncate_at_sentence(out.trim(), max);
        if out.is_empty() {
            format!("Let us look at {}.", p.get("topic").unwrap_or("this slide"))
        } else {
            out
        }
    }

    fn doubt(&self, p: &Prompt) -> String {
        let max = p.get_usize("max_chars").unwrap_or(600);
        let question = p.get("question").unwrap_or("your question");
        let sources = parse_sources(&p.body);
        let answer = match sources.first() {
            Some(src) => format!(
                "Good question about \"{question}\". According to source [1], {}",
                first_sentence(src)
            ),
            None => format!(
                "Good question about \"{question}\". The current slide covers this directly."
            ),
        };
        truncate_at_sentence(&answer, max)
    }

    fn quiz(&self, p: &Prompt, rng: &mut ChaCha8Rng) -> String {
        let n = p.get_usize("items").unwrap_or(5);
        let slides = parse_slides(&p.body);
        let items: Vec<_> = (0..n)
            .map(|j| {
                let (title, correct) = if slides.is_empty() {
                    ("the lecture".to_string(), format!("Statement {j} from the lecture"))
                } else {
                    let s = &slides[j % slides.len()];
                    let bullet = s.1.get((j / slides.len()) % s.1.len().max(1)).cloned();
                    (s.0.clone(), bullet.unwrap_or_else(|| format!("{} is covered", s.0)))
                };
                let mut options = vec![correct.clone()];
                for d in 1..=3 {
                    options.push(format!("{title} is unrelated to claim {}-{d}", j + 1));
                }
                options[1..].shuffle(rng);
                let correct_index = rng.random_range(0..4);
                options.swap(0, correct_index);
                json!({
                    "stem": format!("Question {}: which statement was covered under \"{title}\"?", j + 1),
                    "options": options,
                    "correct_index": correct_index,
                })
            })
            .collect();
        json!({ "items": items }).to_string()
    }

    fn notes(&self, p: &Prompt) -> String {
        let topic = p.get("topic").unwrap_or("the topic");
        let slides = parse_slides(&p.body);
        let mut pairs: Vec<_> = slides
            .iter()
            .take(3)
            .map(|(title, bullets)| {
                json!({
                    "question": format!("What does \"{title}\" cover?"),
                    "answer": bullets.join("; "),
                })
            })
            .collect();
        if pairs.is_empty() {
            pairs.push(json!({
                "question": format!("What is the main idea of {topic}?"),
                "answer": p.get("summary").unwrap_or(topic),
            }));
        }
        json!({ "pairs": pairs }).to_string()
    }

    fn exam_question(&self, p: &Prompt) -> String {
        let topic = p.get("topic").unwrap_or("the topic");
        let slides = parse_slides(&p.body);
        let body = section(&p.body, "Reference:").map(|s| s.trim().to_string());
        let (title, reference) = match slides.first() {
            Some((title, bullets)) => (title.clone(), body.unwrap_or_else(|| bullets.join(". "))),
            None => (
                topic.to_string(),
                format!("{topic} is explained in the lecture."),
            ),
        };
        json!({
            "prompt": format!("Explain \"{title}\" in your own words."),
            "reference_answer": reference,
        })
        .to_string()
    }

    fn feedback(&self, p: &Prompt) -> String {
        let question = p.get("question").unwrap_or("the question");
        let sim = p.get("similarity").unwrap_or("?");
        let reference = section(&p.body, "Reference:").unwrap_or("");
        format!(
            "Your answer to \"{question}\" reached similarity {sim}. Revisit this point: {}",
            first_sentence(reference)
        )
    }

    fn answer(&self, p: &Prompt) -> String {
        match parse_sources(&p.body).first() {
            Some(src) => first_sentence(src).to_string(),
            None => "I do not know.".to_string(),
        }
    }
}

impl TextGenerator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let prompt = Prompt::parse_request(req)
            .ok_or_else(|| BackendError::Rejected("mock generator needs a task header".into()))?;
        let mut rng = self.rng_for(req);
        let text = match prompt.task {
            Task::Roadmap => self.roadmap(&prompt, &mut rng),
            Task::Slides => self.slides(&prompt, &mut rng),
            Task::Summarize => self.summarize(&prompt),
            Task::Doubt => self.doubt(&prompt),
            Task::Quiz => self.quiz(&prompt, &mut rng),
            Task::Notes => self.notes(&prompt),
            Task::ExamQuestion => self.exam_question(&prompt),
            Task::Feedback => self.feedback(&prompt),
            Task::Answer => self.answer(&prompt),
        };
        Ok(GenerationResponse {
            text,
            finish: "stop".into(),
        })
    }
}

/// Text following a `label` line up to the next blank line.
fn section<'a>(body: &'a str, label: &str) -> Option<&'a str> {
    let start = body.find(label)? + label.len();
    let rest = body[start..].trim_start_matches([' ', '\n']);
    Some(rest.split("\n\n").next().unwrap_or(rest))
}

/// Numbered passages `[i] text`, in order.
fn parse_sources(body: &str) -> Vec<String> {
    body.lines()
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let (num, text) = rest.split_once("] ")?;
            num.parse::<usize>().ok()?;
            Some(text.to_string())
        })
        .collect()
}

/// `(title, bullets)` for every `## Slide N: title` block.
fn parse_slides(body: &str) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in body.lines() {
        if let Some(rest) = line.strip_prefix("## Slide ") {
            let title = rest.split_once(": ").map(|(_, t)| t).unwrap_or(rest);
            out.push((title.to_string(), Vec::new()));
        } else if let Some(b) = line.strip_prefix("- ") {
            if let Some(last) = out.last_mut() {
                last.1.push(b.to_string());
            }
        }
    }
    out
}
