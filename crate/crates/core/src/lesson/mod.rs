//! Slide decks per (learner, node): batched generation, freezing, export, and
//! the narration scripts spoken over them.
//!
//! A deck is generated lazily the first time a learner opens a node, then
//! frozen in the store. The first writer wins, so every later fetch returns
//! the same bytes.

mod narration;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, TextGenerator};
use crate::clock::Clock;
use crate::curriculum::TopicNode;
use crate::prompts::{render_sources, Prompt, Task};
use crate::store::{Store, StoreError, Subtree};
use crate::text::{canonical_json, extract_json_object, sha256_hex, truncate_at_sentence};

pub use narration::{
    attach_audio, execute_narration, narration_plan, simulate_plan, NarrationPlan, PlanStep,
    PlanStepKind, SimulatedStep, Timeline,
};

pub const MIN_SLIDES: usize = 3;
pub const MAX_SLIDES: usize = 20;
/// Fallback speaking rate when the speech backend reports no duration.
pub const MS_PER_CHAR: u64 = 60;

#[derive(Debug, Error)]
pub enum LessonError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed slide output: {0}")]
    MalformedSlide(String),
    #[error("deck has no slides")]
    EmptyDeck,
    #[error("invalid lesson parameter: {0}")]
    InvalidParameter(String),
    #[error("deck for user {user_id} and node {node_id} is already frozen")]
    AlreadyFrozen { user_id: String, node_id: String },
    #[error("deck is not frozen")]
    NotFrozen,
    #[error("deck content hash does not match its slides")]
    HashMismatch,
    #[error("unsupported export format {0:?}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slide {
    pub ordinal: usize,
    pub title: String,
    pub bullets: Vec<String>,
    pub body: String,
}

impl Slide {
    fn problem(&self, expected_ordinal: usize) -> Option<String> {
        if self.ordinal != expected_ordinal {
            return Some(format!(
                "expected ordinal {expected_ordinal}, got {}",
                self.ordinal
            ));
        }
        if self.title.trim().is_empty() {
            return Some(format!("slide {} has an empty title", self.ordinal));
        }
        if self.body.trim().is_empty() && self.bullets.iter().all(|b| b.trim().is_empty()) {
            return Some(format!("slide {} has no content", self.ordinal));
        }
        None
    }

    /// Plain text for the summarizer: body first, then bullets as sentences.
    pub fn spoken_source(&self) -> String {
        let mut out = self.body.trim().to_string();
        for b in &self.bullets {
            let b = b.trim();
            if b.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(b);
            if !b.ends_with(['.', '!', '?']) {
                out.push('.');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LessonDeck {
    pub node_id: String,
    pub user_id: String,
    pub frozen: bool,
    pub slides: Vec<Slide>,
    pub content_hash: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Serialize)]
struct HashedContent<'a> {
    node_id: &'a str,
    slides: &'a [Slide],
    user_id: &'a str,
}

impl LessonDeck {
    /// SHA-256 of the canonical JSON of node id, user id and slides. Freezing
    /// and timestamps do not affect it.
    pub fn compute_hash(&self) -> String {
        let value = serde_json::to_value(HashedContent {
            node_id: &self.node_id,
            slides: &self.slides,
            user_id: &self.user_id,
        })
        .expect("deck content serializes");
        sha256_hex(canonical_json(&value).as_bytes())
    }

    pub fn verify_hash(&self) -> Result<(), LessonError> {
        if self.compute_hash() == self.content_hash {
            Ok(())
        } else {
            Err(LessonError::HashMismatch)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationSegment {
    pub slide_ordinal: usize,
    pub summary_text: String,
    pub audio_ref: Option<String>,
    pub est_duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckConfig {
    pub slides_per_deck: usize,
    pub batch_size: usize,
    pub max_narration_chars: usize,
    pub seed: u64,
}

impl Default for DeckConfig {
    fn default() -> Self {
        Self {
            slides_per_deck: 8,
            batch_size: 4,
            max_narration_chars: 600,
            seed: 0,
        }
    }
}

#[derive(Deserialize)]
struct SlideBatch {
    slides: Vec<Slide>,
}

fn parse_batch(text: &str, first: usize, last: usize) -> Result<Vec<Slide>, String> {
    let json = extract_json_object(text).ok_or("no JSON object in reply")?;
    let batch: SlideBatch = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if batch.slides.len() != last + 1 - first {
        return Err(format!(
            "expected {} slides, got {}",
            last + 1 - first,
            batch.slides.len()
        ));
    }
    for (i, s) in batch.slides.iter().enumerate() {
        if let Some(p) = s.problem(first + i) {
            return Err(p);
        }
    }
    Ok(batch.slides)
}

/// Generates an unfrozen deck in sequential batches of `cfg.batch_size`
/// slides. Each batch prompt carries the retrieved context passages and the
/// titles already produced.
pub fn generate_deck(
    node: &TopicNode,
    user_id: &str,
    gen: &dyn TextGenerator,
    context: &[String],
    cfg: &DeckConfig,
    clock: &dyn Clock,
) -> Result<LessonDeck, LessonError> {
    let n = cfg.slides_per_deck;
    if !(MIN_SLIDES..=MAX_SLIDES).contains(&n) {
        return Err(LessonError::InvalidParameter(format!(
            "slides_per_deck {n} is outside [{MIN_SLIDES}, {MAX_SLIDES}]"
        )));
    }
    if cfg.batch_size == 0 {
        return Err(LessonError::InvalidParameter(
            "batch_size must be at least 1".into(),
        ));
    }
    let sources = render_sources(context.iter().map(String::as_str));
    let mut slides: Vec<Slide> = Vec::with_capacity(n);
    let mut first = 1;
    while first <= n {
        let last = (first + cfg.batch_size - 1).min(n);
        let mut body = String::new();
        if !sources.is_empty() {
            body.push_str("Context:\n");
            body.push_str(&sources);
        }
        if !slides.is_empty() {
            body.push_str("\nAlready covered:\n");
            for s in &slides {
                body.push_str(&format!("{}. {}\n", s.ordinal, s.title));
            }
        }
        let prompt = Prompt::new(Task::Slides)
            .field("topic", &node.title)
            .field("summary", &node.summary)
            .field("total_slides", n)
            .field("first_ordinal", first)
            .field("last_ordinal", last)
            .body(body);
        let reply = gen.generate(&prompt.to_request(cfg.seed))?.text;
        let batch = match parse_batch(&reply, first, last) {
            Ok(b) => b,
            Err(problem) => {
                tracing::warn!(node = %node.id, %problem, "slide batch rejected, asking for a repair");
                let repaired = gen
                    .generate(&prompt.repair(&reply, &problem).to_request(cfg.seed))?
                    .text;
                parse_batch(&repaired, first, last).map_err(LessonError::MalformedSlide)?
            }
        };
        slides.extend(batch);
        first = last + 1;
    }
    let mut deck = LessonDeck {
        node_id: node.id.clone(),
        user_id: user_id.to_string(),
        frozen: false,
        slides,
        content_hash: String::new(),
        created_at: clock.now(),
    };
    deck.content_hash = deck.compute_hash();
    Ok(deck)
}

/// One narration segment per slide, each at most `cfg.max_narration_chars`.
/// An overlong reply is re-asked once and then cut at a sentence boundary.
pub fn summarize_deck(
    deck: &LessonDeck,
    sum: &dyn TextGenerator,
    cfg: &DeckConfig,
) -> Result<Vec<NarrationSegment>, LessonError> {
    if deck.slides.is_empty() {
        return Err(LessonError::EmptyDeck);
    }
    let max = cfg.max_narration_chars;
    if max == 0 {
        return Err(LessonError::InvalidParameter(
            "max_narration_chars must be positive".into(),
        ));
    }
    deck.slides
        .iter()
        .map(|slide| {
            let prompt = Prompt::new(Task::Summarize)
                .field("topic", &slide.title)
                .field("max_chars", max)
                .body(format!("Passage:\n{}", slide.spoken_source()));
            let mut text = sum
                .generate(&prompt.to_request(cfg.seed))?
                .text
                .trim()
                .to_string();
            if text.chars().count() > max {
                let problem = format!("the reply is longer than {max} characters");
                text = sum
                    .generate(&prompt.repair(&text, &problem).to_request(cfg.seed))?
                    .text
                    .trim()
                    .to_string();
                if text.chars().count() > max {
                    text = truncate_at_sentence(&text, max);
                }
            }
            let chars = text.chars().count() as u64;
            Ok(NarrationSegment {
                slide_ordinal: slide.ordinal,
                summary_text: text,
                audio_ref: None,
                est_duration_ms: chars * MS_PER_CHAR,
            })
        })
        .collect()
}

fn deck_key<'a>(user_id: &'a str, node_id: &'a str) -> [&'a str; 2] {
    [user_id, node_id]
}

/// Marks the deck frozen and persists it under (user, node). Fails if a deck
/// is already stored there.
pub fn freeze_deck(mut deck: LessonDeck, store: &Store) -> Result<LessonDeck, LessonError> {
    let already = || LessonError::AlreadyFrozen {
        user_id: deck.user_id.clone(),
        node_id: deck.node_id.clone(),
    };
    if deck.frozen {
        return Err(already());
    }
    if deck.slides.is_empty() {
        return Err(LessonError::EmptyDeck);
    }
    deck.verify_hash()?;
    deck.frozen = true;
    match store.put_new(
        Subtree::Decks,
        &deck_key(&deck.user_id, &deck.node_id),
        &deck,
    ) {
        Ok(()) => Ok(deck),
        Err(StoreError::AlreadyExists(_)) => {
            deck.frozen = false;
            Err(already())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn fetch_deck(
    user_id: &str,
    node_id: &str,
    store: &Store,
) -> Result<Option<LessonDeck>, LessonError> {
    let deck: Option<LessonDeck> = store.get(Subtree::Decks, &deck_key(user_id, node_id))?;
    if let Some(d) = &deck {
        d.verify_hash()?;
    }
    Ok(deck)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Markdown,
}

impl FromStr for ExportFormat {
    type Err = LessonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "markdown" => Ok(ExportFormat::Markdown),
            other => Err(LessonError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Json => "json",
            ExportFormat::Markdown => "markdown",
        })
    }
}

/// Markdown layout: a level-1 title, then one level-2 heading per slide with
/// its bullets as list items and the body as a paragraph.
pub fn deck_markdown(deck: &LessonDeck) -> String {
    let mut out = format!("# Lesson {}\n\n", deck.node_id);
    for s in &deck.slides {
        out.push_str(&format!("## {}. {}\n\n", s.ordinal, s.title));
        for b in &s.bullets {
            out.push_str(&format!("- {b}\n"));
        }
        if !s.bullets.is_empty() {
            out.push('\n');
        }
        if !s.body.is_empty() {
            out.push_str(&s.body);
            out.push_str("\n\n");
        }
    }
    out
}

pub fn export_deck(deck: &LessonDeck, format: ExportFormat) -> Result<Vec<u8>, LessonError> {
    if !deck.frozen {
        return Err(LessonError::NotFrozen);
    }
    Ok(match format {
        ExportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(deck).expect("deck serializes");
            v.push(b'\n');
            v
        }
        ExportFormat::Markdown => deck_markdown(deck).into_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::backends::{GenerationRequest, GenerationResponse, MockGenerator};
    use crate::clock::SteppingClock;

    fn node() -> TopicNode {
        TopicNode::new("bs.intro", "Binary Search", &[])
    }

    struct Counting {
        inner: MockGenerator,
        calls: AtomicUsize,
    }

    impl TextGenerator for Counting {
        fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.generate(req)
        }
    }

    #[test]
    fn default_deck_has_eight_valid_slides() {
        let d = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        assert_eq!(d.slides.len(), 8);
        for (i, s) in d.slides.iter().enumerate() {
            assert!(s.problem(i + 1).is_none());
        }
        let again = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        assert_eq!(d.content_hash, again.content_hash);
    }

    #[test]
    fn batches_of_three_make_three_calls() {
        let gen = Counting {
            inner: MockGenerator::new(1),
            calls: AtomicUsize::new(0),
        };
        let cfg = DeckConfig {
            batch_size: 3,
            ..DeckConfig::default()
        };
        let d = generate_deck(&node(), "u", &gen, &[], &cfg, &SteppingClock::default()).unwrap();
        assert_eq!(gen.calls.load(Ordering::SeqCst), 3);
        let ords: Vec<_> = d.slides.iter().map(|s| s.ordinal).collect();
        assert_eq!(ords, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn context_reaches_slide_bodies() {
        let ctx = vec!["Binary search needs a sorted array. It then halves.".to_string()];
        let d = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &ctx,
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        assert!(d.slides[0]
            .body
            .contains("Binary search needs a sorted array."));
    }

    #[test]
    fn slide_count_bounds_are_enforced() {
        for n in [2, 21] {
            let cfg = DeckConfig {
                slides_per_deck: n,
                ..DeckConfig::default()
            };
            assert!(matches!(
                generate_deck(
                    &node(),
                    "u",
                    &MockGenerator::new(1),
                    &[],
                    &cfg,
                    &SteppingClock::default()
                ),
                Err(LessonError::InvalidParameter(_))
            ));
        }
    }

    struct Garbage;
    impl TextGenerator for Garbage {
        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            Ok(GenerationResponse {
                text: r#"{"slides": [{"ordinal": 1, "title": "", "bullets": [], "body": ""}]}"#
                    .into(),
                finish: "stop".into(),
            })
        }
    }

    #[test]
    fn unrepairable_output_is_malformed() {
        assert!(matches!(
            generate_deck(
                &node(),
                "u",
                &Garbage,
                &[],
                &DeckConfig::default(),
                &SteppingClock::default()
            ),
            Err(LessonError::MalformedSlide(_))
        ));
    }

    #[test]
    fn narration_has_one_segment_per_slide() {
        let d = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        let segs = summarize_deck(&d, &MockGenerator::new(2), &DeckConfig::default()).unwrap();
        assert_eq!(segs.len(), 8);
        for (seg, slide) in segs.iter().zip(&d.slides) {
            assert_eq!(seg.slide_ordinal, slide.ordinal);
            assert!(seg.summary_text.chars().count() <= 600);
            assert!(seg.summary_text.len() <= 2 * slide.body.len());
            assert_eq!(
                seg.est_duration_ms,
                seg.summary_text.chars().count() as u64 * MS_PER_CHAR
            );
        }
    }

    struct Verbose;
    impl TextGenerator for Verbose {
        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            Ok(GenerationResponse {
                text: "Short first sentence. ".to_string() + &"word ".repeat(200),
                finish: "stop".into(),
            })
        }
    }

    #[test]
    fn overlong_summaries_are_cut_at_a_sentence() {
        let d = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        let cfg = DeckConfig {
            max_narration_chars: 100,
            ..DeckConfig::default()
        };
        let segs = summarize_deck(&d, &Verbose, &cfg).unwrap();
        assert_eq!(segs[0].summary_text, "Short first sentence.");
    }

    #[test]
    fn empty_deck_cannot_be_summarized() {
        let mut d = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        d.slides.clear();
        assert!(matches!(
            summarize_deck(&d, &MockGenerator::new(1), &DeckConfig::default()),
            Err(LessonError::EmptyDeck)
        ));
    }

    #[test]
    fn freeze_fetch_export() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let d = generate_deck(
            &node(),
            "u",
            &MockGenerator::new(1),
            &[],
            &DeckConfig::default(),
            &SteppingClock::default(),
        )
        .unwrap();
        assert!(matches!(
            export_deck(&d, ExportFormat::Json),
            Err(LessonError::NotFrozen)
        ));
        let frozen = freeze_deck(d.clone(), &store).unwrap();
        assert!(frozen.frozen);
        assert_eq!(frozen.content_hash, d.content_hash);
        assert!(matches!(
            freeze_deck(d, &store),
            Err(LessonError::AlreadyFrozen { .. })
        ));
        assert!(matches!(
            freeze_deck(frozen.clone(), &store),
            Err(LessonError::AlreadyFrozen { .. })
        ));

        let fetched = fetch_deck("u", "bs.intro", &store).unwrap().unwrap();
        assert_eq!(fetched, frozen);
        assert!(fetch_deck("u", "other", &store).unwrap().is_none());

        let json = export_deck(&fetched, ExportFormat::Json).unwrap();
        assert_eq!(
            serde_json::from_slice::<LessonDeck>(&json).unwrap(),
            fetched
        );
        let md = String::from_utf8(export_deck(&fetched, ExportFormat::Markdown).unwrap()).unwrap();
        assert_eq!(md.lines().filter(|l| l.starts_with("## ")).count(), 8);
        assert!(matches!(
            "pptx".parse::<ExportFormat>(),
            Err(LessonError::UnsupportedFormat(_))
        ));
    }
}
