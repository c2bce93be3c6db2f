//! Live lesson sessions: narration playback position, interruption for a
//! doubt, grounded doubt answers, and resumption.
//!
//! ```text
//! idle ──open──▶ playing ──interrupt──▶ paused_for_doubt
//!                 │  ▲ ◀──────resume───────────┘
//!                 │  └─advance (not last)
//!                 └──advance (last)──▶ finished
//! ```

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, TextGenerator};
use crate::curriculum::{NodeState, ProgressRecord};
use crate::lesson::LessonDeck;
use crate::prompts::{render_slides, render_sources, Prompt, Task};
use crate::retrieval::{KnowledgeBase, RetrievalError, DEFAULT_RETRIEVAL_K};
use crate::store::{Store, StoreError, Subtree};
use crate::text::{collapse_whitespace, sha256_hex, truncate_at_sentence};

#[derive(Debug, Error)]
pub enum TutorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Storage(#[from] StoreError),
    #[error("no frozen deck for node {0}")]
    DeckMissing(String),
    #[error("node {0} is locked")]
    NodeLocked(String),
    #[error("session is {0}, not playing")]
    NotPlaying(SessionState),
    #[error("cannot {op} while {from}")]
    InvalidTransition {
        from: SessionState,
        op: &'static str,
    },
    #[error("question is empty")]
    EmptyQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Playing,
    PausedForDoubt,
    Finished,
}

impl std::fmt::Display for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionState::Idle => "idle",
            SessionState::Playing => "playing",
            SessionState::PausedForDoubt => "paused_for_doubt",
            SessionState::Finished => "finished",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    WakeWord,
    UiButton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Chat,
    VoiceTranscript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubtExchange {
    pub question: String,
    pub channel: Channel,
    pub answer: String,
    pub sources: Vec<String>,
    pub asked_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Open,
    Interrupt,
    Doubt,
    Resume,
    Advance,
    Finish,
}

/// One line of the session event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub event: EventKind,
    pub at: DateTime<Utc>,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorSession {
    pub session_id: String,
    pub user_id: String,
    pub node_id: String,
    pub state: SessionState,
    /// 1-based ordinal of the current segment; 0 before the session opens.
    pub position: usize,
    pub segment_count: usize,
    pub transcript: Vec<DoubtExchange>,
    pub events: Vec<SessionEvent>,
}

pub fn session_id_for(user_id: &str, node_id: &str) -> String {
    format!(
        "sess-{}",
        &sha256_hex(format!("{user_id}\0{node_id}").as_bytes())[..16]
    )
}

impl TutorSession {
    pub fn new(user_id: &str, node_id: &str, segment_count: usize) -> Self {
        Self {
            session_id: session_id_for(user_id, node_id),
            user_id: user_id.to_string(),
            node_id: node_id.to_string(),
            state: SessionState::Idle,
            position: 0,
            segment_count,
            transcript: Vec::new(),
            events: Vec::new(),
        }
    }

    fn log(
        &mut self,
        event: EventKind,
        at: DateTime<Utc>,
        trigger: Option<Trigger>,
        question: Option<String>,
    ) {
        self.events.push(SessionEvent {
            session_id: self.session_id.clone(),
            event,
            at,
            position: self.position,
            trigger,
            question,
        });
    }

    /// idle → playing at segment 1. A session that is already live keeps its
    /// state and position. Finished is terminal; see [`TutorSession::replay`].
    pub fn open(&mut self, now: DateTime<Utc>) -> Result<(), TutorError> {
        match self.state {
            SessionState::Finished => {
                return Err(TutorError::InvalidTransition {
                    from: self.state,
                    op: "open",
                })
            }
            SessionState::Idle => {
                if self.segment_count == 0 {
                    return Err(TutorError::DeckMissing(self.node_id.clone()));
                }
                self.state = SessionState::Playing;
                self.position = 1;
            }
            SessionState::Playing | SessionState::PausedForDoubt => {}
        }
        self.log(EventKind::Open, now, None, None);
        Ok(())
    }

    pub fn interrupt(&mut self, trigger: Trigger, now: DateTime<Utc>) -> Result<(), TutorError> {
        if self.state != SessionState::Playing {
            return Err(TutorError::NotPlaying(self.state));
        }
        self.state = SessionState::PausedForDoubt;
        self.log(EventKind::Interrupt, now, Some(trigger), None);
        Ok(())
    }

    pub fn resume(&mut self, now: DateTime<Utc>) -> Result<(), TutorError> {
        if self.state != SessionState::PausedForDoubt {
            return Err(TutorError::InvalidTransition {
                from: self.state,
                op: "resume",
            });
        }
        self.state = SessionState::Playing;
        self.log(EventKind::Resume, now, None, None);
        Ok(())
    }

    pub fn advance(&mut self, now: DateTime<Utc>) -> Result<(), TutorError> {
        if self.state != SessionState::Playing {
            return Err(TutorError::InvalidTransition {
                from: self.state,
                op: "advance",
            });
        }
        if self.position >= self.segment_count {
            self.state = SessionState::Finished;
            self.log(EventKind::Finish, now, None, None);
        } else {
            self.position += 1;
            self.log(EventKind::Advance, now, None, None);
        }
        Ok(())
    }

    /// A fresh idle session on the same node that keeps this one's
    /// transcript and event log, for watching a finished lesson again.
    pub fn replay(self) -> Self {
        let mut next = Self::new(&self.user_id, &self.node_id, self.segment_count);
        next.transcript = self.transcript;
        next.events = self.events;
        next
    }

    /// The event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
            .collect()
    }
}

/// Opens (or reopens) the learner's session on a node. The node must be
/// open for the learner and its deck frozen; the caller persists both the
/// session and the node's move to in_progress.
pub fn open_session(
    progress: &mut ProgressRecord,
    deck: Option<&LessonDeck>,
    node_id: &str,
    existing: Option<TutorSession>,
    now: DateTime<Utc>,
) -> Result<TutorSession, TutorError> {
    match progress.state(node_id) {
        Some(NodeState::Locked) => return Err(TutorError::NodeLocked(node_id.to_string())),
        None => return Err(TutorError::DeckMissing(node_id.to_string())),
        _ => {}
    }
    let deck = deck
        .filter(|d| d.frozen && d.node_id == node_id)
        .ok_or_else(|| TutorError::DeckMissing(node_id.to_string()))?;
    progress
        .start_node(node_id, now)
        .map_err(|_| TutorError::NodeLocked(node_id.to_string()))?;
    let mut session = match existing {
        Some(s) if s.state == SessionState::Finished => s.replay(),
        Some(s) => s,
        None => TutorSession::new(&progress.user_id, node_id, deck.slides.len()),
    };
    session.segment_count = deck.slides.len();
    session.open(now)?;
    Ok(session)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubtConfig {
    pub k: usize,
    pub max_chars: usize,
    pub seed: u64,
}

impl Default for DoubtConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_RETRIEVAL_K,
            max_chars: 600,
            seed: 0,
        }
    }
}

/// Answers a question asked while paused. The prompt carries the current
/// slide and the top-k retrieved chunks; the answer is capped at
/// `cfg.max_chars` and appended to the transcript.
#[allow(clippy::too_many_arguments)]
pub fn answer_doubt(
    session: &mut TutorSession,
    question: &str,
    channel: Channel,
    deck: &LessonDeck,
    sum: &dyn TextGenerator,
    kb: &KnowledgeBase,
    emb: &dyn Embedder,
    cfg: &DoubtConfig,
    now: DateTime<Utc>,
) -> Result<DoubtExchange, TutorError> {
    if session.state != SessionState::PausedForDoubt {
        return Err(TutorError::InvalidTransition {
            from: session.state,
            op: "answer a doubt",
        });
    }
    let question = collapse_whitespace(question);
    if question.is_empty() {
        return Err(TutorError::EmptyQuestion);
    }
    let hits = if kb.is_empty() {
        Vec::new()
    } else {
        kb.retrieve(&question, cfg.k, emb)?
    };
    let texts: Vec<&str> = hits
        .iter()
        .filter_map(|h| kb.chunk(&h.chunk_id).map(|c| c.text.as_str()))
        .collect();
    let slide = deck.slides.iter().find(|s| s.ordinal == session.position);
    let body = format!(
        "Current slide:\n{}\nSources:\n{}",
        render_slides(slide),
        render_sources(texts)
    );
    let prompt = Prompt::new(Task::Doubt)
        .field("question", &question)
        .field("max_chars", cfg.max_chars)
        .body(body);
    let reply = sum.generate(&prompt.to_request(cfg.seed))?.text;
    let answer = truncate_at_sentence(reply.trim(), cfg.max_chars);
    let exchange = DoubtExchange {
        question: question.clone(),
        channel,
        answer,
        sources: hits.into_iter().map(|h| h.chunk_id).collect(),
        asked_at: now,
    };
    session.transcript.push(exchange.clone());
    session.log(EventKind::Doubt, now, None, Some(question));
    Ok(exchange)
}

fn session_key<'a>(user_id: &'a str, node_id: &'a str) -> [&'a str; 2] {
    [user_id, node_id]
}

pub fn save_session(session: &TutorSession, store: &Store) -> Result<(), TutorError> {
    store.put(
        Subtree::Sessions,
        &session_key(&session.user_id, &session.node_id),
        session,
    )?;
    Ok(())
}

pub fn load_session(
    user_id: &str,
    node_id: &str,
    store: &Store,
) -> Result<Option<TutorSession>, TutorError> {
    Ok(store.get(Subtree::Sessions, &session_key(user_id, node_id))?)
}
