//! Two-stage narration pipeline: synthesis of segment i+1 overlaps playback
//! of segment i, playback is strictly in ordinal order.

use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::{LessonError, NarrationSegment};
use crate::backends::{SpeechRequest, SpeechResponse, SpeechSynthesizer};
use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStepKind {
    Synthesize,
    Play,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub kind: PlanStepKind,
    pub ordinal: usize,
    /// Indexes of the steps that must finish before this one starts.
    pub depends_on: Vec<usize>,
}

/// Steps in a topological order: synth(1), then synth(i+1) before play(i),
/// then play(n). Synthesis depends only on the previous synthesis; playback
/// depends on its own synthesis and the previous playback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrationPlan {
    pub ordinals: Vec<usize>,
    pub steps: Vec<PlanStep>,
}

pub fn narration_plan(segments: &[NarrationSegment]) -> Result<NarrationPlan, LessonError> {
    if segments.is_empty() {
        return Err(LessonError::EmptyDeck);
    }
    let mut ordinals: Vec<usize> = segments.iter().map(|s| s.slide_ordinal).collect();
    ordinals.sort_unstable();
    if ordinals.windows(2).any(|w| w[0] == w[1]) {
        return Err(LessonError::InvalidParameter(
            "duplicate segment ordinal".into(),
        ));
    }
    let n = ordinals.len();
    let mut steps: Vec<PlanStep> = Vec::with_capacity(2 * n);
    let mut synth_at = vec![0; n];
    let mut play_at = vec![0; n];
    let synth = |i: usize, synth_at: &[usize]| PlanStep {
        kind: PlanStepKind::Synthesize,
        ordinal: ordinals[i],
        depends_on: if i == 0 {
            vec![]
        } else {
            vec![synth_at[i - 1]]
        },
    };
    steps.push(synth(0, &synth_at));
    for i in 0..n {
        if i + 1 < n {
            synth_at[i + 1] = steps.len();
            steps.push(synth(i + 1, &synth_at));
        }
        let mut depends_on = vec![synth_at[i]];
        if i > 0 {
            depends_on.push(play_at[i - 1]);
        }
        play_at[i] = steps.len();
        steps.push(PlanStep {
            kind: PlanStepKind::Play,
            ordinal: ordinals[i],
            depends_on,
        });
    }
    Ok(NarrationPlan { ordinals, steps })
}

impl NarrationPlan {
    pub fn step_index(&self, kind: PlanStepKind, ordinal: usize) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| s.kind == kind && s.ordinal == ordinal)
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut stack = vec![from];
        let mut seen = vec![false; self.steps.len()];
        while let Some(s) = stack.pop() {
            if s == to {
                return true;
            }
            for &d in &self.steps[s].depends_on {
                if !seen[d] {
                    seen[d] = true;
                    stack.push(d);
                }
            }
        }
        false
    }

    /// True when neither step waits (directly or transitively) for the other.
    pub fn may_overlap(&self, a: usize, b: usize) -> bool {
        a != b && !self.reaches(a, b) && !self.reaches(b, a)
    }

    /// Ordinals in playback order.
    pub fn playback_order(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.kind == PlanStepKind::Play)
            .map(|s| s.ordinal)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedStep {
    pub kind: PlanStepKind,
    pub ordinal: usize,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub steps: Vec<SimulatedStep>,
    pub total_ms: u64,
}

/// Runs the plan with unlimited parallelism: every step starts as soon as its
/// dependencies finish. Durations are indexed like `plan.ordinals`.
pub fn simulate_plan(
    plan: &NarrationPlan,
    synth_ms: &[u64],
    play_ms: &[u64],
) -> Result<Timeline, LessonError> {
    let n = plan.ordinals.len();
    if synth_ms.len() != n || play_ms.len() != n {
        return Err(LessonError::InvalidParameter(format!(
            "need {n} synthesis and playback durations"
        )));
    }
    let pos = |ordinal: usize| {
        plan.ordinals
            .binary_search(&ordinal)
            .expect("ordinal in plan")
    };
    let mut out: Vec<SimulatedStep> = Vec::with_capacity(plan.steps.len());
    for step in &plan.steps {
        let start_ms = step
            .depends_on
            .iter()
            .map(|&d| out[d].end_ms)
            .max()
            .unwrap_or(0);
        let dur = match step.kind {
            PlanStepKind::Synthesize => synth_ms[pos(step.ordinal)],
            PlanStepKind::Play => play_ms[pos(step.ordinal)],
        };
        out.push(SimulatedStep {
            kind: step.kind,
            ordinal: step.ordinal,
            start_ms,
            end_ms: start_ms + dur,
        });
    }
    let total_ms = out.iter().map(|s| s.end_ms).max().unwrap_or(0);
    Ok(Timeline {
        steps: out,
        total_ms,
    })
}

/// Records synthesized audio on a segment: a digest reference and the
/// backend's duration when it reports one.
pub fn attach_audio(segment: &mut NarrationSegment, resp: &SpeechResponse) {
    segment.audio_ref = Some(format!("sha256:{}", sha256_hex(&resp.audio)));
    if resp.duration_ms > 0 {
        segment.est_duration_ms = resp.duration_ms;
    }
}

/// Executes a plan: a synthesis thread runs ahead through the segments while
/// `play` is called on the current thread strictly in ordinal order. The
/// channel is unbounded, so synthesis never waits for playback.
pub fn execute_narration(
    segments: &[NarrationSegment],
    speech: &dyn SpeechSynthesizer,
    voice: &str,
    mut play: impl FnMut(&NarrationSegment, &SpeechResponse),
) -> Result<Vec<NarrationSegment>, LessonError> {
    let plan = narration_plan(segments)?;
    let mut ordered: Vec<NarrationSegment> = segments.to_vec();
    ordered.sort_by_key(|s| s.slide_ordinal);
    debug_assert_eq!(
        plan.playback_order(),
        ordered.iter().map(|s| s.slide_ordinal).collect::<Vec<_>>()
    );

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        let texts: Vec<String> = ordered.iter().map(|s| s.summary_text.clone()).collect();
        scope.spawn(move || {
            for text in texts {
                let r = speech.synthesize(&SpeechRequest {
                    text,
                    voice: voice.to_string(),
                });
                let failed = r.is_err();
                if tx.send(r).is_err() || failed {
                    break;
                }
            }
        });
        let mut done = Vec::with_capacity(ordered.len());
        for mut seg in ordered {
            let resp = rx
                .recv()
                .map_err(|_| LessonError::InvalidParameter("synthesis stopped early".into()))??;
            attach_audio(&mut seg, &resp);
            play(&seg, &resp);
            done.push(seg);
        }
        Ok(done)
    })
}
