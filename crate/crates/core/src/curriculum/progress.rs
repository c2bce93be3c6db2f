use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{validate_roadmap, CourseRoadmap, CurriculumError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Locked,
    Unlocked,
    InProgress,
    Passed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub user_id: String,
    pub course_id: String,
    pub node_states: BTreeMap<String, NodeState>,
    pub quiz_scores: BTreeMap<String, f64>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizOutcome {
    pub node_id: String,
    pub score: f64,
    pub passed: bool,
    /// Nodes that moved from locked to unlocked because of this result.
    pub newly_unlocked: Vec<String>,
}

/// Fresh progress for a learner: roots unlocked, everything else locked.
pub fn initial_progress(
    user_id: &str,
    roadmap: &CourseRoadmap,
    now: DateTime<Utc>,
) -> Result<ProgressRecord, CurriculumError> {
    let report = validate_roadmap(roadmap);
    if !report.is_valid() {
        return Err(CurriculumError::InvalidRoadmap(report));
    }
    let node_states = roadmap
        .nodes
        .iter()
        .map(|n| {
            let state = if n.is_root() {
                NodeState::Unlocked
            } else {
                NodeState::Locked
            };
            (n.id.clone(), state)
        })
        .collect();
    Ok(ProgressRecord {
        user_id: user_id.to_string(),
        course_id: roadmap.course_id.clone(),
        node_states,
        quiz_scores: BTreeMap::new(),
        updated_at: now,
    })
}

impl ProgressRecord {
    pub fn state(&self, node_id: &str) -> Option<NodeState> {
        self.node_states.get(node_id).copied()
    }

    fn known_state(&self, node_id: &str) -> Result<NodeState, CurriculumError> {
        self.state(node_id)
            .ok_or_else(|| CurriculumError::UnknownNode(node_id.to_string()))
    }

    /// Nodes currently open for study: unlocked or in progress.
    pub fn available_nodes(&self) -> BTreeSet<String> {
        self.node_states
            .iter()
            .filter(|(_, s)| matches!(s, NodeState::Unlocked | NodeState::InProgress))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn passed_nodes(&self) -> BTreeSet<String> {
        self.node_states
            .iter()
            .filter(|(_, s)| **s == NodeState::Passed)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.node_states.values().all(|s| *s == NodeState::Passed)
    }

    /// Marks an open node as being studied. Passed nodes may be revisited and
    /// keep their state.
    pub fn start_node(
        &mut self,
        node_id: &str,
        now: DateTime<Utc>,
    ) -> Result<NodeState, CurriculumError> {
        match self.known_state(node_id)? {
            NodeState::Locked => Err(CurriculumError::NodeLocked(node_id.to_string())),
            NodeState::Unlocked => {
                self.node_states
                    .insert(node_id.to_string(), NodeState::InProgress);
                self.updated_at = now;
                Ok(NodeState::InProgress)
            }
            s => Ok(s),
        }
    }

    /// Records a quiz score. A passing score passes the node and unlocks
    /// every node whose prerequisites are then all passed; a failing score
    /// leaves the node unlocked for a retake.
    pub fn record_quiz_result(
        &mut self,
        roadmap: &CourseRoadmap,
        node_id: &str,
        score: f64,
        pass_threshold: f64,
        now: DateTime<Utc>,
    ) -> Result<QuizOutcome, CurriculumError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(CurriculumError::InvalidScore(score));
        }
        if !(pass_threshold > 0.0 && pass_threshold <= 1.0) {
            return Err(CurriculumError::InvalidThreshold(pass_threshold));
        }
        match self.known_state(node_id)? {
            NodeState::Locked => return Err(CurriculumError::NodeLocked(node_id.to_string())),
            NodeState::Passed => return Err(CurriculumError::AlreadyPassed(node_id.to_string())),
            NodeState::Unlocked | NodeState::InProgress => {}
        }
        self.quiz_scores.insert(node_id.to_string(), score);
        self.updated_at = now;
        let passed = score >= pass_threshold;
        let mut newly_unlocked = Vec::new();
        if passed {
            self.node_states
                .insert(node_id.to_string(), NodeState::Passed);
            for n in &roadmap.nodes {
                if self.state(&n.id) != Some(NodeState::Locked) {
                    continue;
                }
                let ready = n
                    .prerequisites
                    .iter()
                    .all(|p| self.state(p) == Some(NodeState::Passed));
                if ready {
                    newly_unlocked.push(n.id.clone());
                }
            }
            for id in &newly_unlocked {
                self.node_states.insert(id.clone(), NodeState::Unlocked);
            }
        } else {
            self.node_states
                .insert(node_id.to_string(), NodeState::Unlocked);
        }
        Ok(QuizOutcome {
            node_id: node_id.to_string(),
            score,
            passed,
            newly_unlocked,
        })
    }

    /// Nodes whose state contradicts the gating rule or the pass threshold.
    pub fn gating_violations(&self, roadmap: &CourseRoadmap, pass_threshold: f64) -> Vec<String> {
        let mut bad = Vec::new();
        for n in &roadmap.nodes {
            let Some(state) = self.state(&n.id) else {
                bad.push(n.id.clone());
                continue;
            };
            let prereqs_passed = n
                .prerequisites
                .iter()
                .all(|p| self.state(p) == Some(NodeState::Passed));
            let open = state != NodeState::Locked;
            let score_ok = state != NodeState::Passed
                || self
                    .quiz_scores
                    .get(&n.id)
                    .is_some_and(|s| *s >= pass_threshold);
            if (open && !prereqs_passed) || !score_ok {
                bad.push(n.id.clone());
            }
        }
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::TopicNode;

    fn now() -> DateTime<Utc> {
        DateTime::<Utc>::default()
    }

    fn chain() -> CourseRoadmap {
        CourseRoadmap::new(
            "c",
            "C",
            vec![
                TopicNode::new("a", "A", &[]),
                TopicNode::new("b", "B", &["a"]),
                TopicNode::new("c", "C", &["b"]),
            ],
            now(),
        )
    }

    fn diamond() -> CourseRoadmap {
        CourseRoadmap::new(
            "d",
            "D",
            vec![
                TopicNode::new("a", "A", &[]),
                TopicNode::new("b", "B", &["a"]),
                TopicNode::new("c", "C", &["a"]),
                TopicNode::new("d", "D", &["b", "c"]),
            ],
            now(),
        )
    }

    #[test]
    fn chain_starts_with_root_unlocked() {
        let p = initial_progress("u", &chain(), now()).unwrap();
        assert_eq!(p.state("a"), Some(NodeState::Unlocked));
        assert_eq!(p.state("b"), Some(NodeState::Locked));
        assert_eq!(p.state("c"), Some(NodeState::Locked));
        assert_eq!(p.available_nodes(), BTreeSet::from(["a".to_string()]));
    }

    #[test]
    fn diamond_starts_with_only_root() {
        let p = initial_progress("u", &diamond(), now()).unwrap();
        assert_eq!(p.available_nodes(), BTreeSet::from(["a".to_string()]));
    }

    #[test]
    fn empty_roadmap_is_rejected() {
        let r = CourseRoadmap::new("e", "E", vec![], now());
        assert!(matches!(
            initial_progress("u", &r, now()),
            Err(CurriculumError::InvalidRoadmap(_))
        ));
    }

    #[test]
    fn failing_keeps_node_open_and_unlocks_nothing() {
        let r = chain();
        let mut p = initial_progress("u", &r, now()).unwrap();
        p.start_node("a", now()).unwrap();
        let out = p.record_quiz_result(&r, "a", 0.5, 0.7, now()).unwrap();
        assert!(!out.passed);
        assert!(out.newly_unlocked.is_empty());
        assert_eq!(p.state("a"), Some(NodeState::Unlocked));
        assert_eq!(p.state("b"), Some(NodeState::Locked));
        // retake
        let out = p.record_quiz_result(&r, "a", 0.7, 0.7, now()).unwrap();
        assert!(out.passed);
        assert_eq!(out.newly_unlocked, vec!["b".to_string()]);
    }

    #[test]
    fn passed_node_rejects_new_scores() {
        let r = chain();
        let mut p = initial_progress("u", &r, now()).unwrap();
        p.record_quiz_result(&r, "a", 1.0, 0.7, now()).unwrap();
        assert!(matches!(
            p.record_quiz_result(&r, "a", 0.1, 0.7, now()),
            Err(CurriculumError::AlreadyPassed(_))
        ));
        assert_eq!(p.quiz_scores["a"], 1.0);
    }

    #[test]
    fn bad_inputs_are_rejected_without_mutation() {
        let r = chain();
        let mut p = initial_progress("u", &r, now()).unwrap();
        let before = p.clone();
        assert!(matches!(
            p.record_quiz_result(&r, "a", 1.5, 0.7, now()),
            Err(CurriculumError::InvalidScore(_))
        ));
        assert!(matches!(
            p.record_quiz_result(&r, "a", 0.5, 0.0, now()),
            Err(CurriculumError::InvalidThreshold(_))
        ));
        assert!(matches!(
            p.record_quiz_result(&r, "zz", 0.5, 0.7, now()),
            Err(CurriculumError::UnknownNode(_))
        ));
        assert!(matches!(
            p.start_node("c", now()),
            Err(CurriculumError::NodeLocked(_))
        ));
        assert_eq!(p, before);
    }
}
