//! Course roadmaps as prerequisite DAGs and the per-user unlocking state machine.
//!
//! A roadmap is immutable once generated. Each learner holds a
//! [`ProgressRecord`] per course: roots start unlocked, everything else
//! locked, and passing a node's quiz unlocks every node whose prerequisites
//! are then all passed. Eligible siblings unlock together.

mod progress;
mod roadmap;

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;

pub use progress::{initial_progress, NodeState, ProgressRecord, QuizOutcome};
pub use roadmap::{
    generate_roadmap, validate_roadmap, RoadmapConfig, Rule, ValidationReport, Violation,
};

pub const DEFAULT_PASS_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed roadmap: {0}")]
    MalformedRoadmap(String),
    #[error("invalid roadmap: {0}")]
    InvalidRoadmap(ValidationReport),
    #[error("node {0} is locked")]
    NodeLocked(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} has already been passed")]
    AlreadyPassed(String),
    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),
    #[error("pass threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicNode {
    pub id: String,
    pub title: String,
    pub summary: String,
    pub prerequisites: BTreeSet<String>,
    /// Distance from the nearest root; recomputed whenever a roadmap is built
    /// or loaded.
    #[serde(skip)]
    pub depth: u32,
}

impl TopicNode {
    pub fn new(id: &str, title: &str, prerequisites: &[&str]) -> Self {
        Self {
            id: id.to_string(),
            title: title.to_string(),
            summary: String::new(),
            prerequisites: prerequisites.iter().map(|p| p.to_string()).collect(),
            depth: 0,
        }
    }

    pub fn is_root(&self) -> bool {
        self.prerequisites.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RoadmapRecord")]
pub struct CourseRoadmap {
    pub course_id: String,
    pub title: String,
    pub nodes: Vec<TopicNode>,
    pub created_at: DateTime<Utc>,
}

#[derive(Deserialize)]
struct RoadmapRecord {
    course_id: String,
    title: String,
    nodes: Vec<TopicNode>,
    #[serde(default)]
    created_at: DateTime<Utc>,
}

impl From<RoadmapRecord> for CourseRoadmap {
    fn from(r: RoadmapRecord) -> Self {
        CourseRoadmap::new(r.course_id, r.title, r.nodes, r.created_at)
    }
}

impl CourseRoadmap {
    /// Builds a roadmap and fills in node depths. No validation happens here;
    /// see [`validate_roadmap`].
    pub fn new(
        course_id: impl Into<String>,
        title: impl Into<String>,
        nodes: Vec<TopicNode>,
        created_at: DateTime<Utc>,
    ) -> Self {
        let mut r = Self {
            course_id: course_id.into(),
            title: title.into(),
            nodes,
            created_at,
        };
        r.compute_depths();
        r
    }

    pub fn node(&self, id: &str) -> Option<&TopicNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn roots(&self) -> impl Iterator<Item = &TopicNode> {
        self.nodes.iter().filter(|n| n.is_root())
    }

    /// Nodes listing `id` as a prerequisite.
    pub fn dependents<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a TopicNode> + 'a {
        self.nodes
            .iter()
            .filter(move |n| n.prerequisites.contains(id))
    }

    fn compute_depths(&mut self) {
        let mut depth: Vec<Option<u32>> = self
            .nodes
            .iter()
            .map(|n| n.is_root().then_some(0))
            .collect();
        let mut frontier: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| depth[i].is_some())
            .collect();
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &i in &frontier {
                let id = self.nodes[i].id.clone();
                for (j, n) in self.nodes.iter().enumerate() {
                    if depth[j].is_none() && n.prerequisites.contains(&id) {
                        depth[j] = Some(d);
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        for (n, d) in self.nodes.iter_mut().zip(depth) {
            n.depth = d.unwrap_or(0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_is_distance_from_nearest_root() {
        let r = CourseRoadmap::new(
            "c",
            "C",
            vec![
                TopicNode::new("a", "A", &[]),
                TopicNode::new("b", "B", &["a"]),
                TopicNode::new("c", "C", &["b"]),
                TopicNode::new("r", "R", &[]),
                TopicNode::new("d", "D", &["c", "r"]),
            ],
            DateTime::<Utc>::default(),
        );
        let depths: Vec<u32> = r.nodes.iter().map(|n| n.depth).collect();
        assert_eq!(depths, vec![0, 1, 2, 0, 1]);
    }

    #[test]
    fn json_uses_wire_field_names_and_restores_depth() {
        let r = CourseRoadmap::new(
            "c",
            "C",
            vec![
                TopicNode::new("a", "A", &[]),
                TopicNode::new("b", "B", &["a"]),
            ],
            DateTime::<Utc>::default(),
        );
        let v = serde_json::to_value(&r).unwrap();
        let node = &v["nodes"][1];
        let mut keys: Vec<_> = node.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["id", "prerequisites", "summary", "title"]);
        let back: CourseRoadmap = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.nodes[1].depth, 1);
    }
}
