use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CourseRoadmap, CurriculumError, TopicNode};
use crate::backends::TextGenerator;
use crate::clock::Clock;
use crate::prompts::{Prompt, Task};
use crate::text::{extract_json_object, sha256_hex, slugify};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "detail", rename_all = "snake_case")]
pub enum Rule {
    EmptyRoadmap,
    DuplicateId,
    SelfPrerequisite,
    UnknownPrerequisite(String),
    Cycle,
    NoRoot,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node_id: Option<String>,
    #[serde(flatten)]
    pub rule: Rule,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, node_id: Option<&str>, rule: &Rule) -> bool {
        self.violations
            .iter()
            .any(|v| v.node_id.as_deref() == node_id && &v.rule == rule)
    }

    fn push(&mut self, node_id: Option<&str>, rule: Rule) {
        self.violations.push(Violation {
            node_id: node_id.map(str::to_string),
            rule,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| match &v.node_id {
                Some(id) => format!("{id}: {:?}", v.rule),
                None => format!("{:?}", v.rule),
            })
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every structural invariant of a roadmap and reports all violations.
pub fn validate_roadmap(r: &CourseRoadmap) -> ValidationReport {
    let mut report = ValidationReport::default();
    if r.nodes.is_empty() {
        report.push(None, Rule::EmptyRoadmap);
        report.push(None, Rule::NoRoot);
        return report;
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in r.nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), i).is_some() {
            report.push(Some(&n.id), Rule::DuplicateId);
        }
    }
    // First occurrence wins for graph checks.
    let unique: Vec<usize> = {
        let mut seen = HashSet::new();
        (0..r.nodes.len())
            .filter(|&i| seen.insert(r.nodes[i].id.as_str()))
            .collect()
    };

    // Edges prerequisite -> dependent among known, non-self references.
    let mut dependents: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut indegree: HashMap<&str, usize> = HashMap::new();
    for &i in &unique {
        let n = &r.nodes[i];
        indegree.entry(n.id.as_str()).or_insert(0);
        for p in &n.prerequisites {
            if p == &n.id {
                report.push(Some(&n.id), Rule::SelfPrerequisite);
            } else if !index.contains_key(p.as_str()) {
                report.push(Some(&n.id), Rule::UnknownPrerequisite(p.clone()));
            } else {
                dependents
                    .entry(p.as_str())
                    .or_default()
                    .push(n.id.as_str());
                *indegree.entry(n.id.as_str()).or_insert(0) += 1;
            }
        }
    }

    if !unique.iter().any(|&i| r.nodes[i].is_root()) {
        report.push(None, Rule::NoRoot);
    }

    // Kahn's algorithm; what cannot be peeled sits on or behind a cycle.
    let mut indeg = indegree.clone();
    let mut queue: VecDeque<&str> = unique
        .iter()
        .map(|&i| r.nodes[i].id.as_str())
        .filter(|id| indeg[id] == 0)
        .collect();
    let mut peeled: HashSet<&str> = HashSet::new();
    while let Some(id) = queue.pop_front() {
        peeled.insert(id);
        for d in dependents.get(id).into_iter().flatten() {
            let e = indeg.get_mut(d).expect("known node");
            *e -= 1;
            if *e == 0 {
                queue.push_back(d);
            }
        }
    }
    // Of the unpeeled nodes, those that can reach themselves lie on a cycle;
    // the others merely depend on one.
    let on_cycle = |start: &str| -> bool {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut stack: Vec<&str> = dependents.get(start).cloned().unwrap_or_default();
        while let Some(id) = stack.pop() {
            if id == start {
                return true;
            }
            if seen.insert(id) {
                stack.extend(dependents.get(id).into_iter().flatten().copied());
            }
        }
        false
    };
    let rest: HashSet<&str> = indegree
        .keys()
        .copied()
        .filter(|id| !peeled.contains(id) && on_cycle(id))
        .collect();
    for &i in &unique {
        let id = r.nodes[i].id.as_str();
        if rest.contains(id) {
            report.push(Some(id), Rule::Cycle);
        }
    }

    // Reachability from roots along prerequisite edges.
    let mut reached: HashSet<&str> = HashSet::new();
    let mut queue: VecDeque<&str> = unique
        .iter()
        .map(|&i| &r.nodes[i])
        .filter(|n| n.is_root())
        .map(|n| n.id.as_str())
        .collect();
    while let Some(id) = queue.pop_front() {
        if !reached.insert(id) {
            continue;
        }
        for d in dependents.get(id).into_iter().flatten() {
            queue.push_back(d);
        }
    }
    for &i in &unique {
        let id = r.nodes[i].id.as_str();
        if !reached.contains(id) && !rest.contains(id) {
            report.push(Some(id), Rule::Unreachable);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadmapConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for RoadmapConfig {
    fn default() -> Self {
        Self {
            min_nodes: 3,
            max_nodes: 40,
            seed: 0,
        }
    }
}

#[derive(Deserialize)]
struct DraftNode {
    id: String,
    title: String,
    #[serde(default)]
    summary: String,
    #[serde(default)]
    prerequisites: Vec<String>,
}

#[derive(Deserialize)]
struct Draft {
    nodes: Vec<DraftNode>,
}

/// Stable course id: slug of the title plus a digest of title and syllabus.
pub(crate) fn course_id_for(title: &str, syllabus: Option<&str>) -> String {
    let digest = sha256_hex(format!("{title}\u{0}{}", syllabus.unwrap_or("")).as_bytes());
    let slug = slugify(title);
    let slug = if slug.is_empty() {
        "course".to_string()
    } else {
        slug
    };
    format!("{slug}-{}", &digest[..8])
}

fn parse_roadmap(
    text: &str,
    course_id: &str,
    title: &str,
    cfg: &RoadmapConfig,
    clock: &dyn Clock,
) -> Result<CourseRoadmap, String> {
    let json = extract_json_object(text).ok_or("no JSON object in reply")?;
    let draft: Draft = serde_json::from_str(json).map_err(|e| format!("schema mismatch: {e}"))?;
    let local = |id: &str| -> Result<String, String> {
        let s = slugify(id);
        if s.is_empty() {
            Err(format!("node id {id:?} has no usable characters"))
        } else {
            Ok(format!("{course_id}.{s}"))
        }
    };
    let mut nodes = Vec::with_capacity(draft.nodes.len());
    for n in draft.nodes {
        if n.title.trim().is_empty() {
            return Err(format!("node {:?} has an empty title", n.id));
        }
        let prerequisites = n
            .prerequisites
            .iter()
            .map(|p| local(p))
            .collect::<Result<BTreeSet<_>, _>>()?;
        nodes.push(TopicNode {
            id: local(&n.id)?,
            title: n.title.trim().to_string(),
            summary: n.summary.trim().to_string(),
            prerequisites,
            depth: 0,
        });
    }
    if nodes.len() < cfg.min_nodes || nodes.len() > cfg.max_nodes {
        return Err(format!(
            "{} nodes outside bounds [{}, {}]",
            nodes.len(),
            cfg.min_nodes,
            cfg.max_nodes
        ));
    }
    let roadmap = CourseRoadmap::new(course_id, title, nodes, clock.now());
    let report = validate_roadmap(&roadmap);
    if !report.is_valid() {
        return Err(report.to_string());
    }
    Ok(roadmap)
}

/// Asks the generation backend for a roadmap, validating its output and
/// allowing one repair round.
///
/// Node ids are namespaced as `{course_id}.{local-id}` so they are unique
/// across courses.
pub fn generate_roadmap(
    course_title: &str,
    syllabus_hint: Option<&str>,
    gen: &dyn TextGenerator,
    cfg: &RoadmapConfig,
    clock: &dyn Clock,
) -> Result<CourseRoadmap, CurriculumError> {
    let title = course_title.trim();
    if title.is_empty() {
        return Err(CurriculumError::MalformedRoadmap(
            "precondition violated: course title is empty".into(),
        ));
    }
    let course_id = course_id_for(title, syllabus_hint);
    let mut prompt = Prompt::new(Task::Roadmap)
        .field("course", title)
        .field("min_nodes", cfg.min_nodes)
        .field("max_nodes", cfg.max_nodes);
    if let Some(s) = syllabus_hint.filter(|s| !s.trim().is_empty()) {
        prompt = prompt.field("syllabus", s.trim());
    }

    let first = gen.generate(&prompt.to_request(cfg.seed))?.text;
    let problem = match parse_roadmap(&first, &course_id, title, cfg, clock) {
        Ok(r) => return Ok(r),
        Err(p) => p,
    };
    tracing::warn!(course = title, %problem, "roadmap output rejected, asking for a repair");
    let second = gen
        .generate(&prompt.repair(&first, &problem).to_request(cfg.seed))?
        .text;
    parse_roadmap(&second, &course_id, title, cfg, clock).map_err(CurriculumError::MalformedRoadmap)
}
