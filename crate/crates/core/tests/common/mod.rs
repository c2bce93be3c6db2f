//! Independent oracles shared by the property suites and the acceptance run.
//! Nothing here calls the code under test to compute an expected value.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use autodidact::assessment::grade_long_answer;
use autodidact::backends::{Embedder, MockEmbedder};
use autodidact::curriculum::{
    initial_progress, CourseRoadmap, CurriculumError, NodeState, TopicNode,
};
use autodidact::metrics::{bleu, rouge_l, rouge_n, Smoothing};
use autodidact::retrieval::{build_index, query_top_k, DocumentChunk};
use chrono::{DateTime, Utc};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Metric fixtures. Expected values are exact fractions counted by hand.

pub enum Expect {
    /// ROUGE-n with (precision, recall).
    Rouge(usize, f64, f64),
    /// ROUGE-L with (precision, recall).
    RougeL(f64, f64),
    /// BLEU up to order n.
    Bleu(usize, Smoothing, f64),
}

pub struct MetricCase {
    pub name: &'static str,
    pub candidate: &'static str,
    pub references: &'static [&'static str],
    pub expect: Expect,
    /// Identity cases must come out as exactly 1.0.
    pub identity: bool,
}

const fn case(
    name: &'static str,
    candidate: &'static str,
    references: &'static [&'static str],
    expect: Expect,
) -> MetricCase {
    MetricCase {
        name,
        candidate,
        references,
        expect,
        identity: false,
    }
}

const fn identity(name: &'static str, text: &'static [&'static str], expect: Expect) -> MetricCase {
    MetricCase {
        name,
        candidate: text[0],
        references: text,
        expect,
        identity: true,
    }
}

pub fn metric_cases() -> Vec<MetricCase> {
    use Expect::*;
    let none = Smoothing::None;
    vec![
        identity("rouge1 identity", &["the cat sat"], Rouge(1, 1.0, 1.0)),
        identity("rouge2 identity", &["the cat sat"], Rouge(2, 1.0, 1.0)),
        identity(
            "rougeL identity",
            &["the cat sat on the mat"],
            RougeL(1.0, 1.0),
        ),
        identity(
            "bleu4 identity",
            &["the cat sat on the mat"],
            Bleu(4, none, 1.0),
        ),
        identity(
            "bleu1 identity",
            &["the cat sat on the mat"],
            Bleu(1, none, 1.0),
        ),
        // unigrams: 3 matched of 3 candidate and 6 reference
        case(
            "rouge1 prefix",
            "the cat sat",
            &["the cat sat on the mat"],
            Rouge(1, 1.0, 3.0 / 6.0),
        ),
        // bigrams: {the cat, cat sat} against 5 reference bigrams
        case(
            "rouge2 prefix",
            "the cat sat",
            &["the cat sat on the mat"],
            Rouge(2, 1.0, 2.0 / 5.0),
        ),
        // "the" x3 clipped to the single reference "the"
        case(
            "rouge1 clipping",
            "the the the",
            &["the cat"],
            Rouge(1, 1.0 / 3.0, 1.0 / 2.0),
        ),
        case("rouge1 disjoint", "a b", &["c d"], Rouge(1, 0.0, 0.0)),
        // bigrams ab bc cd vs ac cb bd share nothing
        case(
            "rouge2 reordered",
            "a b c d",
            &["a c b d"],
            Rouge(2, 0.0, 0.0),
        ),
        case(
            "rouge1 reordered",
            "a b c d",
            &["a c b d"],
            Rouge(1, 1.0, 1.0),
        ),
        // ab ba ab vs ab: "ab" clipped to 1
        case(
            "rouge2 clipping",
            "a b a b",
            &["a b"],
            Rouge(2, 1.0 / 3.0, 1.0),
        ),
        // a one-token candidate has no bigrams
        case("rouge2 empty set", "one", &["one two"], Rouge(2, 0.0, 0.0)),
        case("rouge1 half", "one", &["one two"], Rouge(1, 1.0, 1.0 / 2.0)),
        // trigrams: xyz vs xyz yzw
        case("rouge3", "x y z", &["x y z w"], Rouge(3, 1.0, 1.0 / 2.0)),
        // "the cat." tokenizes to three tokens
        case(
            "rouge1 punctuation",
            "The cat.",
            &["the cat"],
            Rouge(1, 2.0 / 3.0, 1.0),
        ),
        // LCS "the sat"
        case(
            "rougeL substitution",
            "the cat sat",
            &["the dog sat"],
            RougeL(2.0 / 3.0, 2.0 / 3.0),
        ),
        // LCS "a c e"
        case(
            "rougeL gaps",
            "a b c d e",
            &["a c e"],
            RougeL(3.0 / 5.0, 1.0),
        ),
        case("rougeL swap", "b a", &["a b"], RougeL(1.0 / 2.0, 1.0 / 2.0)),
        case("rougeL empty candidate", "", &["a"], RougeL(0.0, 0.0)),
        // LCS "a b c"
        case(
            "rougeL interleaved",
            "a x b y c",
            &["a b c z"],
            RougeL(3.0 / 5.0, 3.0 / 4.0),
        ),
        // p1 = 1/4 after clipping, c = 4 > r = 2 so no penalty
        case(
            "bleu1 clipping",
            "the the the the",
            &["the cat"],
            Bleu(1, none, 0.25),
        ),
        case(
            "bleu2 zero bigrams",
            "the the the the",
            &["the cat"],
            Bleu(2, none, 0.0),
        ),
        // p1 = 1, BP = exp(1 - 6/2)
        case(
            "bleu1 brevity",
            "the cat",
            &["the cat sat on the mat"],
            Bleu(1, none, (-2.0f64).exp()),
        ),
        // p1 = p2 = 1, BP = exp(1 - 6/4)
        case(
            "bleu2 brevity",
            "the cat sat on",
            &["the cat sat on the mat"],
            Bleu(2, none, (-0.5f64).exp()),
        ),
        // p1 = 3/4, p2 = 2/3
        case(
            "bleu2 partial",
            "a b c d",
            &["a b c e"],
            Bleu(2, none, 0.5f64.sqrt()),
        ),
        // p3 = 1/2 as well
        case(
            "bleu3 partial",
            "a b c d",
            &["a b c e"],
            Bleu(3, none, 0.25f64.cbrt()),
        ),
        case("bleu4 partial", "a b c d", &["a b c e"], Bleu(4, none, 0.0)),
        // add-one on n >= 2: 3/4, 3/4, 2/3, 1/2
        case(
            "bleu4 add-one",
            "a b c d",
            &["a b c e"],
            Bleu(4, Smoothing::AddOne, (3.0f64 / 16.0).powf(0.25)),
        ),
        // clipping takes the max count over references; r = 2 is closest to c = 3
        case(
            "bleu2 two references",
            "a b c",
            &["a b", "a b c d e"],
            Bleu(2, none, 1.0),
        ),
        // lengths 1 and 3 are equally close to c = 2; the shorter wins, so BP = 1
        case(
            "bleu1 closest tie",
            "a b",
            &["a b c", "a"],
            Bleu(1, none, 1.0),
        ),
    ]
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Runs every fixture; returns the failures.
pub fn metric_failures() -> Vec<String> {
    let mut bad = Vec::new();
    for c in metric_cases() {
        let got: Vec<(&str, f64, f64)> = match c.expect {
            Expect::Rouge(n, p, r) => {
                let s = rouge_n(c.candidate, c.references[0], n).unwrap();
                vec![
                    ("P", s.precision, p),
                    ("R", s.recall, r),
                    ("F1", s.f1, f1(p, r)),
                ]
            }
            Expect::RougeL(p, r) => {
                let s = rouge_l(c.candidate, c.references[0]);
                vec![
                    ("P", s.precision, p),
                    ("R", s.recall, r),
                    ("F1", s.f1, f1(p, r)),
                ]
            }
            Expect::Bleu(n, sm, v) => {
                vec![("BLEU", bleu(c.candidate, c.references, n, sm).unwrap(), v)]
            }
        };
        for (what, got, want) in got {
            let ok = if c.identity {
                got == 1.0
            } else {
                (got - want).abs() <= 1e-9
            };
            if !ok {
                bad.push(format!("{}: {what} = {got}, expected {want}", c.name));
            }
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Gating. Node i may only depend on nodes before it, so every generated graph
// is acyclic with n0 as a root.

#[derive(Debug, Clone)]
pub enum Op {
    Start(usize),
    Quiz(usize, f64),
}

#[derive(Debug, Clone)]
pub struct GatingCase {
    pub prereqs: Vec<Vec<usize>>,
    pub threshold: f64,
    pub ops: Vec<Op>,
}

pub fn gating_case() -> impl Strategy<Value = GatingCase> {
    (1usize..=30)
        .prop_flat_map(|n| {
            let masks = proptest::collection::vec((any::<u32>(), any::<u32>()), n);
            let op = (any::<bool>(), 0..n, 0u32..=10).prop_map(|(start, i, s)| {
                if start {
                    Op::Start(i)
                } else {
                    Op::Quiz(i, f64::from(s) / 10.0)
                }
            });
            (
                masks,
                prop::sample::select(vec![0.5, 0.7, 1.0]),
                proptest::collection::vec(op, 0..=4 * n + 10),
            )
        })
        .prop_map(|(masks, threshold, ops)| {
            // Two masks ANDed give each earlier node a 1 in 4 chance.
            let prereqs = masks
                .iter()
                .enumerate()
                .map(|(i, (a, b))| (0..i).filter(|j| (a & b) >> j & 1 == 1).collect())
                .collect();
            GatingCase {
                prereqs,
                threshold,
                ops,
            }
        })
}

fn nid(i: usize) -> String {
    format!("n{i:02}")
}

pub fn gating_roadmap(case: &GatingCase) -> CourseRoadmap {
    let nodes = case
        .prereqs
        .iter()
        .enumerate()
        .map(|(i, ps)| {
            let ids: Vec<String> = ps.iter().map(|&p| nid(p)).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            TopicNode::new(&nid(i), &format!("Topic {i}"), &refs)
        })
        .collect();
    CourseRoadmap::new("course", "Course", nodes, DateTime::<Utc>::default())
}

/// Replays the operations against a hand-written model of the gating rule.
pub fn check_gating(case: &GatingCase) -> Result<(), TestCaseError> {
    let roadmap = gating_roadmap(case);
    let now = DateTime::<Utc>::default();
    let mut progress =
        initial_progress("u", &roadmap, now).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let n = case.prereqs.len();
    let mut passed: BTreeSet<usize> = BTreeSet::new();
    let open =
        |passed: &BTreeSet<usize>, i: usize| case.prereqs[i].iter().all(|p| passed.contains(p));

    for (step, op) in case.ops.iter().enumerate() {
        let (i, result) = match *op {
            Op::Start(i) => (i, progress.start_node(&nid(i), now).map(|_| ())),
            Op::Quiz(i, s) => (
                i,
                progress
                    .record_quiz_result(&roadmap, &nid(i), s, case.threshold, now)
                    .map(|_| ()),
            ),
        };
        match (op, open(&passed, i), passed.contains(&i)) {
            (_, false, _) => {
                prop_assert!(
                    matches!(result, Err(CurriculumError::NodeLocked(_))),
                    "step {step}: {op:?} on a locked node gave {result:?}"
                )
            }
            (Op::Quiz(..), true, true) => {
                prop_assert!(
                    matches!(result, Err(CurriculumError::AlreadyPassed(_))),
                    "step {step}: {result:?}"
                )
            }
            (Op::Quiz(_, s), true, false) => {
                prop_assert!(result.is_ok(), "step {step}: {result:?}");
                if *s >= case.threshold {
                    passed.insert(i);
                }
            }
            (Op::Start(_), true, _) => prop_assert!(result.is_ok(), "step {step}: {result:?}"),
        }

        let want_available: BTreeSet<String> = (0..n)
            .filter(|&j| !passed.contains(&j) && open(&passed, j))
            .map(nid)
            .collect();
        prop_assert_eq!(
            progress.available_nodes(),
            want_available,
            "available after step {}",
            step
        );
        for j in 0..n {
            let state = progress.state(&nid(j)).unwrap();
            prop_assert_eq!(
                state == NodeState::Passed,
                passed.contains(&j),
                "node {} after step {}",
                j,
                step
            );
            if state != NodeState::Locked {
                prop_assert!(
                    open(&passed, j),
                    "node {} is {:?} with a prerequisite not passed",
                    j,
                    state
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Retrieval. The expected ranking is computed from integer bag-of-words counts
// with an independent FNV-1a, and compared exactly: d_i / sqrt(N_i) against
// d_j / sqrt(N_j) is decided by d_i^2 N_j against d_j^2 N_i.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;
const MOCK_SEED: u64 = 0x5eed_0000_0000_0001;

pub fn oracle_bucket(token: &str) -> usize {
    let mut h = FNV_OFFSET;
    for b in MOCK_SEED.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % 256) as usize
}

/// Bucket counts of lowercase ASCII words separated by single spaces.
pub fn oracle_counts(text: &str) -> Vec<u64> {
    let mut v = vec![0u64; 256];
    for w in text.split(' ').filter(|w| !w.is_empty()) {
        v[oracle_bucket(w)] += 1;
    }
    v
}

fn dot(a: &[u64], b: &[u64]) -> u128 {
    a.iter().zip(b).map(|(x, y)| u128::from(x * y)).sum()
}

pub fn random_text(rng: &mut ChaCha8Rng, vocab: &[String], max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| vocab[rng.random_range(0..vocab.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut words = BTreeSet::new();
    while words.len() < size {
        let len = rng.random_range(2..=7);
        words.insert(
            (0..len)
                .map(|_| rng.random_range(b'a'..=b'z') as char)
                .collect::<String>(),
        );
    }
    words.into_iter().collect()
}

/// One random corpus and query; returns a description of the first mismatch.
pub fn retrieval_case(seed: u64, max_chunks: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = rng.random_range(5..=60);
    let vocab = vocabulary(&mut rng, vocab_size);
    let n = rng.random_range(1..=max_chunks);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let chunks: Vec<DocumentChunk> = ids
        .iter()
        .map(|&i| DocumentChunk {
            chunk_id: format!("c{i:04}"),
            source_doc: "doc".into(),
            text: random_text(&mut rng, &vocab, 12),
            span: (0, 1),
        })
        .collect();
    let emb = MockEmbedder;
    let index = build_index(&chunks, &emb).map_err(|e| e.to_string())?;
    for e in index.entries() {
        let norm: f64 = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(format!("{} has norm {norm}", e.chunk_id));
        }
    }
    let query = random_text(&mut rng, &vocab, 8);
    let k = rng.random_range(1..=n + 5);
    let hits = query_top_k(&index, &query, k, &emb).map_err(|e| e.to_string())?;

    let q = oracle_counts(&query);
    let qn = dot(&q, &q);
    let mut scored: Vec<(&str, u128, u128)> = chunks
        .iter()
        .map(|c| {
            let v = oracle_counts(&c.text);
            (c.chunk_id.as_str(), dot(&q, &v), dot(&v, &v))
        })
        .collect();
    scored.sort_by(|a, b| {
        (b.1 * b.1 * a.2)
            .cmp(&(a.1 * a.1 * b.2))
            .then_with(|| a.0.cmp(b.0))
    });
    scored.truncate(k);

    let got: Vec<&str> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
    let want: Vec<&str> = scored.iter().map(|s| s.0).collect();
    if got != want {
        return Err(format!(
            "seed {seed}: ranking differs\n got {got:?}\nwant {want:?}"
        ));
    }
    for (h, (_, d, nn)) in hits.iter().zip(&scored) {
        let want = *d as f64 / ((*nn as f64) * (qn as f64)).sqrt();
        if (h.score - want).abs() > 1e-9 {
            return Err(format!(
                "seed {seed}: {} scored {}, expected {want}",
                h.chunk_id, h.score
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Grading fixtures: sentence pairs drawn from the bundled corpus.

pub fn corpus_sentences() -> Vec<String> {
    autodidact::demo::demo_corpus()
        .iter()
        .flat_map(|d| {
            d.text
                .split(". ")
                .map(|s| s.trim().to_string())
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// `n` (student, reference) pairs; every fourth student answer repeats the
/// reference with scrambled letter case.
pub fn grading_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let sentences = corpus_sentences();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let r = sentences[rng.random_range(0..sentences.len())].clone();
            let s = if i % 4 == 0 {
                r.chars()
                    .map(|c| {
                        if rng.random_bool(0.5) {
                            c.to_ascii_uppercase()
                        } else {
                            c
                        }
                    })
                    .collect()
            } else {
                sentences[rng.random_range(0..sentences.len())].clone()
            };
            (s, r)
        })
        .collect()
}

/// Grades `(s, r)` and `(uppercase(s), r)` and requires identical results.
pub fn uppercase_failures(pairs: &[(String, String)], emb: &dyn Embedder) -> Vec<String> {
    let mut bad = Vec::new();
    for (s, r) in pairs {
        let a = grade_long_answer(s, r, emb, 0.75).unwrap();
        let b = grade_long_answer(&s.to_uppercase(), r, emb, 0.75).unwrap();
        if a != b {
            bad.push(format!("{s:?}: {a:?} vs {b:?}"));
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Store inspection.

/// Every file under `root` that is not a leftover temp file must be a whole
/// document: `.json` files parse as a versioned envelope, `.jsonl` files as
/// newline-terminated JSON lines.
pub fn partial_documents(root: &Path) -> Vec<String> {
    let mut bad = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type().unwrap().is_dir() {
                stack.push(path);
                continue;
            }
            if name.starts_with('.') && name.contains(".tmp-") {
                continue;
            }
            let bytes = std::fs::read(&path).unwrap();
            let ok = if name.ends_with(".jsonl") {
                bytes.is_empty()
                    || (bytes.ends_with(b"\n")
                        && bytes
                            .split(|b| *b == b'\n')
                            .filter(|l| !l.is_empty())
                            .all(|l| serde_json::from_slice::<serde_json::Value>(l).is_ok()))
            } else {
                serde_json::from_slice::<serde_json::Value>(&bytes)
                    .ok()
                    .is_some_and(|v| v["schema_version"] == 1 && v.get("document").is_some())
            };
            if !ok {
                bad.push(path.display().to_string());
            }
        }
    }
    bad
}

pub fn temp_files(root: &Path) -> usize {
    let mut count = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            if entry.file_type().unwrap().is_dir() {
                stack.push(entry.path());
            } else if entry.file_name().to_string_lossy().contains(".tmp-") {
                count += 1;
            }
        }
    }
    count
}

/// Byte contents of every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if entry.file_type().unwrap().is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
