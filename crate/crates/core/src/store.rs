//! Embedded document store: one JSON file per document under a fixed set of
//! subtrees.
//!
//! Writes go to a hidden temp file in the destination directory, are synced,
//! and are then renamed over the target (or hard-linked for create-only
//! writes), so a reader sees either the previous document or the new one.
//! Every document is wrapped in `{"schema_version": N, "document": ...}`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subtree {
    Courses,
    Users,
    Decks,
    Sessions,
    Indexes,
    Datasets,
    Reports,
    Assessments,
}

impl Subtree {
    pub const ALL: [Subtree; 8] = [
        Subtree::Courses,
        Subtree::Users,
        Subtree::Decks,
        Subtree::Sessions,
        Subtree::Indexes,
        Subtree::Datasets,
        Subtree::Reports,
        Subtree::Assessments,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Subtree::Courses => "courses",
            Subtree::Users => "users",
            Subtree::Decks => "decks",
            Subtree::Sessions => "sessions",
            Subtree::Indexes => "indexes",
            Subtree::Datasets => "datasets",
            Subtree::Reports => "reports",
            Subtree::Assessments => "assessments",
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid storage key {0:?}")]
    InvalidKey(String),
    #[error("corrupt document {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("document {path} has schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersion { path: PathBuf, found: u32 },
    #[error("document {0} already exists")]
    AlreadyExists(PathBuf),
    #[error("injected fault at kill point {0}")]
    InjectedFault(u64),
}

/// Simulated crashes for persistence tests. Every write passes several kill
/// points; when the running count reaches the armed point the write stops
/// right there, leaving whatever a killed process would have left on disk.
#[derive(Debug, Default)]
pub struct FaultInjector {
    passed: AtomicU64,
    armed: Mutex<Option<u64>>,
}

impl FaultInjector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Arms a crash at the `n`-th kill point from now (1-based).
    pub fn arm(&self, n: u64) {
        let base = self.passed.load(Ordering::SeqCst);
        *self.armed.lock().expect("fault lock") = Some(base + n);
    }

    pub fn disarm(&self) {
        *self.armed.lock().expect("fault lock") = None;
    }

    pub fn points_passed(&self) -> u64 {
        self.passed.load(Ordering::SeqCst)
    }

    fn point(&self) -> Result<(), StoreError> {
        let n = self.passed.fetch_add(1, Ordering::SeqCst) + 1;
        let mut armed = self.armed.lock().expect("fault lock");
        if *armed == Some(n) {
            *armed = None;
            return Err(StoreError::InjectedFault(n));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    document: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    schema_version: u32,
    document: T,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    faults: Option<Arc<FaultInjector>>,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn check_segment(seg: &str) -> Result<(), StoreError> {
    let ok = !seg.is_empty()
        && !seg.starts_with('.')
        && seg
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidKey(seg.to_string()))
    }
}

fn is_temp(name: &str) -> bool {
    name.starts_with('.') && name.contains(".tmp-")
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for s in Subtree::ALL {
            fs::create_dir_all(root.join(s.dir_name()))?;
        }
        Ok(Self { root, faults: None })
    }

    pub fn with_faults(mut self, faults: Arc<FaultInjector>) -> Self {
        self.faults = Some(faults);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn subtree_dir(&self, sub: Subtree) -> PathBuf {
        self.root.join(sub.dir_name())
    }

    /// Path of the document at `key`; the last segment gets a `.json` suffix.
    pub fn path(&self, sub: Subtree, key: &[&str]) -> Result<PathBuf, StoreError> {
        let Some((last, dirs)) = key.split_last() else {
            return Err(StoreError::InvalidKey(String::new()));
        };
        let mut p = self.subtree_dir(sub);
        for seg in dirs {
            check_segment(seg)?;
            p.push(seg);
        }
        check_segment(last)?;
        p.push(format!("{last}.json"));
        Ok(p)
    }

    fn kill_point(&self) -> Result<(), StoreError> {
        match &self.faults {
            Some(f) => f.point(),
            None => Ok(()),
        }
    }

    fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>, StoreError> {
        let mut bytes = serde_json::to_vec_pretty(&EnvelopeOut {
            schema_version: SCHEMA_VERSION,
            document: value,
        })
        .map_err(|e| StoreError::Corrupt {
            path: PathBuf::new(),
            detail: e.to_string(),
        })?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes `bytes` to a synced temp file next to `dest` and returns its path.
    fn write_temp(&self, dest: &Path, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        let dir = dest.parent().expect("document paths have a parent");
        fs::create_dir_all(dir)?;
        let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("doc");
        let tmp = dir.join(format!(
            ".{name}.tmp-{}-{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp)?;
        self.kill_point()?;
        let half = bytes.len() / 2;
        f.write_all(&bytes[..half])?;
        self.kill_point()?;
        f.write_all(&bytes[half..])?;
        self.kill_point()?;
        f.sync_all()?;
        Ok(tmp)
    }

    fn sync_dir(dir: &Path) {
        // Directory fsync is best-effort; some filesystems refuse it.
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }

    /// Atomically creates or replaces the document at `key`.
    pub fn put<T: Serialize>(
        &self,
        sub: Subtree,
        key: &[&str],
        value: &T,
    ) -> Result<(), StoreError> {
        let dest = self.path(sub, key)?;
        let tmp = self.write_temp(&dest, &Self::encode(value)?)?;
        self.kill_point()?;
        fs::rename(&tmp, &dest)?;
        self.kill_point()?;
        Self::sync_dir(dest.parent().expect("parent"));
        Ok(())
    }

    /// Atomically creates the document at `key`; fails with `AlreadyExists`
    /// if it is already present. The first writer wins.
    pub fn put_new<T: Serialize>(
        &self,
        sub: Subtree,
        key: &[&str],
        value: &T,
    ) -> Result<(), StoreError> {
        let dest = self.path(sub, key)?;
        if dest.exists() {
            return Err(StoreError::AlreadyExists(dest));
        }
        let tmp = self.write_temp(&dest, &Self::encode(value)?)?;
        self.kill_point()?;
        let linked = fs::hard_link(&tmp, &dest);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::AlreadyExists(dest))
            }
            Err(e) => return Err(e.into()),
        }
        self.kill_point()?;
        Self::sync_dir(dest.parent().expect("parent"));
        Ok(())
    }

    /// Atomically writes a raw (non-envelope) file directly under a subtree,
    /// for artifacts such as the retrieval index.
    pub fn put_file(&self, sub: Subtree, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        check_segment(name)?;
        let dest = self.subtree_dir(sub).join(name);
        let tmp = self.write_temp(&dest, bytes)?;
        self.kill_point()?;
        fs::rename(&tmp, &dest)?;
        self.kill_point()?;
        Self::sync_dir(dest.parent().expect("parent"));
        Ok(())
    }

    /// Raw bytes of the stored file, envelope included.
    pub fn get_raw(&self, sub: Subtree, key: &[&str]) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.path(sub, key)?;
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn get<T: DeserializeOwned>(
        &self,
        sub: Subtree,
        key: &[&str],
    ) -> Result<Option<T>, StoreError> {
        let path = self.path(sub, key)?;
        let Some(bytes) = self.get_raw(sub, key)? else {
            return Ok(None);
        };
        let env: EnvelopeIn<serde_json::Value> =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                detail: e.to_string(),
            })?;
        if env.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                path,
                found: env.schema_version,
            });
        }
        serde_json::from_value(env.document)
            .map(Some)
            .map_err(|e| StoreError::Corrupt {
                path,
                detail: e.to_string(),
            })
    }

    pub fn exists(&self, sub: Subtree, key: &[&str]) -> Result<bool, StoreError> {
        Ok(self.path(sub, key)?.exists())
    }

    /// Document names (without `.json`) directly under `dir_key`.
    pub fn list(&self, sub: Subtree, dir_key: &[&str]) -> Result<Vec<String>, StoreError> {
        let mut dir = self.subtree_dir(sub);
        for seg in dir_key {
            check_segment(seg)?;
            dir.push(seg);
        }
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut names = Vec::new();
        for entry in entries {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".json") {
                if !stem.starts_with('.') {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// Deletes temp files left behind by interrupted writes. Returns how many
    /// were removed.
    pub fn recover(&self) -> Result<usize, StoreError> {
        fn walk(dir: &Path, removed: &mut usize) -> std::io::Result<()> {
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                let path = entry.path();
                if entry.file_type()?.is_dir() {
                    walk(&path, removed)?;
                } else if is_temp(&entry.file_name().to_string_lossy()) {
                    fs::remove_file(&path)?;
                    *removed += 1;
                }
            }
            Ok(())
        }
        let mut removed = 0;
        walk(&self.root, &mut removed)?;
        Ok(removed)
    }

    /// Every document path under the root, temp files excluded.
    pub fn document_paths(&self) -> Result<Vec<PathBuf>, StoreError> {
        fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                let path = entry.path();
                if entry.file_type()?.is_dir() {
                    walk(&path, out)?;
                } else if !is_temp(&entry.file_name().to_string_lossy()) {
                    out.push(path);
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out)?;
        out.sort();
        Ok(out)
    }
}

/// Per-key mutual exclusion (single writer per user/course or user/node).
#[derive(Debug, Default)]
pub struct KeyedLocks {
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl KeyedLocks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<R>(&self, key: &str, f: impl FnOnce() -> R) -> R {
        let lock = {
            let mut map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
            map.entry(key.to_string()).or_default().clone()
        };
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        n: u32,
    }

    #[test]
    fn put_get_round_trip_with_envelope() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        s.put(Subtree::Users, &["alice", "c1"], &Doc { n: 3 })
            .unwrap();
        assert_eq!(
            s.get::<Doc>(Subtree::Users, &["alice", "c1"]).unwrap(),
            Some(Doc { n: 3 })
        );
        let raw: serde_json::Value = serde_json::from_slice(
            &s.get_raw(Subtree::Users, &["alice", "c1"])
                .unwrap()
                .unwrap(),
        )
        .unwrap();
        assert_eq!(raw["schema_version"], SCHEMA_VERSION);
        assert_eq!(s.get::<Doc>(Subtree::Users, &["bob"]).unwrap(), None);
        assert_eq!(s.list(Subtree::Users, &["alice"]).unwrap(), vec!["c1"]);
    }

    #[test]
    fn keys_cannot_escape_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        for bad in ["..", "a/b", "", ".hidden"] {
            assert!(matches!(
                s.path(Subtree::Decks, &[bad]),
                Err(StoreError::InvalidKey(_))
            ));
        }
    }

    #[test]
    fn put_new_is_first_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        s.put_new(Subtree::Decks, &["u", "n"], &Doc { n: 1 })
            .unwrap();
        assert!(matches!(
            s.put_new(Subtree::Decks, &["u", "n"], &Doc { n: 2 }),
            Err(StoreError::AlreadyExists(_))
        ));
        assert_eq!(
            s.get::<Doc>(Subtree::Decks, &["u", "n"]).unwrap(),
            Some(Doc { n: 1 })
        );
        assert_eq!(s.recover().unwrap(), 0);
    }

    #[test]
    fn crash_leaves_old_version_and_a_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let faults = Arc::new(FaultInjector::new());
        let s = Store::open(dir.path()).unwrap().with_faults(faults.clone());
        s.put(Subtree::Reports, &["r"], &Doc { n: 1 }).unwrap();
        faults.arm(3);
        assert!(matches!(
            s.put(Subtree::Reports, &["r"], &Doc { n: 2 }),
            Err(StoreError::InjectedFault(_))
        ));
        assert_eq!(
            s.get::<Doc>(Subtree::Reports, &["r"]).unwrap(),
            Some(Doc { n: 1 })
        );
        assert_eq!(s.recover().unwrap(), 1);
    }

    #[test]
    fn schema_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        let p = s.path(Subtree::Courses, &["c"]).unwrap();
        fs::write(&p, br#"{"schema_version": 99, "document": {"n": 1}}"#).unwrap();
        assert!(matches!(
            s.get::<Doc>(Subtree::Courses, &["c"]),
            Err(StoreError::SchemaVersion { found: 99, .. })
        ));
    }
}
