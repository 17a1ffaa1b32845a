//! File-backed, content-addressed store of system outputs.
//!
//! ```text
//! root/
//!   systems/{id}/meta.json       entry metadata and header
//!   systems/{id}/records.jsonl   canonical native system output
//!   systems/{id}/cache/{key}.json
//!   tmp/                         staging area, cleared on open
//! ```
//!
//! A system directory is staged under `tmp/` and renamed into place, so
//! readers see either no entry or a complete one.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use kgx_core::analysis::{single_analysis, AnalysisError};
use kgx_core::bucketizer::{available_features, FeatureSpec, Resources};
use kgx_core::confidence::CiConfig;
use kgx_core::sysout::{header_from_value, parse_bytes, SysoutError};
use kgx_core::{Metric, SingleAnalysisReport, SystemHeader, SystemOutput};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const SYSTEMS: &str = "systems";
const TMP: &str = "tmp";
const META: &str = "meta.json";
const RECORDS: &str = "records.jsonl";
const CACHE: &str = "cache";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no system with id '{0}'")]
    NotFound(String),
    #[error("invalid system output: {0}")]
    Validation(#[from] SysoutError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("corrupt store entry '{id}': {message}")]
    Corrupt { id: String, message: String },
    #[error("injected fault: {0:?}")]
    Injected(Fault),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
}

/// Crash points for fault-injection tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Staged files are written but never renamed into place.
    BeforeRename,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemEntry {
    pub id: String,
    pub header: SystemHeader,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    /// Insertion order; breaks created_at ties.
    pub sequence: u64,
    pub record_count: usize,
    pub records_path: PathBuf,
}

#[derive(Deserialize)]
struct MetaFile {
    id: String,
    header: serde_json::Value,
    created_at: u64,
    sequence: u64,
    record_count: usize,
}

/// Analysis parameters after defaults are resolved; the cache key is a
/// digest of this value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRequest {
    pub features: Vec<String>,
    pub metrics: Vec<Metric>,
    pub ci: Option<CiConfig>,
}

impl AnalysisRequest {
    /// Sorts and deduplicates. Empty feature or metric lists fall back to
    /// every feature available for `s` and the default metrics.
    pub fn normalize(features: &[FeatureSpec], metrics: &[Metric], ci: Option<CiConfig>, s: &SystemOutput, res: &Resources) -> Self {
        let features: BTreeSet<String> = if features.is_empty() {
            available_features(s, res).iter().map(|f| f.name().to_owned()).collect()
        } else {
            features.iter().map(|f| f.name().to_owned()).collect()
        };
        let metrics: BTreeSet<Metric> = if metrics.is_empty() {
            Metric::defaults().into_iter().collect()
        } else {
            metrics.iter().copied().collect()
        };
        AnalysisRequest {
            features: features.into_iter().collect(),
            metrics: metrics.into_iter().collect(),
            ci,
        }
    }

    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        self.features.iter().map(|f| FeatureSpec::parse(f)).collect()
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

pub struct Store {
    root: PathBuf,
    resources: Resources,
    resources_tag: String,
    /// Serializes writers; holds the next sequence number.
    writer: Mutex<u64>,
    fault: Mutex<Option<Fault>>,
    staging: AtomicU64,
    computes: AtomicU64,
}

impl Store {
    /// Opens or creates a store at `root`, discarding leftovers of
    /// interrupted writes.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(SYSTEMS))?;
        let tmp = root.join(TMP);
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let store = Store {
            root,
            resources: Resources::default(),
            resources_tag: String::new(),
            writer: Mutex::new(0),
            fault: Mutex::new(None),
            staging: AtomicU64::new(0),
            computes: AtomicU64::new(0),
        };
        let next = store.list()?.iter().map(|e| e.sequence + 1).max().unwrap_or(0);
        *store.writer.lock().expect("writer lock") = next;
        Ok(store)
    }

    /// Resources for built-in features. `tag` identifies them in cache keys.
    pub fn with_resources(mut self, resources: Resources, tag: impl Into<String>) -> Self {
        self.resources = resources;
        self.resources_tag = tag.into();
        self
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_fault(&self, fault: Option<Fault>) {
        *self.fault.lock().expect("fault lock") = fault;
    }

    /// Number of analyses computed rather than served from cache.
    pub fn compute_count(&self) -> u64 {
        self.computes.load(Ordering::SeqCst)
    }

    fn system_dir(&self, id: &str) -> PathBuf {
        self.root.join(SYSTEMS).join(id)
    }

    fn staging_path(&self, what: &str) -> PathBuf {
        let n = self.staging.fetch_add(1, Ordering::SeqCst);
        self.root.join(TMP).join(format!("{what}-{}-{n}", std::process::id()))
    }

    fn existing_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.system_dir(id);
        if valid_id(id) && dir.join(META).is_file() {
            Ok(dir)
        } else {
            Err(StoreError::NotFound(id.to_owned()))
        }
    }

    /// Parses, validates and stores a native system-output file.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<(String, bool), StoreError> {
        self.put(&parse_bytes(bytes)?)
    }

    /// Stores `s` under the digest of its canonical serialization. Returns
    /// the id and whether a new entry was created.
    pub fn put(&self, s: &SystemOutput) -> Result<(String, bool), StoreError> {
        s.validate()?;
        let bytes = s.to_bytes()?;
        let id = content_id(&bytes);
        let mut next = self.writer.lock().expect("writer lock");
        let dir = self.system_dir(&id);
        if dir.join(META).is_file() {
            return Ok((id, false));
        }
        let stage = self.staging_path("put");
        fs::create_dir_all(stage.join(CACHE))?;
        write_synced(&stage.join(RECORDS), &bytes)?;
        let meta = serde_json::json!({
            "id": id,
            "header": s.header,
            "created_at": now_ms(),
            "sequence": *next,
            "record_count": s.len(),
        });
        write_synced(&stage.join(META), serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes())?;
        if let Some(f) = *self.fault.lock().expect("fault lock") {
            return Err(StoreError::Injected(f));
        }
        fs::rename(&stage, &dir)?;
        *next += 1;
        log::info!("stored system {id} ({} records)", s.len());
        Ok((id, true))
    }

    fn read_entry(&self, dir: &Path) -> Result<SystemEntry, StoreError> {
        let raw = fs::read(dir.join(META))?;
        let corrupt = |message: String| StoreError::Corrupt {
            id: dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            message,
        };
        let meta: MetaFile = serde_json::from_slice(&raw).map_err(|e| corrupt(e.to_string()))?;
        let header = header_from_value(meta.header).map_err(|e| corrupt(e.to_string()))?;
        Ok(SystemEntry {
            records_path: dir.join(RECORDS),
            id: meta.id,
            header,
            created_at: meta.created_at,
            sequence: meta.sequence,
            record_count: meta.record_count,
        })
    }

    /// All entries ordered by creation.
    pub fn list(&self) -> Result<Vec<SystemEntry>, StoreError> {
        let mut out = Vec::new();
        for item in fs::read_dir(self.root.join(SYSTEMS))? {
            let path = item?.path();
            if path.join(META).is_file() {
                out.push(self.read_entry(&path)?);
            }
        }
        out.sort_by_key(|e| (e.created_at, e.sequence));
        Ok(out)
    }

    pub fn entry(&self, id: &str) -> Result<SystemEntry, StoreError> {
        self.read_entry(&self.existing_dir(id)?)
    }

    pub fn get(&self, id: &str) -> Result<SystemOutput, StoreError> {
        let dir = self.existing_dir(id)?;
        let bytes = fs::read(dir.join(RECORDS))?;
        parse_bytes(&bytes).map_err(|e| StoreError::Corrupt {
            id: id.to_owned(),
            message: e.to_string(),
        })
    }

    /// Removes the entry and its cached reports.
    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        let _guard = self.writer.lock().expect("writer lock");
        let dir = self.existing_dir(id)?;
        let trash = self.staging_path("delete");
        fs::rename(&dir, &trash)?;
        fs::remove_dir_all(&trash)?;
        log::info!("deleted system {id}");
        Ok(())
    }

    /// Normalizes the request against the stored system and this store's
    /// resources.
    pub fn request_for(&self, id: &str, features: &[FeatureSpec], metrics: &[Metric], ci: Option<CiConfig>) -> Result<AnalysisRequest, StoreError> {
        let s = self.get(id)?;
        Ok(AnalysisRequest::normalize(features, metrics, ci, &s, &self.resources))
    }

    fn cache_key(&self, req: &AnalysisRequest) -> String {
        let body = serde_json::json!({ "request": req, "resources": self.resources_tag });
        content_id(body.to_string().as_bytes())
    }

    /// Report for `id` under `req`, computed once and then served from the
    /// cache. Returns the report and its JSON text.
    pub fn analysis_cached(&self, id: &str, req: &AnalysisRequest) -> Result<(SingleAnalysisReport, String), StoreError> {
        let dir = self.existing_dir(id)?;
        let path = dir.join(CACHE).join(format!("{}.json", self.cache_key(req)));
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(report) = serde_json::from_str(&text) {
                return Ok((report, text));
            }
            log::warn!("discarding unreadable cache file {}", path.display());
        }
        let s = self.get(id)?;
        let report = single_analysis(&s, &req.feature_specs(), &req.metrics, req.ci.as_ref(), &self.resources)?;
        self.computes.fetch_add(1, Ordering::SeqCst);
        let text = report.to_json();
        let stage = self.staging_path("cache");
        write_synced(&stage, text.as_bytes())?;
        if let Err(e) = fs::rename(&stage, &path) {
            // The entry was deleted meanwhile; the report is still valid.
            let _ = fs::remove_file(&stage);
            log::warn!("could not cache report for {id}: {e}");
        }
        Ok((report, text))
    }
}
