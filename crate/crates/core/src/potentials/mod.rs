//! Local catalog of interatomic potential files: scanning, lookup, Top-K
//! similarity recommendations and optional remote fetching.

mod elements;
mod fetch;
mod probe;
mod similarity;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::script::{ExtensionTable, PotentialRef, ScriptDocument};

pub use elements::{guess_elements, is_element};
pub use fetch::{fetch_remote, DisabledFetcher, FetchError, FetchOutcome, HttpFetcher, PotentialFetcher};
pub use probe::{existence_probe, Existence};
pub use similarity::{find_similar, trigram_jaccard, trigrams, SimilarityWeights};

/// Cache file kept next to the potentials; not a potential itself.
pub const CACHE_FILE: &str = ".mdforge-registry.json";

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("potentials directory not found: {0}")]
    DirNotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad registry cache {path}: {source}")]
    Cache { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialSource {
    Local,
    Downloaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialRecord {
    pub file_name: String,
    pub path: PathBuf,
    pub family: String,
    pub elements: Vec<String>,
    pub size_bytes: u64,
    pub source: PotentialSource,
}

/// Persisted form of a record (paths are re-derived on load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    file_name: String,
    family: String,
    elements: Vec<String>,
    size_bytes: u64,
    source: PotentialSource,
}

/// Immutable snapshot of a potentials directory, ordered by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    dir: PathBuf,
    table: ExtensionTable,
    records: Vec<PotentialRecord>,
}

impl Registry {
    pub fn empty(dir: impl Into<PathBuf>, table: ExtensionTable) -> Self {
        Self { dir: dir.into(), table, records: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn table(&self) -> &ExtensionTable {
        &self.table
    }

    pub fn records(&self) -> &[PotentialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Exact lookup by base file name.
    pub fn get(&self, file_name: &str) -> Option<&PotentialRecord> {
        let base = base_name(file_name);
        self.records
            .binary_search_by(|r| r.file_name.as_str().cmp(base))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Record plus the first `max_lines` lines of the file.
    pub fn info(&self, file_name: &str, max_lines: usize) -> Option<PotentialInfo> {
        let record = self.get(file_name)?.clone();
        let head = read_head(&record.path, 64 * 1024)
            .map(|text| text.lines().take(max_lines).map(str::to_string).collect())
            .unwrap_or_default();
        Some(PotentialInfo { record, head })
    }

    pub fn save_cache(&self) -> Result<(), RegistryError> {
        let path = self.dir.join(CACHE_FILE);
        let entries: Vec<CacheEntry> = self
            .records
            .iter()
            .map(|r| CacheEntry {
                file_name: r.file_name.clone(),
                family: r.family.clone(),
                elements: r.elements.clone(),
                size_bytes: r.size_bytes,
                source: r.source,
            })
            .collect();
        let json = serde_json::to_string_pretty(&entries).expect("cache entries serialize");
        std::fs::write(&path, json).map_err(|source| RegistryError::Io { path, source })
    }

    pub(crate) fn with_record(&self, record: PotentialRecord) -> Self {
        let mut next = self.clone();
        next.records.retain(|r| r.file_name != record.file_name);
        next.records.push(record);
        next.records.sort_by(|a, b| a.file_name.cmp(&b.file_name));
        next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialInfo {
    pub record: PotentialRecord,
    pub head: Vec<String>,
}

/// Scans `dir` for files whose names match the extension table.
pub fn scan_registry(dir: &Path, table: &ExtensionTable) -> Result<Registry, RegistryError> {
    if !dir.is_dir() {
        return Err(RegistryError::DirNotFound(dir.to_path_buf()));
    }
    let cached = load_cache(dir)?;
    let io_err = |source| RegistryError::Io { path: dir.to_path_buf(), source };

    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let path = entry.path();
        let Some(file_name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        let Some(family) = table.family_of(&file_name).map(str::to_string) else {
            continue;
        };
        let meta = match std::fs::metadata(&path) {
            Ok(m) if m.is_file() => m,
            _ => continue,
        };
        // unreadable files are not registered
        if std::fs::File::open(&path).is_err() {
            continue;
        }
        let elements = header_elements(&path, &family).unwrap_or_else(|| guess_elements(&stem_keep_case(&file_name, table)));
        let source = cached.get(&file_name).map(|c| c.source).unwrap_or(PotentialSource::Local);
        records.push(PotentialRecord { file_name, path, family, elements, size_bytes: meta.len(), source });
    }
    records.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    Ok(Registry { dir: dir.to_path_buf(), table: table.clone(), records })
}

fn load_cache(dir: &Path) -> Result<BTreeMap<String, CacheEntry>, RegistryError> {
    let path = dir.join(CACHE_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(source) => return Err(RegistryError::Io { path, source }),
    };
    let entries: Vec<CacheEntry> =
        serde_json::from_str(&text).map_err(|source| RegistryError::Cache { path, source })?;
    Ok(entries.into_iter().map(|e| (e.file_name.clone(), e)).collect())
}

/// Shared, swappable registry. Readers take an `Arc` snapshot that never
/// changes; rescans and fetches install a new snapshot.
#[derive(Debug)]
pub struct RegistryHandle {
    current: RwLock<Arc<Registry>>,
}

impl RegistryHandle {
    pub fn new(registry: Registry) -> Self {
        Self { current: RwLock::new(Arc::new(registry)) }
    }

    pub fn snapshot(&self) -> Arc<Registry> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn rescan(&self) -> Result<Arc<Registry>, RegistryError> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        let next = Arc::new(scan_registry(guard.dir(), guard.table())?);
        *guard = next.clone();
        Ok(next)
    }

    pub(crate) fn install(&self, f: impl FnOnce(&Registry) -> Registry) -> Arc<Registry> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        let next = Arc::new(f(&guard));
        *guard = next.clone();
        next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub record: PotentialRecord,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialCheckReport {
    pub available: Vec<(PotentialRef, PotentialRecord)>,
    pub missing: Vec<PotentialRef>,
    /// Missing file name to ranked recommendations.
    pub recommendations: BTreeMap<String, Vec<Recommendation>>,
}

impl PotentialCheckReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Classifies every potential reference of `doc` as available or missing,
/// attaching Top-`k` recommendations to each missing name.
pub fn check_script_potentials(
    doc: &ScriptDocument,
    registry: &Registry,
    k: usize,
    weights: &SimilarityWeights,
) -> PotentialCheckReport {
    let mut report = PotentialCheckReport::default();
    for r in &doc.potential_refs {
        match registry.get(&r.file_name) {
            Some(record) => report.available.push((r.clone(), record.clone())),
            None => {
                report.missing.push(r.clone());
                report
                    .recommendations
                    .entry(r.file_name.clone())
                    .or_insert_with(|| find_similar(&r.file_name, registry, k, weights));
            }
        }
    }
    report
}

pub(crate) fn base_name(name: &str) -> &str {
    name.rsplit(['/', '\\']).next().unwrap_or(name)
}

/// File name with the matched extension removed, original case kept.
pub(crate) fn stem_keep_case(name: &str, table: &ExtensionTable) -> String {
    let base = base_name(name);
    match table.match_name(base) {
        Some((suffix, _)) => base[..base.len() - suffix.len()].to_string(),
        None => base.to_string(),
    }
}

fn read_head(path: &Path, limit: u64) -> Option<String> {
    let mut buf = Vec::new();
    std::fs::File::open(path).ok()?.take(limit).read_to_end(&mut buf).ok()?;
    Some(String::from_utf8_lossy(&buf).into_owned())
}

/// Elements declared in the header of EAM-family files:
/// setfl (`eam/alloy`, `eam/fs`) line 4 is `N El1 El2 ...`;
/// funcfl (`eam`) line 2 starts with the atomic number.
fn header_elements(path: &Path, family: &str) -> Option<Vec<String>> {
    let head = read_head(path, 16 * 1024)?;
    let mut lines = head.lines();
    match family {
        "eam/alloy" | "eam/fs" => {
            let line = lines.nth(3)?;
            let mut tokens = line.split_whitespace();
            let n: usize = tokens.next()?.parse().ok()?;
            let elements: Vec<String> = tokens.take(n).map(str::to_string).collect();
            (elements.len() == n && n > 0 && elements.iter().all(|e| is_element(e))).then_some(elements)
        }
        "eam" => {
            let line = lines.nth(1)?;
            let z: usize = line.split_whitespace().next()?.parse().ok()?;
            elements::symbol_for(z).map(|s| vec![s.to_string()])
        }
        _ => None,
    }
}
