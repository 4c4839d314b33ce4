use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("IO_ERROR: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trajectory has no rewritten query")]
    NotRecyclable,
}

/// One training record, in instruction-tuning shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub instruction: String,
    pub original_query: String,
    pub code: String,
    pub feedback: String,
    pub reward: f64,
}

/// Append-only JSON-lines file. Each record is written with a single
/// `write` call on an `O_APPEND` handle, so lines never interleave or tear
/// across writers.
#[derive(Debug)]
pub struct TrajectoryPool {
    path: PathBuf,
    lock: Mutex<()>,
}

impl TrajectoryPool {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), lock: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `record`; returns the number of records now in the file.
    pub fn append(&self, record: &PoolRecord) -> Result<usize, PoolError> {
        let io = |source| PoolError::Io { path: self.path.clone(), source };
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        f.write_all(line.as_bytes()).map_err(io)?;
        f.sync_data().map_err(io)?;
        drop(f);
        self.count_unlocked()
    }

    pub fn count(&self) -> Result<usize, PoolError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        self.count_unlocked()
    }

    fn count_unlocked(&self) -> Result<usize, PoolError> {
        Ok(self.read_unlocked()?.len())
    }

    /// Every complete record; a torn final line is skipped.
    pub fn read_all(&self) -> Result<Vec<PoolRecord>, PoolError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        self.read_unlocked()
    }

    fn read_unlocked(&self) -> Result<Vec<PoolRecord>, PoolError> {
        let f = match std::fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(PoolError::Io { path: self.path.clone(), source }),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|source| PoolError::Io { path: self.path.clone(), source })?;
            if let Ok(r) = serde_json::from_str(&line) {
                out.push(r);
            }
        }
        Ok(out)
    }
}
