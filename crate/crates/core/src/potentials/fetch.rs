use std::path::Path;
use std::time::Duration;

use super::{scan_registry, PotentialSource, RegistryHandle};
use crate::potentials::PotentialRecord;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    /// Retryable transport failure.
    #[error("network error fetching {file}: {message}")]
    Network { file: String, message: String },
    #[error("invalid potential file name `{0}`")]
    InvalidName(String),
    #[error("i/o error writing {file}: {source}")]
    Io { file: String, source: std::io::Error },
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Network { .. })
    }
}

/// Remote source of potential files. `Ok(None)` means this source does not
/// have the file, which says nothing about whether it exists elsewhere.
pub trait PotentialFetcher: Send + Sync {
    fn enabled(&self) -> bool {
        true
    }

    fn fetch(&self, file_name: &str) -> Result<Option<Vec<u8>>, FetchError>;
}

/// Offline default.
#[derive(Debug, Clone, Copy, Default)]
pub struct DisabledFetcher;

impl PotentialFetcher for DisabledFetcher {
    fn enabled(&self) -> bool {
        false
    }

    fn fetch(&self, _file_name: &str) -> Result<Option<Vec<u8>>, FetchError> {
        Ok(None)
    }
}

/// Tries `GET {endpoint}/{file_name}` against each endpoint in order.
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    endpoints: Vec<String>,
    timeout: Duration,
}

impl HttpFetcher {
    pub fn new(endpoints: Vec<String>, timeout: Duration) -> Self {
        Self { endpoints, timeout }
    }
}

impl PotentialFetcher for HttpFetcher {
    fn enabled(&self) -> bool {
        !self.endpoints.is_empty()
    }

    fn fetch(&self, file_name: &str) -> Result<Option<Vec<u8>>, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| FetchError::Network { file: file_name.into(), message: e.to_string() })?;
        let mut last_err = None;
        for base in &self.endpoints {
            let url = format!("{}/{}", base.trim_end_matches('/'), file_name);
            match client.get(&url).send() {
                Ok(resp) if resp.status().is_success() => {
                    let bytes = resp
                        .bytes()
                        .map_err(|e| FetchError::Network { file: file_name.into(), message: e.to_string() })?;
                    return Ok(Some(bytes.to_vec()));
                }
                Ok(resp) if resp.status() == reqwest::StatusCode::NOT_FOUND => continue,
                Ok(resp) => last_err = Some(format!("{url}: HTTP {}", resp.status())),
                Err(e) => last_err = Some(format!("{url}: {e}")),
            }
        }
        match last_err {
            Some(message) => Err(FetchError::Network { file: file_name.into(), message }),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FetchOutcome {
    Fetched(PotentialRecord),
    /// Advisory only: the configured sources did not have the file.
    NotFound,
    Disabled,
}

/// Downloads a missing file into the registry directory and installs a new
/// registry snapshot containing it.
pub fn fetch_remote(
    file_name: &str,
    fetcher: &dyn PotentialFetcher,
    registry: &RegistryHandle,
) -> Result<FetchOutcome, FetchError> {
    if !fetcher.enabled() {
        return Ok(FetchOutcome::Disabled);
    }
    let valid = !file_name.is_empty()
        && !file_name.contains(['/', '\\'])
        && file_name != "."
        && file_name != ".."
        && registry.snapshot().table().match_name(file_name).is_some();
    if !valid {
        return Err(FetchError::InvalidName(file_name.into()));
    }
    let Some(bytes) = fetcher.fetch(file_name)? else {
        return Ok(FetchOutcome::NotFound);
    };

    let snapshot = registry.snapshot();
    let dir = snapshot.dir().to_path_buf();
    write_atomically(&dir, file_name, &bytes)?;

    let table = snapshot.table().clone();
    let next = registry.install(|current| {
        let mut rescanned = scan_registry(&dir, &table).unwrap_or_else(|_| current.clone());
        if let Some(rec) = rescanned.get(file_name).cloned() {
            rescanned = rescanned.with_record(PotentialRecord { source: PotentialSource::Downloaded, ..rec });
        }
        rescanned
    });
    next.save_cache().map_err(|e| FetchError::Io {
        file: file_name.into(),
        source: std::io::Error::other(e.to_string()),
    })?;
    match next.get(file_name) {
        Some(rec) => Ok(FetchOutcome::Fetched(rec.clone())),
        None => Err(FetchError::Io {
            file: file_name.into(),
            source: std::io::Error::other("downloaded file did not register"),
        }),
    }
}

fn write_atomically(dir: &Path, file_name: &str, bytes: &[u8]) -> Result<(), FetchError> {
    let io = |source| FetchError::Io { file: file_name.into(), source };
    let tmp = dir.join(format!(".{file_name}.part"));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, dir.join(file_name)).map_err(io)
}
