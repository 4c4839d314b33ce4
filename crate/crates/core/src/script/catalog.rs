use std::collections::BTreeSet;
use std::path::Path;

const BUNDLED: &str = include_str!("../../data/lammps_commands.txt");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read command catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Known top-level command keywords, loaded from a plain-text file with one
/// keyword per line. `#` starts a comment; a `catalog-version:` comment sets
/// the version string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandCatalog {
    version: Option<String>,
    keywords: BTreeSet<String>,
}

impl Default for CommandCatalog {
    fn default() -> Self {
        Self::bundled()
    }
}

impl CommandCatalog {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        let mut version = None;
        let mut keywords = BTreeSet::new();
        for line in text.lines() {
            let (body, comment) = match line.split_once('#') {
                Some((b, c)) => (b, Some(c)),
                None => (line, None),
            };
            if let Some(v) = comment.and_then(|c| c.trim().strip_prefix("catalog-version:")) {
                version = Some(v.trim().to_string());
            }
            let kw = body.trim();
            if !kw.is_empty() {
                keywords.insert(kw.to_lowercase());
            }
        }
        Self { version, keywords }
    }

    pub fn contains(&self, keyword: &str) -> bool {
        self.keywords.contains(keyword)
    }

    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}
