//! Local dataset catalog.
//!
//! A catalog is a directory of manifests, `<store>/<name>/<version>/manifest.json`,
//! plus a content-addressed download cache `<cache>/sha256/<hex>`. Record
//! files stay where their owners put them; manifests only point at them.

mod fetch;
mod manifest;
mod split;

use std::fs::{self, File};
use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::DatasetSchema;
use crate::store::{Reader, StoreError};
use crate::transforms::{EpisodeResult, TransformError};

pub use fetch::{cache_path, fetch, sha256_file, FetchOptions};
pub use manifest::{schema_digest, Manifest, SplitFile};
pub use split::SplitExpr;

/// Overrides the default download cache location.
pub const CACHE_DIR_ENV: &str = "EPILOGUE_CACHE_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("{name}@{version} is already registered")]
    DuplicateVersion { name: String, version: String },
    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("schema digest mismatch for {file}: manifest has {expected}, file has {actual}")]
    SchemaDigestMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("dataset {dataset} has no split {split}")]
    UnknownSplit { dataset: String, split: String },
    #[error("bad split expression {0}")]
    BadSplitExpr(String),
    #[error("fetching {url} failed after {attempts} attempts: {reason}")]
    NetworkFailure { url: String, attempts: u32, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::Io { .. } => "IO_FAILURE",
            CatalogError::InvalidManifest(_) => "INVALID_MANIFEST",
            CatalogError::DuplicateVersion { .. } => "DUPLICATE_VERSION",
            CatalogError::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            CatalogError::SchemaDigestMismatch { .. } => "SCHEMA_DIGEST_MISMATCH",
            CatalogError::UnknownDataset(_) => "UNKNOWN_DATASET",
            CatalogError::UnknownSplit { .. } => "UNKNOWN_SPLIT",
            CatalogError::BadSplitExpr(_) => "BAD_SPLIT_EXPR",
            CatalogError::NetworkFailure { .. } => "NETWORK_FAILURE",
            CatalogError::Store(e) => e.code(),
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> CatalogError {
        CatalogError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct Catalog {
    store_dir: PathBuf,
    cache_dir: PathBuf,
    fetch_options: FetchOptions,
}

impl Catalog {
    /// Catalog rooted at `store_dir`. The cache is `$EPILOGUE_CACHE_DIR`
    /// when set, else `<store>/.cache`.
    pub fn open(store_dir: impl Into<PathBuf>) -> Catalog {
        let store_dir = store_dir.into();
        let cache_dir = match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => store_dir.join(".cache"),
        };
        Catalog {
            store_dir,
            cache_dir,
            fetch_options: FetchOptions::default(),
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = dir.into();
        self
    }

    pub fn with_fetch_options(mut self, options: FetchOptions) -> Self {
        self.fetch_options = options;
        self
    }

    pub fn store_dir(&self) -> &Path {
        &self.store_dir
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    fn manifest_path(&self, name: &str, version: &str) -> PathBuf {
        self.store_dir.join(name).join(version).join(MANIFEST_FILE)
    }

    /// Verifies and persists `manifest`; returns the stored form, in which
    /// relative local paths have been made absolute.
    ///
    /// Every local file must exist, match its checksum and episode count,
    /// and embed a schema whose digest equals `schema_digest`. Remote files
    /// are checked when first loaded.
    pub fn register(&self, manifest: &Manifest) -> Result<Manifest> {
        manifest.check_valid()?;
        let mut stored = manifest.clone();
        for files in stored.splits.values_mut() {
            for f in files.iter_mut() {
                if fetch::is_remote(&f.url) {
                    continue;
                }
                let path = fetch::local_path(&f.url);
                if path.is_relative() {
                    let abs = std::path::absolute(&path).map_err(|e| CatalogError::io(&path, e))?;
                    f.url = abs.to_string_lossy().into_owned();
                }
                let reader = self.verify_local(f, &stored.schema_digest)?;
                if reader.episode_count() != f.episode_count {
                    return Err(CatalogError::InvalidManifest(format!(
                        "{} holds {} episodes, manifest says {}",
                        f.url,
                        reader.episode_count(),
                        f.episode_count
                    )));
                }
            }
        }

        fs::create_dir_all(&self.store_dir).map_err(|e| CatalogError::io(&self.store_dir, e))?;
        let lock_path = self.store_dir.join(LOCK_FILE);
        let lock = File::create(&lock_path).map_err(|e| CatalogError::io(&lock_path, e))?;
        lock.lock().map_err(|e| CatalogError::io(&lock_path, e))?;

        let path = self.manifest_path(&stored.name, &stored.version);
        if path.exists() {
            return Err(CatalogError::DuplicateVersion {
                name: stored.name,
                version: stored.version,
            });
        }
        let dir = path.parent().expect("manifest path has a parent");
        fs::create_dir_all(dir).map_err(|e| CatalogError::io(dir, e))?;
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, stored.canonical_bytes()).map_err(|e| CatalogError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CatalogError::io(&path, e))?;
        Ok(stored)
    }

    /// Checks a local file's checksum and schema digest and opens it.
    fn verify_local(&self, file: &SplitFile, digest: &str) -> Result<Reader> {
        let path = fetch::local_path(&file.url);
        let actual = sha256_file(&path).map_err(|e| CatalogError::io(&path, e))?;
        if actual != file.sha256 {
            return Err(CatalogError::ChecksumMismatch {
                file: file.url.clone(),
                expected: file.sha256.clone(),
                actual,
            });
        }
        open_checked(&path, &file.url, digest)
    }

    /// Every registered `(name, version)`, sorted by name then version.
    pub fn list(&self) -> Result<Vec<(String, semver::Version)>> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.store_dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(CatalogError::io(&self.store_dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| CatalogError::io(&self.store_dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.path().is_dir() {
                continue;
            }
            for v in fs::read_dir(entry.path()).map_err(|e| CatalogError::io(&entry.path(), e))? {
                let v = v.map_err(|e| CatalogError::io(&entry.path(), e))?;
                let Ok(version) = semver::Version::parse(&v.file_name().to_string_lossy()) else {
                    continue;
                };
                if v.path().join(MANIFEST_FILE).is_file() {
                    out.push((name.clone(), version));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// The manifest of `name` at `version`, or at its highest version.
    pub fn manifest(&self, name: &str, version: Option<&str>) -> Result<Manifest> {
        let version = match version {
            Some(v) => v.to_string(),
            None => self
                .list()?
                .into_iter()
                .filter(|(n, _)| n == name)
                .map(|(_, v)| v)
                .max()
                .ok_or_else(|| CatalogError::UnknownDataset(name.to_string()))?
                .to_string(),
        };
        let path = self.manifest_path(name, &version);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(CatalogError::UnknownDataset(format!("{name}@{version}")))
            }
            Err(e) => return Err(CatalogError::io(&path, e)),
        };
        Manifest::from_json(&bytes)
    }

    /// Local path of a split file, downloading remote files into the cache.
    /// Local files are re-hashed on every call.
    pub fn fetch(&self, file: &SplitFile) -> Result<PathBuf> {
        if fetch::is_remote(&file.url) {
            return fetch(&file.url, &file.sha256, &self.cache_dir, &self.fetch_options);
        }
        let path = fetch::local_path(&file.url);
        let actual = sha256_file(&path).map_err(|e| CatalogError::io(&path, e))?;
        if actual != file.sha256 {
            return Err(CatalogError::ChecksumMismatch {
                file: file.url.clone(),
                expected: file.sha256.clone(),
                actual,
            });
        }
        Ok(path)
    }

    /// Opens the episodes selected by `split` (e.g. `train[:10]`) of
    /// `dataset`, given as `name` or `name@version`.
    pub fn load(&self, dataset: &str, split: &str) -> Result<LoadedSplit> {
        let expr: SplitExpr = split.parse()?;
        let (name, version) = match dataset.split_once('@') {
            Some((n, v)) => (n, Some(v)),
            None => (dataset, None),
        };
        let manifest = self.manifest(name, version)?;
        let files = manifest.splits.get(&expr.name).ok_or_else(|| CatalogError::UnknownSplit {
            dataset: dataset.to_string(),
            split: expr.name.clone(),
        })?;
        let mut readers = Vec::with_capacity(files.len());
        for f in files {
            let path = self.fetch(f)?;
            readers.push(open_checked(&path, &f.url, &manifest.schema_digest)?);
        }
        let total = readers.iter().map(Reader::episode_count).sum();
        let range = expr.range(total);
        Ok(LoadedSplit {
            manifest,
            expr,
            readers,
            range,
        })
    }
}

fn open_checked(path: &Path, url: &str, digest: &str) -> Result<Reader> {
    let reader = Reader::open(path)?;
    let actual = schema_digest(reader.schema());
    if actual != digest {
        return Err(CatalogError::SchemaDigestMismatch {
            file: url.to_string(),
            expected: digest.to_string(),
            actual,
        });
    }
    Ok(reader)
}

/// Episodes of one split range, read lazily from the split's files.
#[derive(Debug)]
pub struct LoadedSplit {
    manifest: Manifest,
    expr: SplitExpr,
    readers: Vec<Reader>,
    range: Range<u64>,
}

impl LoadedSplit {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn split(&self) -> &SplitExpr {
        &self.expr
    }

    pub fn readers(&self) -> &[Reader] {
        &self.readers
    }

    /// Schema shared by every file of the split, if it has any.
    pub fn schema(&self) -> Option<&DatasetSchema> {
        self.readers.first().map(Reader::schema)
    }

    /// Split-wide episode indices selected by the expression.
    pub fn range(&self) -> Range<u64> {
        self.range.clone()
    }

    pub fn len(&self) -> u64 {
        self.range.end - self.range.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The selected episodes in manifest file order.
    pub fn episodes(&self) -> impl Iterator<Item = EpisodeResult> + '_ {
        let mut offset = 0u64;
        let mut spans = Vec::with_capacity(self.readers.len());
        for r in &self.readers {
            let n = r.episode_count();
            let lo = self.range.start.max(offset);
            let hi = self.range.end.min(offset + n);
            if lo < hi {
                spans.push((r, lo - offset..hi - offset));
            }
            offset += n;
        }
        spans
            .into_iter()
            .flat_map(|(r, span)| span.map(move |i| r.get_episode(i).map_err(TransformError::from)))
    }
}
