use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{CatalogError, Result};

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub attempts: u32,
    /// Delay before the second attempt; doubled for each further attempt.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Where a verified file with this checksum lives inside the cache.
pub fn cache_path(cache_dir: &Path, sha256: &str) -> PathBuf {
    cache_dir.join("sha256").join(sha256)
}

pub(crate) fn is_remote(url: &str) -> bool {
    url.starts_with("http://") || url.starts_with("https://")
}

/// Local path for a `file://` URL or plain path.
pub(crate) fn local_path(url: &str) -> PathBuf {
    PathBuf::from(url.strip_prefix("file://").unwrap_or(url))
}

/// Copies `url` into the content-addressed cache and returns its path.
///
/// A cached file is returned without any transfer. Otherwise the body is
/// streamed to a temporary file, hashed, and renamed into place only if
/// the digest matches; on mismatch nothing is left in the cache.
pub fn fetch(url: &str, sha256: &str, cache_dir: &Path, options: &FetchOptions) -> Result<PathBuf> {
    let target = cache_path(cache_dir, sha256);
    if target.is_file() {
        return Ok(target);
    }
    let dir = target.parent().expect("cache path has a parent");
    fs::create_dir_all(dir).map_err(|e| CatalogError::io(dir, e))?;
    let tmp = tempfile_in(dir, sha256);

    let digest = if is_remote(url) {
        download_with_retry(url, &tmp.path, options)?
    } else {
        let src = local_path(url);
        let mut input = File::open(&src).map_err(|e| CatalogError::io(&src, e))?;
        copy_hashing(&mut input, &tmp.path).map_err(|e| CatalogError::io(&src, e))?
    };
    if digest != sha256 {
        return Err(CatalogError::ChecksumMismatch {
            file: url.to_string(),
            expected: sha256.to_string(),
            actual: digest,
        });
    }
    fs::rename(&tmp.path, &target).map_err(|e| CatalogError::io(&target, e))?;
    Ok(target)
}

/// Temporary file removed on drop unless renamed away.
struct TempFile {
    path: PathBuf,
}

impl Drop for TempFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn tempfile_in(dir: &Path, stem: &str) -> TempFile {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let path = dir.join(format!(".tmp-{stem}-{}-{nanos}", std::process::id()));
    TempFile { path }
}

fn copy_hashing(input: &mut dyn Read, dest: &Path) -> io::Result<String> {
    let mut out = File::create(dest)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = input.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        out.write_all(&buf[..n])?;
    }
    out.sync_all()?;
    Ok(hex::encode(hasher.finalize()))
}

fn download_with_retry(url: &str, dest: &Path, options: &FetchOptions) -> Result<String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(options.timeout))
        .build()
        .into();
    let attempts = options.attempts.max(1);
    let mut backoff = options.initial_backoff;
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        match download_once(&agent, url, dest) {
            Ok(digest) => return Ok(digest),
            Err(e) => last_error = e,
        }
        if attempt < attempts {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(CatalogError::NetworkFailure {
        url: url.to_string(),
        attempts,
        reason: last_error,
    })
}

fn download_once(agent: &ureq::Agent, url: &str, dest: &Path) -> std::result::Result<String, String> {
    let response = agent.get(url).call().map_err(|e| e.to_string())?;
    let mut reader = response.into_body().into_reader();
    copy_hashing(&mut reader, dest).map_err(|e| e.to_string())
}
