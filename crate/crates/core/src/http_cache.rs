//! On-disk response cache with live, record and replay modes.
//!
//! Each response is stored as one JSON file named after the request key,
//! a SHA-256 over the method, the URL with its query parameters sorted, and
//! the SHA-256 of the body. Headers are not part of the key.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::http::{HttpRequest, HttpResponse, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Always hit the network; the cache is neither read nor written.
    Live,
    /// Serve cached responses, fetch and store the missing ones.
    #[default]
    Record,
    /// Serve cached responses only; a miss is an error.
    Replay,
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(CacheMode::Live),
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            other => Err(format!("unknown cache mode {other:?} (expected live, record or replay)")),
        }
    }
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheMode::Live => "live",
            CacheMode::Record => "record",
            CacheMode::Replay => "replay",
        })
    }
}

/// URL with its query pairs sorted, so parameter order does not change the key.
pub fn canonical_url(raw: &str) -> String {
    let Ok(mut url) = url::Url::parse(raw) else {
        return raw.to_string();
    };
    let mut pairs: Vec<(String, String)> = url.query_pairs().into_owned().collect();
    if pairs.is_empty() {
        url.set_query(None);
        return url.to_string();
    }
    pairs.sort();
    url.query_pairs_mut().clear().extend_pairs(pairs);
    url.to_string()
}

pub fn request_key(request: &HttpRequest) -> String {
    let body_hash = Sha256::digest(request.body.as_deref().unwrap_or_default());
    let mut hasher = Sha256::new();
    hasher.update(request.method.as_str().as_bytes());
    hasher.update(b"\n");
    hasher.update(canonical_url(&request.url).as_bytes());
    hasher.update(b"\n");
    hasher.update(hex::encode(body_hash).as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpCacheEntry {
    pub request_key: String,
    pub method: String,
    pub url: String,
    pub status: u16,
    pub response_body: String,
    pub fetched_at: String,
}

/// Directory of cached responses, one file per request key.
#[derive(Debug)]
pub struct HttpCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl HttpCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), write_lock: Mutex::new(()) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<HttpCacheEntry>, TransportError> {
        let path = self.path_for(key);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| TransportError::Cache(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(TransportError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, entry: &HttpCacheEntry) -> Result<(), TransportError> {
        let cache_err = |e: std::io::Error| TransportError::Cache(format!("{}: {e}", self.dir.display()));
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(&self.dir).map_err(cache_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(cache_err)?;
        let mut text = serde_json::to_string_pretty(entry).map_err(|e| TransportError::Cache(e.to_string()))?;
        text.push('\n');
        tmp.write_all(text.as_bytes()).map_err(cache_err)?;
        tmp.persist(self.path_for(&entry.request_key)).map_err(|e| cache_err(e.error))?;
        Ok(())
    }
}

/// Transport front end implementing the three cache modes.
pub struct CachingTransport {
    mode: CacheMode,
    cache: Option<HttpCache>,
    upstream: Option<Box<dyn Transport>>,
    upstream_calls: AtomicUsize,
}

impl CachingTransport {
    /// `cache` is required for record and replay; `upstream` for live and record.
    pub fn new(mode: CacheMode, cache: Option<HttpCache>, upstream: Option<Box<dyn Transport>>) -> Result<Self, String> {
        match mode {
            CacheMode::Live if upstream.is_none() => return Err("live mode needs a network transport".into()),
            CacheMode::Record if upstream.is_none() || cache.is_none() => {
                return Err("record mode needs a network transport and a cache directory".into())
            }
            CacheMode::Replay if cache.is_none() => return Err("replay mode needs a cache directory".into()),
            _ => {}
        }
        let upstream = if mode == CacheMode::Replay { None } else { upstream };
        Ok(Self { mode, cache, upstream, upstream_calls: AtomicUsize::new(0) })
    }

    /// Replay-only transport over `dir`.
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self { mode: CacheMode::Replay, cache: Some(HttpCache::new(dir)), upstream: None, upstream_calls: AtomicUsize::new(0) }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    /// Requests forwarded to the upstream transport so far.
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    fn forward(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let upstream = self.upstream.as_ref().ok_or_else(|| TransportError::Cache("no upstream transport".into()))?;
        self.upstream_calls.fetch_add(1, Ordering::SeqCst);
        upstream.execute(request)
    }
}

impl Transport for CachingTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        if self.mode == CacheMode::Live {
            return self.forward(request);
        }
        let cache = self.cache.as_ref().ok_or_else(|| TransportError::Cache("no cache directory".into()))?;
        let key = request_key(request);
        if let Some(hit) = cache.get(&key)? {
            return Ok(HttpResponse { status: hit.status, body: hit.response_body });
        }
        if self.mode == CacheMode::Replay {
            return Err(TransportError::ReplayMiss { method: request.method.as_str(), url: request.url.clone(), key });
        }
        let response = self.forward(request)?;
        cache.put(&HttpCacheEntry {
            request_key: key,
            method: request.method.as_str().to_string(),
            url: request.url.clone(),
            status: response.status,
            response_body: response.body.clone(),
            fetched_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })?;
        Ok(response)
    }
}
