use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::exec::Execution;

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    vector: Vec<f64>,
}

/// Disk-backed memo of another provider, keyed by SHA-256 of the text.
/// The file holds one `{key, vector}` record per line and is only appended to.
pub struct CachedEmbedder<P> {
    inner: P,
    path: PathBuf,
    memo: RwLock<HashMap<String, EmbeddingVector>>,
    writer: Mutex<File>,
}

fn text_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn open(inner: P, path: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let path = path.into();
        let err = |message: String| EmbedError::Cache { path: path.display().to_string(), message };
        let mut memo = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| err(e.to_string()))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", idx + 1)))?;
                if record.vector.len() != inner.dim() {
                    return Err(err(format!(
                        "line {}: cached vector has dimension {}, provider has {}",
                        idx + 1,
                        record.vector.len(),
                        inner.dim()
                    )));
                }
                memo.insert(record.key, EmbeddingVector::new(record.vector)?);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| err(e.to_string()))?;
        Ok(Self { inner, path, memo: RwLock::new(memo), writer: Mutex::new(writer) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.memo.read().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &str) -> Option<EmbeddingVector> {
        self.memo.read().ok()?.get(key).cloned()
    }

    fn store(&self, key: String, vector: &EmbeddingVector) -> Result<(), EmbedError> {
        let mut memo = self.memo.write().unwrap_or_else(|p| p.into_inner());
        if memo.contains_key(&key) {
            return Ok(());
        }
        let mut line = serde_json::to_string(&CacheRecord { key: key.clone(), vector: vector.values().to_vec() })
            .map_err(|e| EmbedError::Cache { path: self.path.display().to_string(), message: e.to_string() })?;
        line.push('\n');
        let mut writer = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        writer
            .write_all(line.as_bytes())
            .map_err(|e| EmbedError::Cache { path: self.path.display().to_string(), message: e.to_string() })?;
        memo.insert(key, vector.clone());
        Ok(())
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let key = text_key(text);
        if let Some(hit) = self.lookup(&key) {
            return Ok(hit);
        }
        let vector = self.inner.embed(text)?;
        self.store(key, &vector)?;
        Ok(vector)
    }

    fn embed_batch(&self, texts: &[&str], exec: Execution) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let keys: Vec<String> = texts.iter().map(|t| text_key(t)).collect();
        let mut out: Vec<Option<EmbeddingVector>> = keys.iter().map(|k| self.lookup(k)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let miss_texts: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed_batch(&miss_texts, exec)?;
            for (&i, vector) in missing.iter().zip(fresh) {
                self.store(keys[i].clone(), &vector)?;
                out[i] = Some(vector);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
