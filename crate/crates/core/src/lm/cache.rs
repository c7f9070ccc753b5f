//! Content-addressed memoization around any backend, with optional
//! persistence and record-to-replay capture.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{sha256_hex, ChatBackend, ChatRequest, Embedder, LmError, ReplayRecord};

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheEntries {
    chat: BTreeMap<String, String>,
    embed: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    checksum: String,
    entries: CacheEntries,
}

fn checksum(entries: &CacheEntries) -> Result<String, LmError> {
    let body = serde_json::to_string(entries).map_err(|e| LmError::Payload(e.to_string()))?;
    Ok(sha256_hex(body.as_bytes()))
}

/// Outcome of reading a persisted cache file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheLoad {
    Missing,
    Loaded(usize),
    /// The file exists but failed its checksum or did not parse; the cache
    /// starts empty and the file is left untouched until the next save.
    Corrupt,
}

pub struct CachedBackend<B> {
    inner: B,
    entries: Mutex<CacheEntries>,
    record: Option<(PathBuf, Mutex<()>)>,
    upstream_calls: std::sync::atomic::AtomicUsize,
}

impl<B> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        CachedBackend {
            inner,
            entries: Mutex::new(CacheEntries::default()),
            record: None,
            upstream_calls: Default::default(),
        }
    }

    /// Appends every upstream chat response to `path` as a replay record.
    pub fn recording_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.record = Some((path.into(), Mutex::new(())));
        self
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Number of requests forwarded to the wrapped backend.
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls
            .load(std::sync::atomic::Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        let e = self.entries.lock().expect("cache mutex poisoned");
        e.chat.len() + e.embed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<CacheLoad, LmError> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(CacheLoad::Missing),
            Err(source) => {
                return Err(LmError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let parsed: CacheFile = match serde_json::from_str(&text) {
            Ok(f) => f,
            Err(e) => {
                warn!(path = %path.display(), error = %e, "cache file unreadable; bypassing");
                return Ok(CacheLoad::Corrupt);
            }
        };
        if checksum(&parsed.entries)? != parsed.checksum {
            warn!(path = %path.display(), "cache checksum mismatch; bypassing");
            return Ok(CacheLoad::Corrupt);
        }
        let n = parsed.entries.chat.len() + parsed.entries.embed.len();
        let mut e = self.entries.lock().expect("cache mutex poisoned");
        for (k, v) in parsed.entries.chat {
            e.chat.entry(k).or_insert(v);
        }
        for (k, v) in parsed.entries.embed {
            e.embed.entry(k).or_insert(v);
        }
        Ok(CacheLoad::Loaded(n))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        let path = path.as_ref();
        let e = self.entries.lock().expect("cache mutex poisoned");
        let file = CacheFile {
            checksum: checksum(&e)?,
            entries: CacheEntries {
                chat: e.chat.clone(),
                embed: e.embed.clone(),
            },
        };
        let text =
            serde_json::to_string_pretty(&file).map_err(|e| LmError::Payload(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| LmError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn append_record(&self, req: &ChatRequest, response: &str) -> Result<(), LmError> {
        let Some((path, lock)) = &self.record else {
            return Ok(());
        };
        let _guard = lock.lock().expect("record mutex poisoned");
        let line = serde_json::to_string(&ReplayRecord::new(req, response))
            .map_err(|e| LmError::Payload(e.to_string()))?;
        let io_err = |source| LmError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        writeln!(f, "{line}").map_err(io_err)
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        let key = req.cache_key();
        if let Some(hit) = self
            .entries
            .lock()
            .expect("cache mutex poisoned")
            .chat
            .get(&key)
        {
            return Ok(hit.clone());
        }
        self.upstream_calls
            .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let fresh = self.inner.complete(req)?;
        // A concurrent caller may have filled the slot meanwhile; whichever
        // value landed first is what every caller observes.
        let (value, inserted) = {
            let mut e = self.entries.lock().expect("cache mutex poisoned");
            match e.chat.get(&key) {
                Some(v) => (v.clone(), false),
                None => {
                    e.chat.insert(key, fresh.clone());
                    (fresh, true)
                }
            }
        };
        if inserted {
            self.append_record(req, &value)?;
        }
        Ok(value)
    }
}

fn embed_key(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

impl<B: Embedder> Embedder for CachedBackend<B> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LmError> {
        let missing: Vec<String> = {
            let e = self.entries.lock().expect("cache mutex poisoned");
            let mut seen = std::collections::BTreeSet::new();
            texts
                .iter()
                .filter(|t| !e.embed.contains_key(&embed_key(t)) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            self.upstream_calls
                .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let vecs = self.inner.embed(&missing)?;
            let mut e = self.entries.lock().expect("cache mutex poisoned");
            for (t, v) in missing.iter().zip(vecs) {
                e.embed.entry(embed_key(t)).or_insert(v);
            }
        }
        let e = self.entries.lock().expect("cache mutex poisoned");
        texts
            .iter()
            .map(|t| {
                e.embed
                    .get(&embed_key(t))
                    .cloned()
                    .ok_or_else(|| LmError::MissingFixture(t.clone()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl ChatBackend for Counting {
        fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("{}#{n}", req.user))
        }
    }

    #[test]
    fn identical_requests_hit_upstream_once() {
        let c = CachedBackend::new(Counting(AtomicUsize::new(0)));
        let req = ChatRequest::new("s", "u");
        let a = c.complete(&req).unwrap();
        let b = c.complete(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.upstream_calls(), 1);
    }

    #[test]
    fn tampered_cache_file_is_bypassed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let c = CachedBackend::new(Counting(AtomicUsize::new(0)));
        c.complete(&ChatRequest::new("s", "u")).unwrap();
        c.save(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("u#0", "u#9");
        std::fs::write(&path, text).unwrap();
        let fresh = CachedBackend::new(Counting(AtomicUsize::new(0)));
        assert_eq!(fresh.load(&path).unwrap(), CacheLoad::Corrupt);
        assert!(fresh.is_empty());
    }
}
