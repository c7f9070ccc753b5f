use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, ChatBackend, ChatRequest, LmError};

/// Hashes of the request parts, stored next to each recorded response so a
/// replay file can be audited without carrying full prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDigest {
    pub system_sha256: String,
    pub user_sha256: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

impl RequestDigest {
    pub fn of(req: &ChatRequest) -> Self {
        RequestDigest {
            system_sha256: sha256_hex(req.system.as_bytes()),
            user_sha256: sha256_hex(req.user.as_bytes()),
            temperature: req.temperature,
            seed: req.seed,
            max_tokens: req.max_tokens,
        }
    }
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request_hash: String,
    pub request_digest_fields: RequestDigest,
    pub response_text: String,
}

impl ReplayRecord {
    pub fn new(req: &ChatRequest, response_text: impl Into<String>) -> Self {
        ReplayRecord {
            request_hash: req.cache_key(),
            request_digest_fields: RequestDigest::of(req),
            response_text: response_text.into(),
        }
    }
}

/// Serves responses from a replay file; a request absent from the file is
/// an error, never a silent fallback.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    records: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        let mut map = HashMap::new();
        for r in records {
            // First recording wins, matching the cache's get-or-insert rule.
            map.entry(r.request_hash).or_insert(r.response_text);
        }
        ReplayBackend { records: map }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let io_err = |source| LmError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| LmError::Payload(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        let key = req.cache_key();
        self.records
            .get(&key)
            .cloned()
            .ok_or(LmError::ReplayMiss(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_returns_stored_text_and_miss_errors() {
        let req = ChatRequest::new("sys", "user");
        let backend = ReplayBackend::from_records([ReplayRecord::new(&req, "  exact\ntext ")]);
        assert_eq!(backend.complete(&req).unwrap(), "  exact\ntext ");
        let other = req.clone().with_temperature(0.5);
        assert!(matches!(
            backend.complete(&other),
            Err(LmError::ReplayMiss(_))
        ));
    }

    #[test]
    fn digest_hashes_texts() {
        let req = ChatRequest::new("a", "b");
        let d = RequestDigest::of(&req);
        assert_eq!(d.system_sha256, sha256_hex(b"a"));
        assert_eq!(d.max_tokens, req.max_tokens);
    }
}
