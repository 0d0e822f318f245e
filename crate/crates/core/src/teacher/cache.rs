use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, TeacherError};

/// One cache file: `<dir>/<key>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub response: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

/// Content-addressed response cache. With a directory it persists one file
/// per request; without one it lives only in memory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, TeacherError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| TeacherError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: Some(dir), memory: Mutex::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.memory.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let path = self.path_for(key)?;
        let text = fs::read_to_string(path).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        self.memory.lock().unwrap().insert(key.to_string(), entry.response.clone());
        Some(entry.response)
    }

    pub fn put(&self, key: &str, request: &CompletionRequest, response: &str) -> Result<(), TeacherError> {
        // Writes are serialized by holding the map lock across the file write.
        let mut memory = self.memory.lock().unwrap();
        if let Some(path) = self.path_for(key) {
            let entry = CacheEntry {
                key: key.to_string(),
                request: request.clone(),
                response: response.to_string(),
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            };
            let tmp = path.with_extension("json.tmp");
            let body = serde_json::to_vec_pretty(&entry).map_err(|e| TeacherError::Cache(e.to_string()))?;
            fs::write(&tmp, body)
                .and_then(|_| fs::rename(&tmp, &path))
                .map_err(|e| TeacherError::Cache(format!("{}: {e}", path.display())))?;
        }
        memory.insert(key.to_string(), response.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        match &self.dir {
            Some(d) => fs::read_dir(d)
                .map(|it| {
                    it.filter_map(Result::ok)
                        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                        .count()
                })
                .unwrap_or(0),
            None => self.memory.lock().unwrap().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::DecodingParams;

    #[test]
    fn disk_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let req = CompletionRequest::new("ep", "hello", DecodingParams::default());
        let key = req.cache_key();
        {
            let cache = ResponseCache::on_disk(dir.path()).unwrap();
            assert!(cache.get(&key).is_none());
            cache.put(&key, &req, "world").unwrap();
        }
        let cache = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(cache.get(&key).as_deref(), Some("world"));
        assert_eq!(cache.len(), 1);
        let entry: CacheEntry =
            serde_json::from_slice(&fs::read(dir.path().join(format!("{key}.json"))).unwrap()).unwrap();
        assert_eq!(entry.request, req);
    }
}
