use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, GatewayError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub model: String,
    pub response: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

/// In-memory response cache, optionally backed by one JSON file per key.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, GatewayError> {
        if let Some(dir) = &dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| GatewayError::Config(format!("cache dir {}: {e}", dir.display())))?;
        }
        Ok(Self {
            dir,
            memory: Mutex::default(),
        })
    }

    fn file(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.memory.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        let text = std::fs::read_to_string(Self::file(dir, key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        self.memory
            .lock()
            .unwrap()
            .insert(key.to_string(), entry.response.clone());
        Some(entry.response)
    }

    pub fn put(&self, key: &str, entry: CacheEntry) -> Result<(), GatewayError> {
        if let Some(dir) = &self.dir {
            let path = Self::file(dir, key);
            let json = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, json)
                .and_then(|_| std::fs::rename(&tmp, &path))
                .map_err(|e| GatewayError::Config(format!("cache write {}: {e}", path.display())))?;
        }
        self.memory
            .lock()
            .unwrap()
            .insert(key.to_string(), entry.response);
        Ok(())
    }
}
