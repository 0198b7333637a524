use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, GatewayError, Usage};

/// On-disk completions keyed by `(model, prompt fingerprint)`, one JSON file
/// per entry.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    fingerprint: String,
    text: String,
    usage: Usage,
}

impl ResponseCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache { dir })
    }

    fn path(&self, model: &str, fingerprint: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0]);
        h.update(fingerprint.as_bytes());
        self.dir.join(format!("{}.json", hex::encode(h.finalize())))
    }

    pub fn get(&self, model: &str, fingerprint: &str) -> Result<Option<Completion>, GatewayError> {
        let path = self.path(model, fingerprint);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: Entry = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        if entry.model != model || entry.fingerprint != fingerprint {
            return Ok(None);
        }
        Ok(Some(Completion {
            text: entry.text,
            usage: entry.usage,
            latency_ms: 0,
            attempts: 0,
            cached: true,
        }))
    }

    pub fn put(
        &self,
        model: &str,
        fingerprint: &str,
        completion: &Completion,
    ) -> Result<(), GatewayError> {
        let path = self.path(model, fingerprint);
        let entry = Entry {
            model: model.to_string(),
            fingerprint: fingerprint.to_string(),
            text: completion.text.clone(),
            usage: completion.usage,
        };
        let body = serde_json::to_string(&entry).expect("cache entries serialize");
        // Write-then-rename keeps concurrent readers from seeing partial files.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        assert!(cache.get("m", "fp").unwrap().is_none());
        let c = Completion {
            text: "{\"label\": []}".into(),
            usage: Usage {
                prompt_tokens: 3,
                completion_tokens: 4,
            },
            latency_ms: 12,
            attempts: 2,
            cached: false,
        };
        cache.put("m", "fp", &c).unwrap();
        let hit = cache.get("m", "fp").unwrap().unwrap();
        assert_eq!(hit.text, c.text);
        assert!(hit.cached);
        assert!(cache.get("other-model", "fp").unwrap().is_none());
    }
}
