//! Append-only JSON-lines cache of backend responses.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, ProbeKind};
use crate::error::{Error, Result};
use crate::hashing::hash128_hex;

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    model: String,
    kind: ProbeKind,
    prompt: String,
    response: ChatResponse,
}

struct Inner {
    entries: HashMap<String, ChatResponse>,
    file: Option<File>,
}

/// Responses keyed by a hash of (model, kind, prompt). With no path the
/// cache lives in memory only.
pub struct ProbeCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ProbeCache {
    pub fn in_memory() -> Self {
        ProbeCache {
            path: None,
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Opens (creating if needed) the cache file. Lines that do not parse,
    /// such as a record cut short by a crash, are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for line in text.lines() {
                match serde_json::from_str::<Entry>(line) {
                    Ok(e) => {
                        entries.entry(e.key).or_insert(e.response);
                    }
                    Err(_) if line.trim().is_empty() => {}
                    Err(err) => log::warn!("{}: skipping bad cache line: {err}", path.display()),
                }
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        // Terminate a torn final line so the next entry starts cleanly.
        let torn = fs::read(path)
            .map(|b| b.last().is_some_and(|&c| c != b'\n'))
            .unwrap_or(false);
        if torn {
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(ProbeCache {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                entries,
                file: Some(file),
            }),
        })
    }

    pub fn key(model: &str, kind: ProbeKind, prompt: &str) -> String {
        hash128_hex(&[model, kind.as_str(), prompt])
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, model: &str, kind: ProbeKind, prompt: &str) -> Option<ChatResponse> {
        let key = Self::key(model, kind, prompt);
        self.inner.lock().unwrap().entries.get(&key).cloned()
    }

    /// Records a response. Each entry goes to disk as one complete line
    /// while the lock is held.
    pub fn put(
        &self,
        model: &str,
        kind: ProbeKind,
        prompt: &str,
        response: &ChatResponse,
    ) -> Result<()> {
        let key = Self::key(model, kind, prompt);
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.contains_key(&key) {
            return Ok(());
        }
        if let Some(file) = inner.file.as_mut() {
            let entry = Entry {
                key: key.clone(),
                model: model.into(),
                kind,
                prompt: prompt.into(),
                response: response.clone(),
            };
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new(""));
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        inner.entries.insert(key, response.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ChatMessage;
    use crate::probe::Choice;

    fn resp(text: &str) -> ChatResponse {
        ChatResponse {
            choices: vec![Choice {
                message: ChatMessage::assistant(text),
                logprobs: None,
            }],
        }
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let cache = ProbeCache::open(&path).unwrap();
        cache.put("m", ProbeKind::BinaryGeneration, "p1", &resp("yes")).unwrap();
        cache.put("m", ProbeKind::BinaryGeneration, "p1", &resp("no")).unwrap();
        cache.put("m", ProbeKind::BinaryLogits, "p1", &resp("no")).unwrap();
        drop(cache);

        let mut text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        text.push_str("{\"key\":\"trunc");
        fs::write(&path, text).unwrap();

        let cache = ProbeCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        let hit = cache.get("m", ProbeKind::BinaryGeneration, "p1").unwrap();
        assert_eq!(hit.content(), "yes");
        assert!(cache.get("other", ProbeKind::BinaryGeneration, "p1").is_none());
        cache.put("m", ProbeKind::BinaryGeneration, "p2", &resp("no")).unwrap();
        drop(cache);
        assert_eq!(ProbeCache::open(&path).unwrap().len(), 3);
    }

    #[test]
    fn key_separates_fields() {
        let a = ProbeCache::key("ab", ProbeKind::BinaryGeneration, "c");
        let b = ProbeCache::key("a", ProbeKind::BinaryGeneration, "bc");
        assert_ne!(a, b);
    }
}
