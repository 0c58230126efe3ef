//! Append-only JSONL key/value cache shared by the scoring and paraphrase stages.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::hash::Hash;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};

#[derive(Serialize, Deserialize)]
struct Line<K, V> {
    key: K,
    value: V,
}

/// Lines that fail to parse are skipped with a warning, so their entries are
/// recomputed. A later line for the same key wins.
pub struct JsonlCache<K, V> {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<K, V>>,
    writer: Mutex<Option<File>>,
}

impl<K, V> JsonlCache<K, V>
where
    K: Serialize + DeserializeOwned + Eq + Hash + Clone,
    V: Serialize + DeserializeOwned + Clone,
{
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            drop_torn_tail(path)?;
            let file = File::open(path).map_err(|e| SmiError::io(path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| SmiError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Line<K, V>>(&line) {
                    Ok(l) => {
                        entries.insert(l.key, l.value);
                    }
                    Err(e) => log::warn!(
                        "{}:{}: skipping corrupt cache line: {e}",
                        path.display(),
                        idx + 1
                    ),
                }
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &K) -> Option<V> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    /// Records `value` and appends it to the backing file.
    pub fn put(&self, key: K, value: V) -> Result<()> {
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&Line {
                key: &key,
                value: &value,
            })?;
            let mut writer = self.writer.lock().expect("cache lock");
            if writer.is_none() {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| SmiError::io(path, e))?;
                *writer = Some(f);
            }
            let f = writer.as_mut().expect("writer opened above");
            f.write_all(format!("{line}\n").as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| SmiError::io(path, e))?;
        }
        self.entries.lock().expect("cache lock").insert(key, value);
        Ok(())
    }
}

/// Cuts an unterminated last line, left behind when a writer was killed
/// mid-append, so the next append starts on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| SmiError::io(path, e))?;
    if bytes.last().is_none_or(|&b| b == b'\n') {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!(
        "{}: dropping {} bytes of an unterminated line",
        path.display(),
        bytes.len() - keep
    );
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| SmiError::io(path, e))?;
    f.set_len(keep as u64).map_err(|e| SmiError::io(path, e))
}
