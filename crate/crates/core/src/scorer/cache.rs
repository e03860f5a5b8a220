//! Append-only on-disk score cache.
//!
//! One record per line: `digest<TAB>avg_logprob<TAB>token_count`. Later
//! records for the same digest win. Lines that fail to parse (for example a
//! record cut short by a crash) are skipped on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{BackendMeta, ScoreResult};
use crate::error::{Error, Result};

/// Hex SHA-256 over the length-prefixed model name, context and question.
pub fn cache_key(model_name: &str, context: &str, question: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [model_name, context, question] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Default)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, (f64, usize)>>,
    writer: Mutex<Option<File>>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a cache file for reading and appending.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut skipped = 0usize;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                match parse_record(&line) {
                    Some((key, value)) => {
                        entries.insert(key, value);
                    }
                    None if line.trim().is_empty() => {}
                    None => skipped += 1,
                }
            }
            if skipped > 0 {
                log::warn!(
                    "{}: skipped {skipped} malformed cache record(s)",
                    path.display()
                );
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<ScoreResult> {
        let entries = self.entries.read().expect("cache lock");
        entries
            .get(key)
            .map(|&(avg_logprob, token_count)| ScoreResult {
                avg_logprob,
                token_count,
                backend_meta: BackendMeta {
                    backend: "cache".into(),
                    retries: 0,
                    cached: true,
                },
            })
    }

    /// Records a score; each record is appended with a single write.
    pub fn put(&self, key: &str, result: &ScoreResult) -> Result<()> {
        self.entries
            .write()
            .expect("cache lock")
            .insert(key.to_string(), (result.avg_logprob, result.token_count));
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(file) = writer.as_mut() {
            let record = format!("{key}\t{}\t{}\n", result.avg_logprob, result.token_count);
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            file.write_all(record.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let (Some(file), Some(path)) = (writer.as_mut(), self.path.as_deref()) {
            file.sync_data().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn parse_record(line: &str) -> Option<(String, (f64, usize))> {
    let mut cols = line.split('\t');
    let key = cols.next()?;
    let avg: f64 = cols.next()?.parse().ok()?;
    let count: usize = cols.next()?.parse().ok()?;
    if cols.next().is_some() || key.len() != 64 || !avg.is_finite() {
        return None;
    }
    Some((key.to_string(), (avg, count)))
}
