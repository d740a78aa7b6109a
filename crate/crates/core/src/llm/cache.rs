use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cached (or recorded) response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub fingerprint: String,
    pub raw_text: String,
    pub received_at: String,
}

/// Append-only JSON Lines store of responses keyed by request fingerprint.
///
/// Recorded transcripts use the same format, so a transcript can be replayed
/// by opening it as a cache.
#[derive(Debug)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    sink: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: Mutex::new(HashMap::new()),
            sink: None,
        }
    }

    /// Open or create a cache file. Later records override earlier ones.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: RawResponse =
                    serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
                entries.insert(record.fingerprint, record.raw_text);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ResponseCache {
            entries: Mutex::new(entries),
            sink: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        self.entries.lock().unwrap().get(fingerprint).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, response: RawResponse) -> Result<()> {
        if let Some((path, file)) = &self.sink {
            let mut line = serde_json::to_string(&response).expect("response serializes");
            line.push('\n');
            let mut file = file.lock().unwrap();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .lock()
            .unwrap()
            .insert(response.fingerprint, response.raw_text);
        Ok(())
    }
}
