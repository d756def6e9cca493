//! Judge reply cache, keyed by template name and prompt digest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::templates::TemplateName;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub template: TemplateName,
    pub label: String,
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Default)]
pub struct JudgeCache {
    entries: Mutex<BTreeMap<(TemplateName, String), String>>,
}

impl JudgeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let r: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.insert((r.template, r.digest), r.label);
        }
        Ok(JudgeCache {
            entries: Mutex::new(entries),
        })
    }

    /// Loads `path`, or starts empty when it does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::File::open(path) {
            Ok(f) => Self::read(BufReader::new(f)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn get(&self, template: TemplateName, prompt: &str) -> Option<String> {
        self.entries
            .lock()
            .expect("cache lock poisoned")
            .get(&(template, prompt_digest(prompt)))
            .cloned()
    }

    pub fn insert(&self, template: TemplateName, prompt: &str, label: String) {
        self.entries
            .lock()
            .expect("cache lock poisoned")
            .insert((template, prompt_digest(prompt)), label);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes records sorted by (template, digest).
    pub fn write<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let entries = self.entries.lock().expect("cache lock poisoned");
        for ((template, digest), label) in entries.iter() {
            let rec = CacheRecord {
                digest: digest.clone(),
                template: *template,
                label: label.clone(),
            };
            serde_json::to_writer(&mut writer, &rec)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}
