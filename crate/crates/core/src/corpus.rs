//! Documents, pools and line-delimited corpus I/O.
//!
//! A record is one JSON object per line with at least `id` and `text`.
//! `source` is optional; any other field is carried through untouched so a
//! pool can be re-emitted without losing upstream metadata. `token_count` is
//! always recomputed on ingest with the active counter.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Pluggable token counter. Budgets are only comparable within one counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TokenCounter {
    /// Number of whitespace-separated words.
    #[default]
    #[serde(rename = "whitespace-words")]
    WhitespaceWords,
    /// UTF-8 byte length divided by four, rounded down.
    #[serde(rename = "bytes-div-4")]
    BytesDiv4,
}

impl TokenCounter {
    pub fn name(self) -> &'static str {
        match self {
            TokenCounter::WhitespaceWords => "whitespace-words",
            TokenCounter::BytesDiv4 => "bytes-div-4",
        }
    }

    pub fn count(self, text: &str) -> u64 {
        match self {
            TokenCounter::WhitespaceWords => text.split_whitespace().count() as u64,
            TokenCounter::BytesDiv4 => (text.len() / 4) as u64,
        }
    }
}

impl fmt::Display for TokenCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TokenCounter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace-words" | "whitespace" => Ok(TokenCounter::WhitespaceWords),
            "bytes-div-4" | "bytes" => Ok(TokenCounter::BytesDiv4),
            other => Err(Error::Config(format!(
                "unknown token counter `{other}` (expected whitespace-words or bytes-div-4)"
            ))),
        }
    }
}

/// Counts tokens in `text` with the counter registered under `counter`.
pub fn count_tokens(text: &str, counter: &str) -> Result<u64> {
    Ok(counter.parse::<TokenCounter>()?.count(text))
}

/// One web-text record.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: Option<String>,
    pub token_count: u64,
    /// Unknown record fields, preserved in input order.
    pub extra: Map<String, Value>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, counter: TokenCounter) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            token_count: counter.count(&text),
            text,
            source: None,
            extra: Map::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    fn from_record(value: Value, counter: TokenCounter) -> std::result::Result<Self, String> {
        let Value::Object(mut map) = value else {
            return Err("record is not a JSON object".into());
        };
        let id = match map.remove("id") {
            Some(Value::String(s)) => s,
            Some(_) => return Err("field `id` is not a string".into()),
            None => return Err("missing field `id`".into()),
        };
        let text = match map.remove("text") {
            Some(Value::String(s)) => s,
            Some(_) => return Err("field `text` is not a string".into()),
            None => return Err("missing field `text`".into()),
        };
        let source = match map.remove("source") {
            Some(Value::String(s)) => Some(s),
            Some(Value::Null) | None => None,
            Some(_) => return Err("field `source` is not a string".into()),
        };
        map.remove("token_count");
        Ok(Document {
            token_count: counter.count(&text),
            id,
            text,
            source,
            extra: map,
        })
    }

    fn to_record(&self) -> Value {
        let mut map = Map::new();
        map.insert("id".into(), Value::String(self.id.clone()));
        map.insert("text".into(), Value::String(self.text.clone()));
        if let Some(source) = &self.source {
            map.insert("source".into(), Value::String(source.clone()));
        }
        map.insert("token_count".into(), Value::from(self.token_count));
        for (k, v) in &self.extra {
            map.insert(k.clone(), v.clone());
        }
        Value::Object(map)
    }
}

/// Reference to a parent pool, stored in a child's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentRef {
    pub source_label: String,
    pub doc_count: u64,
    pub total_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_applied: Option<f64>,
}

/// A document that could not be produced by a pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub doc_id: String,
    pub error: String,
}

/// Accounting record for a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub doc_count: u64,
    pub total_tokens: u64,
    pub threshold_applied: Option<f64>,
    pub source_label: String,
    pub counter: TokenCounter,
    #[serde(default)]
    pub created_from: Vec<ParentRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<u64>,
    /// Tokens selected beyond the target (at most one document's worth).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overshoot: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureRecord>,
}

impl PoolManifest {
    pub fn parent_ref(&self) -> ParentRef {
        ParentRef {
            source_label: self.source_label.clone(),
            doc_count: self.doc_count,
            total_tokens: self.total_tokens,
            threshold_applied: self.threshold_applied,
        }
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Validation(format!("{}: bad manifest: {e}", path.display())))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut line = serde_json::to_string(self).expect("manifest serializes");
        line.push('\n');
        std::fs::write(path, line).map_err(|e| Error::io(path, e))
    }
}

/// An ordered collection of documents plus its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    documents: Vec<Document>,
    manifest: PoolManifest,
}

impl Pool {
    pub fn empty(source_label: impl Into<String>, counter: TokenCounter) -> Self {
        Pool {
            documents: Vec::new(),
            manifest: PoolManifest {
                doc_count: 0,
                total_tokens: 0,
                threshold_applied: None,
                source_label: source_label.into(),
                counter,
                created_from: Vec::new(),
                target_tokens: None,
                shortfall: None,
                overshoot: None,
                failures: Vec::new(),
            },
        }
    }

    /// Builds a pool, rejecting duplicate ids.
    pub fn from_documents(
        documents: Vec<Document>,
        source_label: impl Into<String>,
        counter: TokenCounter,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        let mut pool = Pool::empty(source_label, counter);
        pool.documents = documents;
        pool.recount();
        Ok(pool)
    }

    /// Derives a child pool from a subset of this pool's documents.
    /// Ids are already unique, so no duplicate check is needed.
    pub(crate) fn derive(&self, documents: Vec<Document>, source_label: &str) -> Pool {
        let mut pool = Pool::empty(source_label, self.manifest.counter);
        pool.documents = documents;
        pool.manifest.created_from = vec![self.manifest.parent_ref()];
        pool.recount();
        pool
    }

    fn recount(&mut self) {
        self.manifest.doc_count = self.documents.len() as u64;
        self.manifest.total_tokens = self.documents.iter().map(|d| d.token_count).sum();
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn manifest(&self) -> &PoolManifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut PoolManifest {
        &mut self.manifest
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.manifest.total_tokens
    }

    pub fn counter(&self) -> TokenCounter {
        self.manifest.counter
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    /// Checks both manifest invariants against the member documents.
    pub fn check_manifest(&self) -> Result<()> {
        let tokens: u64 = self.documents.iter().map(|d| d.token_count).sum();
        if self.manifest.doc_count != self.documents.len() as u64 || self.manifest.total_tokens != tokens {
            return Err(Error::Integrity(format!(
                "manifest says {} docs / {} tokens, pool has {} / {}",
                self.manifest.doc_count,
                self.manifest.total_tokens,
                self.documents.len(),
                tokens
            )));
        }
        Ok(())
    }
}

/// Reads line-delimited records into a pool. Blank lines are skipped.
pub fn ingest<R: BufRead>(reader: R, counter: TokenCounter, source_label: &str) -> Result<Pool> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let doc = Document::from_record(value, counter)
            .map_err(|message| Error::MalformedRecord { line: line_no, message })?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        documents.push(doc);
    }
    let mut pool = Pool::empty(source_label, counter);
    pool.documents = documents;
    pool.recount();
    Ok(pool)
}

pub fn ingest_path(path: &Path, counter: TokenCounter, source_label: &str) -> Result<Pool> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(std::io::BufReader::new(file), counter, source_label).map_err(|e| match e {
        Error::MalformedRecord { line, message } => Error::MalformedRecord {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Writes one record per document; returns the number written.
pub fn emit<W: Write>(pool: &Pool, mut writer: W, path_hint: &Path) -> Result<usize> {
    pool.check_manifest()?;
    let io_err = |e| Error::io(path_hint, e);
    for doc in &pool.documents {
        serde_json::to_writer(&mut writer, &doc.to_record()).map_err(|e| io_err(e.into()))?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;
    Ok(pool.documents.len())
}

pub fn emit_path(pool: &Pool, path: &Path) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    emit(pool, std::io::BufWriter::new(file), path)
}

/// Pool file plus its sidecar manifest (`<stem>.manifest.json`).
pub fn manifest_path_for(pool_path: &Path) -> PathBuf {
    let stem = pool_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pool".into());
    pool_path.with_file_name(format!("{stem}.manifest.json"))
}

/// Writes the pool and its manifest next to each other.
pub fn save_pool(pool: &Pool, path: &Path) -> Result<usize> {
    let n = emit_path(pool, path)?;
    pool.manifest.write_to(&manifest_path_for(path))?;
    Ok(n)
}

/// Reads a pool, restoring manifest metadata from the sidecar when present.
/// Counts are always recomputed from the documents.
pub fn load_pool(path: &Path, counter: TokenCounter, source_label: &str) -> Result<Pool> {
    let mut pool = ingest_path(path, counter, source_label)?;
    let sidecar = manifest_path_for(path);
    if sidecar.exists() {
        let stored = PoolManifest::read_from(&sidecar)?;
        if stored.counter == counter {
            let (doc_count, total_tokens) = (pool.manifest.doc_count, pool.manifest.total_tokens);
            pool.manifest = stored;
            pool.manifest.doc_count = doc_count;
            pool.manifest.total_tokens = total_tokens;
        }
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ingest_str(s: &str) -> Result<Pool> {
        ingest(Cursor::new(s), TokenCounter::WhitespaceWords, "organic")
    }

    #[test]
    fn counts_tokens_by_definition() {
        assert_eq!(count_tokens("hello world", "whitespace-words").unwrap(), 2);
        assert_eq!(count_tokens("", "whitespace-words").unwrap(), 0);
        assert_eq!(count_tokens("", "bytes-div-4").unwrap(), 0);
        assert_eq!(count_tokens(&"a".repeat(4000), "bytes-div-4").unwrap(), 1000);
        assert_eq!(count_tokens(" \n\t ", "whitespace-words").unwrap(), 0);
        assert!(matches!(count_tokens("x", "bpe"), Err(Error::Config(_))));
    }

    #[test]
    fn ingests_well_formed_records() {
        let pool = ingest_str(
            "{\"id\":\"a\",\"text\":\"one two\"}\n{\"id\":\"b\",\"text\":\"three\",\"source\":\"organic\"}\n",
        )
        .unwrap();
        assert_eq!(pool.manifest().doc_count, 2);
        assert_eq!(pool.manifest().total_tokens, 3);
        assert_eq!(pool.documents()[1].source.as_deref(), Some("organic"));
    }

    #[test]
    fn empty_input_gives_empty_pool() {
        let pool = ingest_str("").unwrap();
        assert_eq!(pool.manifest().doc_count, 0);
        assert_eq!(pool.manifest().total_tokens, 0);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = ingest_str("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\nnot json\n")
            .unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 3, .. }));
        assert!(err.to_string().contains("line 3"));

        let err = ingest_str("{\"id\":\"a\"}\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = ingest_str("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n").unwrap_err();
        assert!(err.to_string().contains("`a`"));
    }

    #[test]
    fn emit_counts_records_and_keeps_unknown_fields() {
        let pool = ingest_str("{\"id\":\"a\",\"text\":\"x y\",\"url\":\"http://e\",\"meta\":{\"k\":1}}\n").unwrap();
        let mut buf = Vec::new();
        assert_eq!(emit(&pool, &mut buf, Path::new("mem")).unwrap(), 1);
        let back = ingest(Cursor::new(buf), TokenCounter::WhitespaceWords, "organic").unwrap();
        assert_eq!(back, pool);
        assert_eq!(back.documents()[0].extra["url"], "http://e");

        let empty = Pool::empty("x", TokenCounter::BytesDiv4);
        assert_eq!(emit(&empty, Vec::new(), Path::new("mem")).unwrap(), 0);
    }

    #[test]
    fn emit_reports_write_failure_with_path() {
        struct Broken;
        impl Write for Broken {
            fn write(&mut self, _: &[u8]) -> std::io::Result<usize> {
                Err(std::io::Error::other("disk full"))
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let pool = ingest_str("{\"id\":\"a\",\"text\":\"x\"}\n").unwrap();
        let err = emit(&pool, Broken, Path::new("/out/pool.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/out/pool.jsonl"));
    }

    #[test]
    fn stale_token_count_is_recomputed() {
        let pool = ingest_str("{\"id\":\"a\",\"text\":\"x y z\",\"token_count\":99}\n").unwrap();
        assert_eq!(pool.documents()[0].token_count, 3);
    }

    #[test]
    fn from_documents_rejects_duplicates() {
        let c = TokenCounter::WhitespaceWords;
        let docs = vec![Document::new("a", "x", c), Document::new("a", "y", c)];
        assert!(matches!(Pool::from_documents(docs, "p", c), Err(Error::DuplicateId(id)) if id == "a"));
    }
}
