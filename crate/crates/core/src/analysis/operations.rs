use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::clients::Operation;
use crate::error::{Error, Result};

use super::histogram::Histogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationCategory {
    Paraphrasing,
    Removing,
    Clarification,
    Reorganization,
    Summarization,
    Other,
}

impl OperationCategory {
    pub const ALL: [OperationCategory; 6] = [
        OperationCategory::Paraphrasing,
        OperationCategory::Removing,
        OperationCategory::Clarification,
        OperationCategory::Reorganization,
        OperationCategory::Summarization,
        OperationCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperationCategory::Paraphrasing => "paraphrasing",
            OperationCategory::Removing => "removing",
            OperationCategory::Clarification => "clarification",
            OperationCategory::Reorganization => "reorganization",
            OperationCategory::Summarization => "summarization",
            OperationCategory::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for OperationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verb stems per category, tried in order; the first prefix match wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    pub version: String,
    rows: Vec<(OperationCategory, Vec<String>)>,
}

const SHIPPED_TABLE: &str = include_str!("../../assets/operation_keywords.tsv");

impl KeywordTable {
    /// Format: `#` comment lines (the first may carry `version N`), then
    /// `category<TAB>stem,stem,...` rows.
    pub fn parse(src: &str) -> Result<Self> {
        let mut version = String::from("unversioned");
        let mut rows = Vec::new();
        for (idx, line) in src.lines().enumerate() {
            let line = line.trim_end();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(pos) = comment.find("version") {
                    version = comment[pos + "version".len()..].trim().to_string();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::MalformedRecord { line: idx + 1, message };
            let (cat, stems) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected category<TAB>stems".into()))?;
            let cat = OperationCategory::parse(cat.trim()).ok_or_else(|| bad(format!("unknown category `{cat}`")))?;
            if cat == OperationCategory::Other {
                return Err(bad("`other` is the fallback and takes no stems".into()));
            }
            let stems: Vec<String> = stems
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            rows.push((cat, stems));
        }
        Ok(KeywordTable { version, rows })
    }

    pub fn shipped() -> &'static KeywordTable {
        static TABLE: OnceLock<KeywordTable> = OnceLock::new();
        TABLE.get_or_init(|| KeywordTable::parse(SHIPPED_TABLE).expect("shipped keyword table parses"))
    }

    pub fn categorize(&self, verb: &str) -> OperationCategory {
        let v = verb.trim().to_lowercase();
        self.rows
            .iter()
            .find(|(_, stems)| stems.iter().any(|s| v.starts_with(s.as_str())))
            .map_or(OperationCategory::Other, |(c, _)| *c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationReport {
    pub table_version: String,
    /// Counts in [`OperationCategory::ALL`] order.
    pub category_counts: Vec<(OperationCategory, u64)>,
    /// Number of rephrasing instances examined.
    pub sample_size: u64,
    pub total_operations: u64,
}

impl OperationReport {
    pub fn count(&self, category: OperationCategory) -> u64 {
        self.category_counts
            .iter()
            .find(|(c, _)| *c == category)
            .map_or(0, |(_, n)| *n)
    }

    pub fn histogram(&self) -> Histogram {
        let mut h = Histogram::categorical("operations", OperationCategory::ALL.map(|c| c.as_str()));
        for (i, (_, n)) in self.category_counts.iter().enumerate() {
            h.counts[i] = *n;
        }
        h.total = self.total_operations;
        h
    }
}

/// Tags every operation of every instance with a category.
pub fn categorize_operations(instances: &[Vec<Operation>], table: &KeywordTable) -> OperationReport {
    let mut counts = [0u64; 6];
    for op in instances.iter().flatten() {
        let c = table.categorize(&op.verb);
        counts[OperationCategory::ALL.iter().position(|x| *x == c).expect("listed")] += 1;
    }
    OperationReport {
        table_version: table.version.clone(),
        category_counts: OperationCategory::ALL.into_iter().zip(counts).collect(),
        sample_size: instances.len() as u64,
        total_operations: counts.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(verb: &str, noun: &str) -> Operation {
        Operation {
            verb: verb.into(),
            noun: noun.into(),
        }
    }

    #[test]
    fn table_lookups() {
        let t = KeywordTable::shipped();
        assert_eq!(t.version, "1");
        assert_eq!(t.categorize("removing"), OperationCategory::Removing);
        assert_eq!(t.categorize("Rewording"), OperationCategory::Paraphrasing);
        assert_eq!(t.categorize("translating"), OperationCategory::Other);
        assert_eq!(t.categorize("clarifying"), OperationCategory::Clarification);
        assert_eq!(t.categorize("restructuring"), OperationCategory::Reorganization);
        assert_eq!(t.categorize("condensing"), OperationCategory::Summarization);
        assert_eq!(t.categorize(""), OperationCategory::Other);
    }

    #[test]
    fn report_counts_every_operation_once() {
        let r = categorize_operations(
            &[
                vec![op("removing", "ads"), op("paraphrasing", "sentences")],
                vec![op("translating", "text")],
                vec![],
            ],
            KeywordTable::shipped(),
        );
        assert_eq!(r.sample_size, 3);
        assert_eq!(r.total_operations, 3);
        assert_eq!(r.count(OperationCategory::Removing), 1);
        assert_eq!(r.count(OperationCategory::Other), 1);
        r.histogram().check().unwrap();
    }

    #[test]
    fn table_errors() {
        assert!(KeywordTable::parse("paraphrasing reword").is_err());
        assert!(KeywordTable::parse("joking\tjok").is_err());
        assert!(KeywordTable::parse("other\tx").is_err());
    }
}
