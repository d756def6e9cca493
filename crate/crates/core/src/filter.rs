//! Quality filtering, budget-driven threshold search and final assembly.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Pool};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Document-level quality threshold used by the DCLM fastText filter.
pub const DEFAULT_TAU_ORG: f64 = 0.018112;

/// Highest DataMan overall score; documents already at it are excluded from RL data.
pub const DATAMAN_MAX: u8 = 5;

/// Sentinel threshold that admits every document.
pub const TAU_ADMIT_ALL: f64 = f64::MIN;

/// One line of a score table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub scorer: String,
    pub value: f64,
}

/// Scores for one scorer, keyed by document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scorer: String,
    values: HashMap<String, f64>,
}

impl ScoreTable {
    pub fn new(scorer: impl Into<String>) -> Self {
        ScoreTable {
            scorer: scorer.into(),
            values: HashMap::new(),
        }
    }

    pub fn scorer(&self) -> &str {
        &self.scorer
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Inserts a score; a second score for the same document is an error.
    pub fn insert(&mut self, doc_id: impl Into<String>, value: f64) -> Result<()> {
        let doc_id = doc_id.into();
        if !value.is_finite() {
            return Err(Error::Validation(format!("non-finite score for `{doc_id}`")));
        }
        if self.values.contains_key(&doc_id) {
            return Err(Error::Validation(format!(
                "duplicate score for (`{doc_id}`, `{}`)",
                self.scorer
            )));
        }
        self.values.insert(doc_id, value);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<f64> {
        self.values.get(doc_id).copied()
    }

    pub fn from_pairs<I, S>(scorer: &str, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut table = ScoreTable::new(scorer);
        for (id, v) in pairs {
            table.insert(id, v)?;
        }
        Ok(table)
    }

    /// Reads the records belonging to `scorer` from a line-delimited score file.
    pub fn read<R: BufRead>(reader: R, scorer: &str) -> Result<Self> {
        let mut table = ScoreTable::new(scorer);
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
            if rec.scorer == scorer {
                table.insert(rec.doc_id, rec.value)?;
            }
        }
        Ok(table)
    }

    pub fn read_path(path: &Path, scorer: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), scorer)
    }

    /// Writes records sorted by document id.
    pub fn write<W: Write>(&self, mut writer: W, path_hint: &Path) -> Result<()> {
        let mut ids: Vec<&String> = self.values.keys().collect();
        ids.sort();
        for id in ids {
            let rec = ScoreRecord {
                doc_id: id.clone(),
                scorer: self.scorer.clone(),
                value: self.values[id],
            };
            let line = serde_json::to_string(&rec).expect("score record serializes");
            writeln!(writer, "{line}").map_err(|e| Error::io(path_hint, e))?;
        }
        writer.flush().map_err(|e| Error::io(path_hint, e))
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file), path)
    }

    /// Scores for every pool document, in pool order.
    fn lookup_all(&self, pool: &Pool) -> Result<Vec<f64>> {
        pool.documents()
            .iter()
            .map(|d| {
                self.get(&d.id).ok_or_else(|| Error::MissingScore {
                    doc_id: d.id.clone(),
                    scorer: self.scorer.clone(),
                })
            })
            .collect()
    }
}

/// Total budget B and the part already covered by high-quality organic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub total_budget: u64,
    pub org_hq_tokens: u64,
}

impl BudgetSpec {
    pub fn new(total_budget: u64, org_hq_tokens: u64) -> Result<Self> {
        if org_hq_tokens > total_budget {
            return Err(Error::Validation(format!(
                "organic high-quality tokens ({org_hq_tokens}) exceed the total budget ({total_budget})"
            )));
        }
        Ok(BudgetSpec {
            total_budget,
            org_hq_tokens,
        })
    }

    /// Tokens the recycled high-quality subset must supply.
    pub fn recycled_target(&self) -> u64 {
        self.total_budget - self.org_hq_tokens
    }
}

/// Keeps documents whose score is at least `tau`, preserving order.
pub fn select_by_threshold(pool: &Pool, scores: &ScoreTable, tau: f64) -> Result<Pool> {
    select_by_threshold_with(pool, scores, tau, Exec::default())
}

pub fn select_by_threshold_with(pool: &Pool, scores: &ScoreTable, tau: f64, exec: Exec) -> Result<Pool> {
    let values = scores.lookup_all(pool)?;
    let keep = exec.map_range(values.len(), |i| values[i] >= tau);
    let docs: Vec<Document> = pool
        .documents()
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k).map(|(d, _)| d.clone())
        .collect();
    let label = format!("{}-hq", pool.manifest().source_label);
    let mut out = pool.derive(docs, &label);
    out.manifest_mut().threshold_applied = Some(tau);
    Ok(out)
}

/// Result of a budget-driven threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSelection {
    pub tau_rec: f64,
    pub selected: Pool,
    pub shortfall: u64,
}

/// Orders `(score, id)` best first: score descending, then id ascending.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Picks the shortest best-first prefix whose tokens reach `target_tokens`.
///
/// The selection is returned in pool order. `tau_rec` is the score of the
/// last document admitted, or [`TAU_ADMIT_ALL`] when nothing is selected.
pub fn budget_threshold(pool: &Pool, scores: &ScoreTable, target_tokens: u64) -> Result<BudgetSelection> {
    let values = scores.lookup_all(pool)?;
    let docs = pool.documents();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&i, &j| rank_order((values[i], &docs[i].id), (values[j], &docs[j].id)));

    let mut taken = 0usize;
    let mut tokens = 0u64;
    if target_tokens > 0 {
        for &i in &order {
            tokens += docs[i].token_count;
            taken += 1;
            if tokens >= target_tokens {
                break;
            }
        }
    }
    let tau_rec = if taken == 0 {
        TAU_ADMIT_ALL
    } else {
        values[order[taken - 1]]
    };

    let mut chosen = vec![false; docs.len()];
    for &i in &order[..taken] {
        chosen[i] = true;
    }
    let picked: Vec<Document> = docs
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c).map(|(d, _)| d.clone())
        .collect();

    let shortfall = target_tokens.saturating_sub(tokens);
    let label = format!("{}-hq", pool.manifest().source_label);
    let mut selected = pool.derive(picked, &label);
    let m = selected.manifest_mut();
    m.threshold_applied = Some(tau_rec);
    m.target_tokens = Some(target_tokens);
    m.shortfall = Some(shortfall);
    m.overshoot = Some(tokens.saturating_sub(target_tokens));
    Ok(BudgetSelection {
        tau_rec,
        selected,
        shortfall,
    })
}

/// Union of the organic and recycled high-quality subsets.
pub fn assemble_final(org_hq: &Pool, rec_hq: &Pool) -> Result<Pool> {
    if org_hq.counter() != rec_hq.counter() {
        return Err(Error::Validation(format!(
            "pools were counted with different counters ({} vs {})",
            org_hq.counter(),
            rec_hq.counter()
        )));
    }
    let org_ids: HashSet<&str> = org_hq.ids().collect();
    if let Some(id) = rec_hq.ids().find(|id| org_ids.contains(id)) {
        return Err(Error::DuplicateId(id.to_string()));
    }
    let docs: Vec<Document> = org_hq
        .documents()
        .iter()
        .chain(rec_hq.documents())
        .cloned()
        .collect();
    let mut out = Pool::from_documents(docs, "final", org_hq.counter())?;
    out.manifest_mut().created_from = vec![org_hq.manifest().parent_ref(), rec_hq.manifest().parent_ref()];
    Ok(out)
}

/// Validates a DataMan overall score.
pub fn dataman_score(value: f64) -> Result<u8> {
    if value.fract() != 0.0 || !(1.0..=5.0).contains(&value) {
        return Err(Error::Validation(format!(
            "DataMan score must be an integer in [1, 5], got {value}"
        )));
    }
    Ok(value as u8)
}

/// RL training data: organic documents whose DataMan score can still improve.
pub fn rl_data_filter(pool: &Pool, dataman: &ScoreTable) -> Result<Pool> {
    let values = dataman.lookup_all(pool)?;
    let mut docs = Vec::new();
    for (doc, v) in pool.documents().iter().zip(values) {
        if dataman_score(v)? < DATAMAN_MAX {
            docs.push(doc.clone());
        }
    }
    let label = format!("{}-rl", pool.manifest().source_label);
    Ok(pool.derive(docs, &label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenCounter;

    fn pool_of(spec: &[(&str, usize)]) -> Pool {
        let c = TokenCounter::WhitespaceWords;
        let docs = spec
            .iter()
            .map(|(id, n)| Document::new(*id, vec!["w"; *n].join(" "), c))
            .collect();
        Pool::from_documents(docs, "organic", c).unwrap()
    }

    fn ids(p: &Pool) -> Vec<&str> {
        p.ids().collect()
    }

    #[test]
    fn threshold_keeps_scores_at_or_above_tau() {
        let pool = pool_of(&[("a", 1), ("b", 1)]);
        let scores = ScoreTable::from_pairs("fasttext", [("a", 0.02), ("b", 0.01)]).unwrap();
        let hq = select_by_threshold(&pool, &scores, DEFAULT_TAU_ORG).unwrap();
        assert_eq!(ids(&hq), ["a"]);
        assert_eq!(hq.manifest().threshold_applied, Some(DEFAULT_TAU_ORG));

        let exact = ScoreTable::from_pairs("fasttext", [("a", DEFAULT_TAU_ORG), ("b", 0.0)]).unwrap();
        assert_eq!(ids(&select_by_threshold(&pool, &exact, DEFAULT_TAU_ORG).unwrap()), ["a"]);
    }

    #[test]
    fn threshold_sentinels() {
        let pool = pool_of(&[("a", 1), ("b", 2), ("c", 3)]);
        let scores = ScoreTable::from_pairs("q", [("a", -5.0), ("b", 0.3), ("c", 9.0)]).unwrap();
        assert_eq!(select_by_threshold(&pool, &scores, TAU_ADMIT_ALL).unwrap().len(), 3);
        let none = select_by_threshold(&pool, &scores, 9.5).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.total_tokens(), 0);
    }

    #[test]
    fn missing_score_names_first_document() {
        let pool = pool_of(&[("a", 1), ("b", 1), ("c", 1)]);
        let scores = ScoreTable::from_pairs("q", [("a", 1.0)]).unwrap();
        let err = select_by_threshold(&pool, &scores, 0.0).unwrap_err();
        assert!(matches!(err, Error::MissingScore { doc_id, .. } if doc_id == "b"));
        assert!(budget_threshold(&pool, &scores, 1).is_err());
    }

    #[test]
    fn budget_examples() {
        let pool = pool_of(&[("x", 5), ("y", 5), ("z", 5)]);
        let scores = ScoreTable::from_pairs("q", [("x", 0.9), ("y", 0.8), ("z", 0.7)]).unwrap();

        let sel = budget_threshold(&pool, &scores, 10).unwrap();
        assert_eq!(ids(&sel.selected), ["x", "y"]);
        assert_eq!(sel.tau_rec, 0.8);
        assert_eq!(sel.shortfall, 0);

        let sel = budget_threshold(&pool, &scores, 0).unwrap();
        assert!(sel.selected.is_empty());
        assert_eq!(sel.shortfall, 0);
        assert_eq!(sel.tau_rec, TAU_ADMIT_ALL);

        let sel = budget_threshold(&pool, &scores, 100).unwrap();
        assert_eq!(sel.selected.len(), 3);
        assert_eq!(sel.shortfall, 85);
    }

    #[test]
    fn budget_ties_break_by_id_and_record_overshoot() {
        let pool = pool_of(&[("b", 4), ("a", 4), ("c", 4)]);
        let scores = ScoreTable::from_pairs("q", [("a", 0.5), ("b", 0.5), ("c", 0.5)]).unwrap();
        let sel = budget_threshold(&pool, &scores, 6).unwrap();
        assert_eq!(ids(&sel.selected), ["b", "a"]);
        let sel = budget_threshold(&pool, &scores, 3).unwrap();
        assert_eq!(ids(&sel.selected), ["a"]);
        assert_eq!(sel.selected.manifest().overshoot, Some(1));
        assert_eq!(sel.selected.manifest().target_tokens, Some(3));
    }

    #[test]
    fn budget_spec_validates() {
        assert_eq!(BudgetSpec::new(144, 72).unwrap().recycled_target(), 72);
        assert!(BudgetSpec::new(10, 11).is_err());
    }

    #[test]
    fn assemble_examples() {
        let org = pool_of(&[("a", 1), ("b", 2), ("c", 4)]);
        let rec = pool_of(&[("a#rec", 2), ("b#rec", 3)]);
        let fin = assemble_final(&org, &rec).unwrap();
        assert_eq!(fin.len(), 5);
        assert_eq!(fin.total_tokens(), 12);
        assert_eq!(fin.manifest().created_from.len(), 2);

        let empty = Pool::empty("recycled", TokenCounter::WhitespaceWords);
        let fin = assemble_final(&org, &empty).unwrap();
        assert_eq!(fin.documents(), org.documents());

        let clash = pool_of(&[("b", 1)]);
        assert!(matches!(assemble_final(&org, &clash), Err(Error::DuplicateId(id)) if id == "b"));
    }

    #[test]
    fn rl_filter_examples() {
        let pool = pool_of(&[("a", 1), ("b", 1), ("c", 1)]);
        let s = ScoreTable::from_pairs("dataman", [("a", 5.0), ("b", 3.0), ("c", 4.0)]).unwrap();
        assert_eq!(ids(&rl_data_filter(&pool, &s).unwrap()), ["b", "c"]);
        let s = ScoreTable::from_pairs("dataman", [("a", 5.0), ("b", 5.0), ("c", 5.0)]).unwrap();
        assert!(rl_data_filter(&pool, &s).unwrap().is_empty());
        let s = ScoreTable::from_pairs("dataman", [("a", 1.0), ("b", 1.0), ("c", 1.0)]).unwrap();
        assert_eq!(rl_data_filter(&pool, &s).unwrap().len(), 3);
        let s = ScoreTable::from_pairs("dataman", [("a", 6.0), ("b", 1.0), ("c", 1.0)]).unwrap();
        assert!(matches!(rl_data_filter(&pool, &s), Err(Error::Validation(_))));
        let s = ScoreTable::from_pairs("dataman", [("a", 2.5), ("b", 1.0), ("c", 1.0)]).unwrap();
        assert!(rl_data_filter(&pool, &s).is_err());
    }

    #[test]
    fn score_table_rejects_duplicates_and_reads_by_scorer() {
        let mut t = ScoreTable::new("q");
        t.insert("a", 1.0).unwrap();
        assert!(t.insert("a", 2.0).is_err());
        assert!(t.insert("b", f64::NAN).is_err());

        let text = "{\"doc_id\":\"a\",\"scorer\":\"q\",\"value\":0.5}\n\
                    {\"doc_id\":\"a\",\"scorer\":\"dataman\",\"value\":3}\n";
        let q = ScoreTable::read(std::io::Cursor::new(text), "q").unwrap();
        assert_eq!(q.get("a"), Some(0.5));
        let d = ScoreTable::read(std::io::Cursor::new(text), "dataman").unwrap();
        assert_eq!(d.get("a"), Some(3.0));
        let mut buf = Vec::new();
        d.write(&mut buf, Path::new("mem")).unwrap();
        assert_eq!(ScoreTable::read(std::io::Cursor::new(buf), "dataman").unwrap(), d);
    }
}
