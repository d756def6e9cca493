use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramKind {
    Categorical,
    Numeric,
}

impl HistogramKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HistogramKind::Categorical => "categorical",
            HistogramKind::Numeric => "numeric",
        }
    }
}

/// Counts over ordered labels, or over numeric bins `[e_i, e_{i+1})` whose
/// last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub kind: HistogramKind,
    /// Bin labels; for numeric histograms these are rendered ranges.
    pub labels: Vec<String>,
    /// Numeric edges, one more than the number of bins. Empty when categorical.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn categorical<S: Into<String>>(name: &str, labels: impl IntoIterator<Item = S>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Histogram {
            name: name.to_string(),
            kind: HistogramKind::Categorical,
            counts: vec![0; labels.len()],
            labels,
            edges: Vec::new(),
            total: 0,
        }
    }

    pub fn numeric(name: &str, edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Validation(format!("histogram `{name}`: edges must be finite and strictly increasing")));
        }
        let n = edges.len() - 1;
        let labels = (0..n)
            .map(|i| {
                let close = if i + 1 == n { ']' } else { ')' };
                format!("[{}, {}{close}", edges[i], edges[i + 1])
            })
            .collect();
        Ok(Histogram {
            name: name.to_string(),
            kind: HistogramKind::Numeric,
            labels,
            counts: vec![0; n],
            edges,
            total: 0,
        })
    }

    /// Evenly spaced edges from `lo` to `hi`; the last edge is exactly `hi`.
    pub fn uniform_edges(lo: f64, hi: f64, width: f64) -> Result<Vec<f64>> {
        if !(width > 0.0 && width.is_finite()) || !(lo < hi) {
            return Err(Error::Validation(format!("bad bin layout: [{lo}, {hi}] by {width}")));
        }
        let n = (((hi - lo) / width) - 1e-9).ceil().max(1.0) as usize;
        let mut edges: Vec<f64> = (0..n).map(|i| tidy(lo + i as f64 * width)).collect();
        edges.push(hi);
        Ok(edges)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add_to(&mut self, bin: usize) {
        self.counts[bin] += 1;
        self.total += 1;
    }

    /// Bin holding `value`, or `None` outside `[first edge, last edge]`.
    pub fn numeric_bin(&self, value: f64) -> Option<usize> {
        let (first, last) = (*self.edges.first()?, *self.edges.last()?);
        if !(value >= first && value <= last) {
            return None;
        }
        let interior = &self.edges[1..self.edges.len() - 1];
        Some(interior.partition_point(|&e| e <= value))
    }

    pub fn count_of(&self, label: &str) -> Option<u64> {
        self.labels.iter().position(|l| l == label).map(|i| self.counts[i])
    }

    pub fn share(&self, bin: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[bin] as f64 / self.total as f64
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.counts.iter().sum::<u64>() != self.total {
            return Err(Error::Integrity(format!("histogram `{}`: counts do not sum to total", self.name)));
        }
        if self.labels.len() != self.counts.len() {
            return Err(Error::Integrity(format!("histogram `{}`: label/count mismatch", self.name)));
        }
        if self.kind == HistogramKind::Numeric && self.edges.len() != self.counts.len() + 1 {
            return Err(Error::Integrity(format!("histogram `{}`: edge/count mismatch", self.name)));
        }
        Ok(())
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    Some(values.sum::<f64>() / n as f64)
}

/// Snaps accumulated rounding error so edge labels print cleanly.
fn tidy(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

pub const SCORE_LABELS: [&str; 5] = ["1", "2", "3", "4", "5"];

/// DataMan overall scores over the five levels.
pub fn score_histogram(scores: &[u8]) -> Result<Histogram> {
    let mut h = Histogram::categorical("dataman_score", SCORE_LABELS);
    for &s in scores {
        if !(1..=5).contains(&s) {
            return Err(Error::Validation(format!("DataMan score {s} outside [1, 5]")));
        }
        h.add_to(usize::from(s - 1));
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySummary {
    pub histogram: Histogram,
    /// `None` for an empty input.
    pub mean: Option<f64>,
}

pub const DEFAULT_SIMILARITY_BIN: f64 = 0.05;

/// Similarity scores in `[-1, 1]`, binned by `bin_width`; 1.0 falls in the
/// last bin.
pub fn similarity_histogram(values: &[f64], bin_width: f64) -> Result<SimilaritySummary> {
    let mut h = Histogram::numeric("similarity", Histogram::uniform_edges(-1.0, 1.0, bin_width)?)?;
    for &v in values {
        let bin = h
            .numeric_bin(v)
            .ok_or_else(|| Error::Validation(format!("similarity {v} outside [-1, 1]")))?;
        h.add_to(bin);
    }
    Ok(SimilaritySummary {
        histogram: h,
        mean: mean(values.iter().copied()),
    })
}

pub const STRUCTURE_LABELS: [&str; 4] = ["plain text", "markdown", "blog/forum", "others"];

/// Maps a free-text structure label onto the four reporting categories.
pub fn structure_category(label: &str) -> &'static str {
    let l = label.trim().to_lowercase();
    if l.contains("markdown") {
        "markdown"
    } else if l.contains("blog") || l.contains("forum") {
        "blog/forum"
    } else if l == "plain" || l.starts_with("plain text") || l == "plaintext" || l == "plain-text" {
        "plain text"
    } else {
        "others"
    }
}

pub fn structure_distribution<S: AsRef<str>>(labels: &[S]) -> Histogram {
    let mut h = Histogram::categorical("structure", STRUCTURE_LABELS);
    for l in labels {
        let cat = structure_category(l.as_ref());
        let bin = STRUCTURE_LABELS.iter().position(|c| *c == cat).expect("known category");
        h.add_to(bin);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthSummary {
    pub histogram: Histogram,
    pub mean_ratio: Option<f64>,
    /// Share of pairs with `len_rec <= tau * len_org`.
    pub fraction_within: Option<f64>,
}

pub const DEFAULT_RATIO_BIN: f64 = 0.25;
const MIN_RATIO_SPAN: f64 = 3.0;

/// Ratios `len_rec / len_org` binned from 0 by `bin_width`, far enough to
/// hold the largest ratio (at least up to 3).
pub fn length_ratio_distribution(pairs: &[(u64, u64)], tau: f64, bin_width: f64) -> Result<LengthSummary> {
    if let Some(&(o, r)) = pairs.iter().find(|(o, _)| *o == 0) {
        return Err(Error::Validation(format!("organic length is zero in pair ({o}, {r})")));
    }
    let ratios: Vec<f64> = pairs.iter().map(|&(o, r)| r as f64 / o as f64).collect();
    let top = ratios.iter().copied().fold(MIN_RATIO_SPAN, f64::max);
    let mut edges = Histogram::uniform_edges(0.0, MIN_RATIO_SPAN, bin_width)?;
    while *edges.last().expect("nonempty") < top {
        edges.push(tidy(edges.len() as f64 * bin_width));
    }
    let mut h = Histogram::numeric("length_ratio", edges)?;
    for &r in &ratios {
        h.add_to(h.numeric_bin(r).expect("edges cover every ratio"));
    }
    let within = pairs.iter().filter(|&&(o, r)| r as f64 <= tau * o as f64).count();
    Ok(LengthSummary {
        histogram: h,
        mean_ratio: mean(ratios.iter().copied()),
        fraction_within: (!pairs.is_empty()).then(|| within as f64 / pairs.len() as f64),
    })
}
