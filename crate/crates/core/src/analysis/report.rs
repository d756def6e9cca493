//! Report rendering: aligned text, tab-delimited records and SVG bar charts.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::histogram::{Histogram, HistogramKind};

/// Run metadata, written once before the data records.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportHeader {
    pub run_id: String,
    pub config_digest: String,
    pub counter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub header: ReportHeader,
    pub histograms: Vec<Histogram>,
    pub summaries: Vec<Summary>,
}

impl Report {
    pub fn new(header: ReportHeader) -> Self {
        Report {
            header,
            ..Default::default()
        }
    }

    pub fn summary(&mut self, name: &str, value: Option<f64>) {
        if let Some(value) = value {
            self.summaries.push(Summary {
                name: name.to_string(),
                value,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Delimited,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::TableText => "txt",
            ReportFormat::Delimited => "tsv",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" | "text" => Ok(ReportFormat::TableText),
            "delimited" | "tsv" => Ok(ReportFormat::Delimited),
            "svg-plot" | "svg" => Ok(ReportFormat::Svg),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

pub fn emit_report(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::TableText => table_text(report).into_bytes(),
        ReportFormat::Delimited => delimited(report).into_bytes(),
        ReportFormat::Svg => svg_document(&report.histograms).into_bytes(),
    }
}

fn table_text(report: &Report) -> String {
    let h = &report.header;
    let mut out = format!(
        "run_id: {}\nconfig_digest: {}\ncounter: {}\n",
        h.run_id, h.config_digest, h.counter
    );
    for hist in &report.histograms {
        let width = hist.labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(3);
        let _ = write!(out, "\n{} ({}, total {})\n", hist.name, hist.kind.as_str(), hist.total);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>7}", "bin", "count", "share");
        for (i, label) in hist.labels.iter().enumerate() {
            let _ = writeln!(out, "{label:<width$}  {:>8}  {:>7.4}", hist.counts[i], hist.share(i));
        }
    }
    if !report.summaries.is_empty() {
        let width = report.summaries.iter().map(|s| s.name.len()).max().unwrap_or(0);
        out.push_str("\nsummaries\n");
        for s in &report.summaries {
            let _ = writeln!(out, "{:<width$}  {}", s.name, s.value);
        }
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(Error::Validation(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default()))),
        }
    }
    Ok(out)
}

/// Tab-separated records:
///
/// ```text
/// header    <run_id> <config_digest> <counter>
/// histogram <name> <kind> <total> <edges, comma-separated>
/// bin       <name> <label> <count>
/// summary   <name> <value>
/// ```
fn delimited(report: &Report) -> String {
    let h = &report.header;
    let mut out = format!(
        "header\t{}\t{}\t{}\n",
        escape(&h.run_id),
        escape(&h.config_digest),
        escape(&h.counter)
    );
    for hist in &report.histograms {
        let edges: Vec<String> = hist.edges.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(
            out,
            "histogram\t{}\t{}\t{}\t{}",
            escape(&hist.name),
            hist.kind.as_str(),
            hist.total,
            edges.join(",")
        );
        for (label, count) in hist.labels.iter().zip(&hist.counts) {
            let _ = writeln!(out, "bin\t{}\t{}\t{count}", escape(&hist.name), escape(label));
        }
    }
    for s in &report.summaries {
        let _ = writeln!(out, "summary\t{}\t{}", escape(&s.name), s.value);
    }
    out
}

/// Reads back what the delimited format wrote.
pub fn parse_delimited(src: &str) -> Result<Report> {
    let mut report = Report::default();
    let mut seen_header = false;
    for (idx, line) in src.lines().enumerate() {
        let bad = |m: &str| Error::MalformedRecord {
            line: idx + 1,
            message: m.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| -> Result<u64> { s.parse().map_err(|_| bad("expected an integer")) };
        match fields.as_slice() {
            ["header", run_id, digest, counter] if !seen_header => {
                report.header = ReportHeader {
                    run_id: unescape(run_id)?,
                    config_digest: unescape(digest)?,
                    counter: unescape(counter)?,
                };
                seen_header = true;
            }
            ["histogram", name, kind, total, edges] if seen_header => {
                let kind = match *kind {
                    "categorical" => HistogramKind::Categorical,
                    "numeric" => HistogramKind::Numeric,
                    _ => return Err(bad("unknown histogram kind")),
                };
                let edges = if edges.is_empty() {
                    Vec::new()
                } else {
                    edges
                        .split(',')
                        .map(|e| e.parse::<f64>().map_err(|_| bad("bad edge")))
                        .collect::<Result<Vec<_>>>()?
                };
                report.histograms.push(Histogram {
                    name: unescape(name)?,
                    kind,
                    labels: Vec::new(),
                    edges,
                    counts: Vec::new(),
                    total: num(total)?,
                });
            }
            ["bin", name, label, count] => {
                let name = unescape(name)?;
                let h = report
                    .histograms
                    .last_mut()
                    .filter(|h| h.name == name)
                    .ok_or_else(|| bad("bin outside its histogram"))?;
                h.labels.push(unescape(label)?);
                h.counts.push(num(count)?);
            }
            ["summary", name, value] if seen_header => report.summaries.push(Summary {
                name: unescape(name)?,
                value: value.parse().map_err(|_| bad("bad summary value"))?,
            }),
            _ => return Err(bad("unrecognized record")),
        }
    }
    if !seen_header {
        return Err(Error::Validation("report has no header record".into()));
    }
    for h in &report.histograms {
        h.check()?;
    }
    Ok(report)
}

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `<g>` element for one bar chart with its top-left corner at `(0, y0)`.
fn chart_group(hist: &Histogram, y0: f64) -> String {
    let mut g = format!("<g transform=\"translate(0,{y0})\">\n");
    let _ = writeln!(
        g,
        "<text x=\"{MARGIN}\" y=\"20\" font-size=\"14\">{} (n={})</text>",
        xml_escape(&hist.name),
        hist.total
    );
    let plot_w = CHART_W - 2.0 * MARGIN;
    let plot_h = CHART_H - 2.0 * MARGIN - 20.0;
    let base_y = MARGIN + 20.0 + plot_h;
    let _ = writeln!(
        g,
        "<line x1=\"{MARGIN}\" y1=\"{base_y:.2}\" x2=\"{:.2}\" y2=\"{base_y:.2}\" stroke=\"black\"/>",
        MARGIN + plot_w
    );
    let n = hist.bins().max(1) as f64;
    let max = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = plot_w / n;
    let label_every = (hist.bins() / 10).max(1);
    for (i, &c) in hist.counts.iter().enumerate() {
        let h = plot_h * c as f64 / max;
        let x = MARGIN + bar_w * i as f64;
        let _ = writeln!(
            g,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"steelblue\"><title>{}: {c}</title></rect>",
            x + bar_w * 0.1,
            base_y - h,
            bar_w * 0.8,
            xml_escape(&hist.labels[i])
        );
        if i % label_every == 0 {
            let _ = writeln!(
                g,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                x + bar_w / 2.0,
                base_y + 14.0,
                xml_escape(&hist.labels[i])
            );
        }
    }
    g.push_str("</g>\n");
    g
}

/// All charts stacked vertically in one document. No charts gives a valid,
/// empty SVG.
pub fn svg_document(histograms: &[Histogram]) -> String {
    let height = CHART_H * histograms.len() as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{height}\" viewBox=\"0 0 {CHART_W} {height}\">\n"
    );
    for (i, h) in histograms.iter().enumerate() {
        out.push_str(&chart_group(h, CHART_H * i as f64));
    }
    out.push_str("</svg>\n");
    out
}

/// One SVG file per chart: `(file stem, bytes)`.
pub fn svg_charts(report: &Report) -> Vec<(String, Vec<u8>)> {
    report
        .histograms
        .iter()
        .map(|h| (h.name.clone(), svg_document(std::slice::from_ref(h)).into_bytes()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::histogram::{score_histogram, similarity_histogram, structure_distribution};

    fn sample() -> Report {
        let mut r = Report::new(ReportHeader {
            run_id: "run\t1".into(),
            config_digest: "abc".into(),
            counter: "whitespace-words".into(),
        });
        r.histograms.push(score_histogram(&[5, 5, 3]).unwrap());
        let s = similarity_histogram(&[0.7, 0.91, 1.0], 0.05).unwrap();
        r.summary("similarity_mean", s.mean);
        r.histograms.push(s.histogram);
        r.histograms.push(structure_distribution(&["Markdown", "XML"]));
        r
    }

    #[test]
    fn deterministic_bytes() {
        for f in [ReportFormat::TableText, ReportFormat::Delimited, ReportFormat::Svg] {
            assert_eq!(emit_report(&sample(), f), emit_report(&sample(), f));
        }
    }

    #[test]
    fn delimited_round_trip() {
        let r = sample();
        let text = String::from_utf8(emit_report(&r, ReportFormat::Delimited)).unwrap();
        assert_eq!(parse_delimited(&text).unwrap(), r);
    }

    #[test]
    fn empty_report_is_valid() {
        let r = Report::default();
        let svg = String::from_utf8(emit_report(&r, ReportFormat::Svg)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let tsv = String::from_utf8(emit_report(&r, ReportFormat::Delimited)).unwrap();
        assert_eq!(parse_delimited(&tsv).unwrap(), r);
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("pdf".parse::<ReportFormat>(), Err(Error::Config(_))));
        assert_eq!("svg-plot".parse::<ReportFormat>().unwrap(), ReportFormat::Svg);
    }

    #[test]
    fn one_svg_per_chart() {
        let charts = svg_charts(&sample());
        assert_eq!(charts.len(), 3);
        assert_eq!(charts[0].0, "dataman_score");
        assert_eq!(String::from_utf8_lossy(&charts[0].1).matches("<rect").count(), 5);
    }
}
