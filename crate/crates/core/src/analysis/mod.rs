//! Distribution reports over rephrasing results and reward curves.

mod curve;
mod histogram;
mod operations;
mod report;

pub use curve::{aggregate_curves, curve_jsonl, curve_svg, non_decreasing_over, read_curve, CurveBand};
pub use histogram::{
    length_ratio_distribution, score_histogram, similarity_histogram, structure_category, structure_distribution,
    Histogram, HistogramKind, LengthSummary, SimilaritySummary, DEFAULT_RATIO_BIN, DEFAULT_SIMILARITY_BIN,
    SCORE_LABELS, STRUCTURE_LABELS,
};
pub use operations::{categorize_operations, KeywordTable, OperationCategory, OperationReport};
pub use report::{emit_report, parse_delimited, svg_charts, svg_document, Report, ReportFormat, ReportHeader, Summary};
