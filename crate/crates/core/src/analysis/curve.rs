//! Validation reward curves from the GRPO lab.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::CurvePoint;

/// One JSON object per validation step.
pub fn curve_jsonl(points: &[CurvePoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&serde_json::to_string(p).expect("curve point serializes"));
        out.push('\n');
    }
    out
}

pub fn read_curve<R: BufRead>(reader: R) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let bad = |message: String| Error::MalformedRecord { line: idx + 1, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

/// Mean and spread of the total reward across runs at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub step: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

/// Aggregates runs that share the same evaluation steps.
pub fn aggregate_curves(runs: &[Vec<CurvePoint>]) -> Result<Vec<CurveBand>> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    for r in runs {
        if r.len() != first.len() || r.iter().zip(first).any(|(a, b)| a.step != b.step) {
            return Err(Error::Validation("curves are evaluated at different steps".into()));
        }
    }
    Ok((0..first.len())
        .map(|i| {
            let totals: Vec<f64> = runs.iter().map(|r| r[i].total).collect();
            CurveBand {
                step: first[i].step,
                mean: totals.iter().sum::<f64>() / totals.len() as f64,
                min: totals.iter().copied().fold(f64::INFINITY, f64::min),
                max: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                runs: totals.len(),
            }
        })
        .collect())
}

/// Whether the total at every step is at least the total `window` steps
/// earlier, for every evaluation step that has such a predecessor.
pub fn non_decreasing_over(points: &[CurvePoint], window: usize) -> bool {
    points.iter().all(|p| {
        p.step < window
            || points
                .iter()
                .find(|q| q.step + window == p.step)
                .is_none_or(|q| p.total >= q.total)
    })
}

type Series = (&'static str, &'static str, fn(&CurvePoint) -> f64);

const W: f64 = 640.0;
const H: f64 = 320.0;
const M: f64 = 40.0;

/// Line chart of the five reward series against step.
pub fn curve_svg(points: &[CurvePoint]) -> String {
    let series: [Series; 5] = [
        ("total", "black", |p| p.total),
        ("dataman", "steelblue", |p| p.dataman),
        ("bertscore", "darkorange", |p| p.bertscore),
        ("structure", "seagreen", |p| p.structure),
        ("length", "crimson", |p| p.length),
    ];
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    let _ = writeln!(
        out,
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(out, "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>", H - M);
    if !points.is_empty() {
        let max_step = points.iter().map(|p| p.step).max().unwrap_or(0).max(1) as f64;
        let values = points.iter().flat_map(|p| series.iter().map(move |(_, _, f)| f(p)));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x = |s: usize| M + (W - 2.0 * M) * s as f64 / max_step;
        let y = |v: f64| H - M - (H - 2.0 * M) * (v - lo) / span;
        for (i, (name, color, f)) in series.iter().enumerate() {
            let pts: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", x(p.step), y(f(p)))).collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"><title>{name}</title></polyline>",
                pts.join(" ")
            );
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{color}\">{name}</text>",
                W - M - 60.0,
                M + 12.0 * i as f64
            );
        }
        let _ = writeln!(out, "<text x=\"4\" y=\"{M}\" font-size=\"10\">{hi:.3}</text>");
        let _ = writeln!(out, "<text x=\"4\" y=\"{}\" font-size=\"10\">{lo:.3}</text>", H - M);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(step: usize, total: f64) -> CurvePoint {
        CurvePoint {
            step,
            total,
            ..Default::default()
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let pts = vec![pt(0, 0.1), pt(10, 0.25)];
        let text = curve_jsonl(&pts);
        assert_eq!(read_curve(text.as_bytes()).unwrap(), pts);
    }

    #[test]
    fn bands() {
        let b = aggregate_curves(&[vec![pt(0, 0.0), pt(5, 1.0)], vec![pt(0, 0.5), pt(5, 0.0)]]).unwrap();
        assert_eq!(b[0].mean, 0.25);
        assert_eq!((b[1].min, b[1].max), (0.0, 1.0));
        assert!(aggregate_curves(&[vec![pt(0, 0.0)], vec![pt(1, 0.0)]]).is_err());
    }

    #[test]
    fn window_monotonicity() {
        let up = vec![pt(0, 0.1), pt(25, 0.05), pt(50, 0.2), pt(75, 0.3), pt(100, 0.3)];
        assert!(non_decreasing_over(&up, 50));
        let down = vec![pt(0, 0.1), pt(50, 0.2), pt(100, 0.15)];
        assert!(!non_decreasing_over(&down, 50));
    }

    #[test]
    fn svg_is_stable() {
        let pts = vec![pt(0, 0.1), pt(10, 0.5)];
        assert_eq!(curve_svg(&pts), curve_svg(&pts));
        assert_eq!(curve_svg(&pts).matches("<polyline").count(), 5);
        assert!(curve_svg(&[]).ends_with("</svg>\n"));
    }
}
