//! Pure parsers for judge and rephraser responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::StructureVerdict;

pub const REPHRASE_MARKER: &str = "Here is a paraphrased version:";
pub const DATAMAN_CRITERIA: usize = 13;
const OVERALL_INDEX: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataManScore {
    pub criteria: [u8; DATAMAN_CRITERIA],
    pub overall: u8,
    pub domain: Option<String>,
}

fn parse_err(message: impl Into<String>, raw: &str) -> Error {
    Error::Parse {
        message: message.into(),
        raw: raw.to_string(),
    }
}

/// Reads a `[k]Name:s/5` line. Returns `None` when the line has no `[k]` prefix.
fn criterion_line(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix('[')?;
    let close = rest.find(']')?;
    let index = rest[..close].trim().parse::<usize>().ok()?;
    let after = &rest[close + 1..];
    let colon = after.find(':')?;
    Some((index, after[colon + 1..].trim()))
}

fn score_value(index: usize, value: &str, raw: &str) -> Result<u8> {
    let number = match value.split_once('/') {
        Some((n, denom)) => {
            if denom.trim() != "5" {
                return Err(parse_err(format!("criterion {index}: expected a score out of 5, got `{value}`"), raw));
            }
            n.trim()
        }
        None => value,
    };
    let v: u8 = number
        .parse()
        .map_err(|_| parse_err(format!("criterion {index}: `{value}` is not an integer score"), raw))?;
    if !(1..=5).contains(&v) {
        return Err(parse_err(format!("criterion {index}: score {v} outside [1, 5]"), raw));
    }
    Ok(v)
}

pub fn parse_dataman(response: &str) -> Result<DataManScore> {
    let mut found: [Option<u8>; OVERALL_INDEX] = [None; OVERALL_INDEX];
    let mut domain = None;
    for line in response.lines() {
        let line = line.trim();
        if let Some(d) = line.strip_prefix("Domain:") {
            let d = d.trim();
            if !d.is_empty() && d != "_" {
                domain = Some(d.to_string());
            }
            continue;
        }
        let Some((index, value)) = criterion_line(line) else {
            continue;
        };
        if !(1..=OVERALL_INDEX).contains(&index) {
            return Err(parse_err(format!("unexpected criterion index {index}"), response));
        }
        if found[index - 1].is_some() {
            return Err(parse_err(format!("criterion {index} appears twice"), response));
        }
        found[index - 1] = Some(score_value(index, value, response)?);
    }
    let overall = found[OVERALL_INDEX - 1]
        .ok_or_else(|| parse_err(format!("missing criterion {OVERALL_INDEX} (overall score)"), response))?;
    let mut criteria = [0u8; DATAMAN_CRITERIA];
    for (k, slot) in criteria.iter_mut().enumerate() {
        *slot = found[k].ok_or_else(|| parse_err(format!("missing criterion {}", k + 1), response))?;
    }
    Ok(DataManScore {
        criteria,
        overall,
        domain,
    })
}

pub fn parse_structure_verdict(response: &str) -> Result<StructureVerdict> {
    match response.trim() {
        "1" => Ok(StructureVerdict::Preserved),
        "0" => Ok(StructureVerdict::NotPreserved),
        _ => Err(Error::Judge {
            message: "structure judge must answer `1` or `0`".into(),
            raw: response.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rephrase {
    pub text: String,
    pub marker_missing: bool,
}

pub fn parse_rephrase(response: &str) -> Result<Rephrase> {
    let (body, marker_missing) = match response.find(REPHRASE_MARKER) {
        Some(pos) => (&response[pos + REPHRASE_MARKER.len()..], false),
        None => (response, true),
    };
    let text = body.trim();
    if text.is_empty() {
        return Err(Error::EmptyRephrase);
    }
    Ok(Rephrase {
        text: text.to_string(),
        marker_missing,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub verb: String,
    pub noun: String,
}

/// Strips a surrounding ```json fence if present.
fn unfence(s: &str) -> &str {
    let t = s.trim();
    let Some(inner) = t.strip_prefix("```") else {
        return t;
    };
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    match inner.find('\n') {
        Some(nl) if !inner[..nl].trim_start().starts_with('{') => inner[nl + 1..].trim(),
        _ => inner.trim(),
    }
}

pub fn parse_operations(response: &str) -> Result<Vec<Operation>> {
    let value: serde_json::Value =
        serde_json::from_str(unfence(response)).map_err(|e| parse_err(format!("not a JSON object: {e}"), response))?;
    let ops = value
        .get("operations")
        .ok_or_else(|| parse_err("missing `operations` key", response))?
        .as_array()
        .ok_or_else(|| parse_err("`operations` is not an array", response))?;
    ops.iter()
        .map(|op| {
            let s = op
                .as_str()
                .ok_or_else(|| parse_err("operation entries must be strings", response))?
                .trim();
            let mut words = s.splitn(2, char::is_whitespace);
            let verb = words.next().unwrap_or_default();
            if verb.is_empty() {
                return Err(parse_err("empty operation entry", response));
            }
            Ok(Operation {
                verb: verb.to_string(),
                noun: words.next().unwrap_or_default().trim().to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataman_response(skip: Option<usize>, overall: &str) -> String {
        let mut s = String::from("Domain: Science\n\n");
        for k in 1..=13 {
            if Some(k) != skip {
                s.push_str(&format!("[{k}]Criterion:{}/5\n\n", 1 + k % 5));
            }
        }
        s.push_str(&format!("[14]Overall Score:{overall}"));
        s
    }

    #[test]
    fn dataman_overall_and_criteria() {
        let d = parse_dataman(&dataman_response(None, "4/5")).unwrap();
        assert_eq!(d.overall, 4);
        assert_eq!(d.criteria[0], 2);
        assert_eq!(d.criteria[4], 1);
        assert_eq!(d.domain.as_deref(), Some("Science"));
    }

    #[test]
    fn dataman_range_and_missing_lines() {
        let e = parse_dataman(&dataman_response(None, "6/5")).unwrap_err();
        assert!(e.to_string().contains("outside"), "{e}");
        let e = parse_dataman(&dataman_response(Some(7), "4/5")).unwrap_err();
        assert!(e.to_string().contains("criterion 7"), "{e}");
        match parse_dataman("[1]Accuracy:3/5") {
            Err(Error::Parse { raw, message }) => {
                assert_eq!(raw, "[1]Accuracy:3/5");
                assert!(message.contains("14"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_dataman(&dataman_response(None, "four/5")).is_err());
        assert!(parse_dataman(&dataman_response(None, "3.5/5")).is_err());
    }

    #[test]
    fn structure_verdicts() {
        assert_eq!(parse_structure_verdict("1").unwrap(), StructureVerdict::Preserved);
        assert_eq!(parse_structure_verdict(" 0\n").unwrap(), StructureVerdict::NotPreserved);
        assert!(matches!(parse_structure_verdict("yes"), Err(Error::Judge { .. })));
        assert!(parse_structure_verdict("10").is_err());
    }

    #[test]
    fn rephrase_marker() {
        let r = parse_rephrase("Here is a paraphrased version:\nABC").unwrap();
        assert_eq!(r.text, "ABC");
        assert!(!r.marker_missing);
        let r = parse_rephrase("ABC").unwrap();
        assert_eq!(r.text, "ABC");
        assert!(r.marker_missing);
        assert!(matches!(parse_rephrase("Here is a paraphrased version:\n"), Err(Error::EmptyRephrase)));
        assert!(matches!(parse_rephrase("  \n"), Err(Error::EmptyRephrase)));
    }

    #[test]
    fn operations() {
        let ops = parse_operations(r#"{"operations":["removing ads","paraphrasing sentences"]}"#).unwrap();
        assert_eq!(
            ops,
            vec![
                Operation { verb: "removing".into(), noun: "ads".into() },
                Operation { verb: "paraphrasing".into(), noun: "sentences".into() },
            ]
        );
        assert!(parse_operations(r#"{"operations":[]}"#).unwrap().is_empty());
        assert!(parse_operations(r#"{"ops":[]}"#).is_err());
        assert!(parse_operations("not json").is_err());
        let fenced = "```json\n{\"operations\": [\"adding headings\"]}\n```";
        assert_eq!(parse_operations(fenced).unwrap()[0].noun, "headings");
    }
}
