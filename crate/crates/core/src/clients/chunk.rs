//! Splitting long documents into chunks that fit a generation budget.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenCounter;

pub const DEFAULT_MAX_TOKENS: u64 = 2048;

/// Separator used when rephrased chunks are joined back into one document.
pub const REASSEMBLY_SEPARATOR: &str = "\n";

/// One piece of a document. `body` is what gets rephrased; `trailing` is the
/// whitespace that followed it in the source, kept so the split is lossless.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub body: String,
    pub trailing: String,
}

/// Concatenates chunks with their recorded separators.
pub fn reassemble(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    for c in chunks {
        out.push_str(&c.body);
        out.push_str(&c.trailing);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    start: usize,
    body_end: usize,
    end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Paragraph,
    Sentence,
    Word,
}

fn ends_sentence(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…' | '。' | '！' | '？')
}

/// Splits `text[unit.start..unit.body_end]` at whitespace runs accepted by the
/// level's boundary rule. The last piece inherits the unit's trailing text.
fn split_units(text: &str, unit: Unit, level: Level) -> Vec<Unit> {
    let body = &text[unit.start..unit.body_end];
    let mut out = Vec::new();
    let mut cur = unit.start;
    let mut prev: Option<char> = None;
    let mut run_start: Option<usize> = None;
    let mut newlines = 0usize;
    let mut close_run = |run_start: usize, run_end: usize, prev: Option<char>, newlines: usize, cur: &mut usize| {
        if run_start == *cur || run_end == unit.body_end {
            return;
        }
        let boundary = match level {
            Level::Paragraph => newlines >= 2,
            Level::Sentence => prev.is_some_and(ends_sentence),
            Level::Word => true,
        };
        if boundary {
            out.push(Unit {
                start: *cur,
                body_end: run_start,
                end: run_end,
            });
            *cur = run_end;
        }
    };
    let mut before_run: Option<char> = None;
    for (i, c) in body.char_indices() {
        let pos = unit.start + i;
        if c.is_whitespace() {
            if run_start.is_none() {
                run_start = Some(pos);
                before_run = prev;
                newlines = 0;
            }
            if c == '\n' {
                newlines += 1;
            }
        } else if let Some(rs) = run_start.take() {
            close_run(rs, pos, before_run, newlines, &mut cur);
        }
        prev = Some(c);
    }
    // A unit body never ends in whitespace, so no run is left open here
    // except for a whitespace-only top-level text, which is never split.
    out.push(Unit {
        start: cur,
        body_end: unit.body_end,
        end: unit.end,
    });
    out
}

/// Cuts a unit into pieces of at most `max_bytes`, on char boundaries.
fn byte_cut(text: &str, unit: Unit, max_bytes: usize) -> Vec<Unit> {
    let mut out = Vec::new();
    let mut start = unit.start;
    while unit.body_end - start > max_bytes {
        let mut cut = start + max_bytes;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        out.push(Unit {
            start,
            body_end: cut,
            end: cut,
        });
        start = cut;
    }
    out.push(Unit {
        start,
        body_end: unit.body_end,
        end: unit.end,
    });
    out
}

fn refine(text: &str, unit: Unit, level: Option<Level>, counter: TokenCounter, max_tokens: u64, out: &mut Vec<Unit>) {
    if counter.count(&text[unit.start..unit.body_end]) <= max_tokens {
        out.push(unit);
        return;
    }
    let next = match level {
        Some(Level::Paragraph) => Some(Level::Sentence),
        Some(Level::Sentence) => Some(Level::Word),
        Some(Level::Word) | None => None,
    };
    match level {
        Some(level) => {
            let pieces = split_units(text, unit, level);
            if pieces.len() == 1 {
                refine(text, unit, next, counter, max_tokens, out);
            } else {
                for p in pieces {
                    refine(text, p, next, counter, max_tokens, out);
                }
            }
        }
        None => {
            // Only reachable for byte-based counting: a single word is one
            // whitespace token and always fits.
            let max_bytes = (max_tokens as usize).saturating_mul(4).saturating_add(3);
            out.extend(byte_cut(text, unit, max_bytes));
        }
    }
}

/// Splits `text` into chunks whose bodies each count at most `max_tokens`.
/// Boundaries prefer blank lines, then sentence ends, then single
/// whitespace runs, then raw character positions. Pieces are packed greedily.
pub fn chunk(text: &str, counter: TokenCounter, max_tokens: u64) -> Vec<Chunk> {
    let max_tokens = max_tokens.max(1);
    if text.is_empty() {
        return Vec::new();
    }
    if counter.count(text) <= max_tokens {
        return vec![Chunk {
            body: text.to_string(),
            trailing: String::new(),
        }];
    }
    let trimmed = text.trim_end();
    let top = Unit {
        start: 0,
        body_end: trimmed.len(),
        end: text.len(),
    };
    let mut units = Vec::new();
    refine(text, top, Some(Level::Paragraph), counter, max_tokens, &mut units);

    let mut chunks = Vec::new();
    let mut open: Option<(usize, usize, u64)> = None; // (start, last unit index, words)
    let flush = |open: (usize, usize, u64), chunks: &mut Vec<Chunk>, units: &[Unit]| {
        let last = units[open.1];
        chunks.push(Chunk {
            body: text[open.0..last.body_end].to_string(),
            trailing: text[last.body_end..last.end].to_string(),
        });
    };
    for (i, u) in units.iter().enumerate() {
        let words = counter.count(&text[u.start..u.body_end]);
        open = match open {
            None => Some((u.start, i, words)),
            Some((start, last, acc)) => {
                let merged = match counter {
                    TokenCounter::WhitespaceWords => acc + words,
                    TokenCounter::BytesDiv4 => counter.count(&text[start..u.body_end]),
                };
                if merged <= max_tokens {
                    Some((start, i, merged))
                } else {
                    flush((start, last, acc), &mut chunks, &units);
                    Some((u.start, i, words))
                }
            }
        };
    }
    if let Some(o) = open {
        flush(o, &mut chunks, &units);
    }
    chunks
}
