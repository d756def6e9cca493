//! Shipped prompt templates and their rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORGANIC_TEXT: &str = "Organic Text";
pub const RECYCLED_TEXT: &str = "Recycled Text";
pub const TEXT: &str = "Text";

const PLACEHOLDERS: [&str; 3] = [ORGANIC_TEXT, RECYCLED_TEXT, TEXT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Repro,
    Dataman,
    Structure,
    StructureClass,
    OperationClass,
    Wrap,
    Rewire,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::Repro,
        TemplateName::Dataman,
        TemplateName::Structure,
        TemplateName::StructureClass,
        TemplateName::OperationClass,
        TemplateName::Wrap,
        TemplateName::Rewire,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Repro => "repro",
            TemplateName::Dataman => "dataman",
            TemplateName::Structure => "structure",
            TemplateName::StructureClass => "structure_class",
            TemplateName::OperationClass => "operation_class",
            TemplateName::Wrap => "wrap",
            TemplateName::Rewire => "rewire",
        }
    }

    fn body(self) -> &'static str {
        match self {
            TemplateName::Repro => include_str!("../../assets/prompts/repro.txt"),
            TemplateName::Dataman => include_str!("../../assets/prompts/dataman.txt"),
            TemplateName::Structure => include_str!("../../assets/prompts/structure.txt"),
            TemplateName::StructureClass => include_str!("../../assets/prompts/structure_class.txt"),
            TemplateName::OperationClass => include_str!("../../assets/prompts/operation_class.txt"),
            TemplateName::Wrap => include_str!("../../assets/prompts/wrap.txt"),
            TemplateName::Rewire => include_str!("../../assets/prompts/rewire.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown template `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Literal(String),
    Slot(&'static str),
}

/// A prompt body with `{Organic Text}`, `{Recycled Text}` or `{Text}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    parts: Vec<Part>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let parts = split_parts(&body);
        PromptTemplate {
            name: name.into(),
            body,
            parts,
        }
    }

    pub fn shipped(name: TemplateName) -> Self {
        // Asset files end with a newline that is not part of the prompt.
        let body = name.body();
        PromptTemplate::new(name.as_str(), body.strip_suffix('\n').unwrap_or(body))
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(s) => Some(*s),
                Part::Literal(_) => None,
            })
            .collect()
    }

    /// Substitutes every placeholder in a single pass; bound text is never
    /// rescanned. Unused bindings are logged and ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out = String::with_capacity(self.body.len() + bindings.values().map(|v| v.len()).sum::<usize>());
        for part in &self.parts {
            match part {
                Part::Literal(s) => out.push_str(s),
                Part::Slot(name) => {
                    let v = bindings.get(name).ok_or_else(|| Error::MissingBinding(name.to_string()))?;
                    out.push_str(v);
                }
            }
        }
        let used = self.placeholders();
        for key in bindings.keys() {
            if !used.contains(key) {
                log::warn!("template `{}` has no placeholder `{key}`; binding ignored", self.name);
            }
        }
        Ok(out)
    }

    /// Recovers the bound values from a rendered prompt. Each slot extends to
    /// the next occurrence of the following literal (the last one to the final
    /// occurrence of the closing literal).
    pub fn extract(&self, rendered: &str) -> Option<BTreeMap<&'static str, String>> {
        let mut out = BTreeMap::new();
        let mut rest = rendered;
        let mut pending: Option<&'static str> = None;
        let last_literal = self.parts.iter().rposition(|p| matches!(p, Part::Literal(_)));
        for (idx, part) in self.parts.iter().enumerate() {
            match part {
                Part::Slot(name) => pending = Some(name),
                Part::Literal(lit) => {
                    let pos = match pending {
                        None => {
                            if !rest.starts_with(lit.as_str()) {
                                return None;
                            }
                            0
                        }
                        Some(name) => {
                            let pos = if Some(idx) == last_literal {
                                rest.rfind(lit.as_str())?
                            } else {
                                rest.find(lit.as_str())?
                            };
                            out.insert(name, rest[..pos].to_string());
                            pending = None;
                            pos
                        }
                    };
                    rest = &rest[pos + lit.len()..];
                }
            }
        }
        match pending {
            Some(name) => {
                out.insert(name, rest.to_string());
            }
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(out)
    }
}

fn split_parts(body: &str) -> Vec<Part> {
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut rest = body;
    'outer: while !rest.is_empty() {
        if rest.starts_with('{') {
            for name in PLACEHOLDERS {
                let token_len = name.len() + 2;
                if rest.len() >= token_len && &rest[1..token_len - 1] == name && rest.as_bytes()[token_len - 1] == b'}' {
                    if !lit.is_empty() {
                        parts.push(Part::Literal(std::mem::take(&mut lit)));
                    }
                    parts.push(Part::Slot(name));
                    rest = &rest[token_len..];
                    continue 'outer;
                }
            }
        }
        let ch = rest.chars().next().expect("nonempty");
        lit.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    if !lit.is_empty() {
        parts.push(Part::Literal(lit));
    }
    parts
}

/// Renders a shipped template with the given bindings.
pub fn render(name: TemplateName, bindings: &[(&str, &str)]) -> Result<String> {
    let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
    PromptTemplate::shipped(name).render(&map)
}
