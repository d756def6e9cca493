//! Deterministic in-process stand-ins for every service kind.
//!
//! They answer the same prompts a real service would receive and reply in the
//! shape the parsers expect, so whole pipelines run offline.

use crate::bertscore::HashEmbedder;
use crate::error::{Error, Result};

use super::parse::REPHRASE_MARKER;
use super::templates::{PromptTemplate, TemplateName, ORGANIC_TEXT, RECYCLED_TEXT, TEXT};
use super::transport::Transport;
use super::wire::{ServiceKind, ServiceRequest, ServiceResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RephraseMode {
    Identity,
    Uppercase,
    TruncateHalf,
}

#[derive(Debug, Clone, PartialEq)]
enum Mode {
    Rephrase(RephraseMode),
    Dataman,
    Structure,
    Embed(HashEmbedder),
    Classify,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Builtin {
    kind: ServiceKind,
    mode: Mode,
}

impl Builtin {
    /// Mode strings: rephrase takes `identity` (default), `uppercase` or
    /// `truncate-half`; embed takes `hash` or `hash:<dim>:<seed>`; the other
    /// kinds have a single behaviour and accept an empty mode or `rule`.
    pub fn from_mode(kind: ServiceKind, mode: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown builtin mode `{mode}` for {kind}"));
        let mode = match kind {
            ServiceKind::Rephrase => Mode::Rephrase(match mode {
                "" | "identity" => RephraseMode::Identity,
                "uppercase" => RephraseMode::Uppercase,
                "truncate-half" => RephraseMode::TruncateHalf,
                _ => return Err(bad()),
            }),
            ServiceKind::Embed => {
                let mut e = HashEmbedder::default();
                match mode {
                    "" | "hash" => {}
                    m => {
                        let rest = m.strip_prefix("hash:").ok_or_else(bad)?;
                        let (dim, seed) = rest.split_once(':').ok_or_else(bad)?;
                        e.dim = dim.parse().map_err(|_| bad())?;
                        e.seed = seed.parse().map_err(|_| bad())?;
                        if e.dim == 0 {
                            return Err(bad());
                        }
                    }
                }
                Mode::Embed(e)
            }
            _ if !(mode.is_empty() || mode == "rule") => return Err(bad()),
            ServiceKind::ScoreDataman => Mode::Dataman,
            ServiceKind::JudgeStructure => Mode::Structure,
            ServiceKind::Classify => Mode::Classify,
        };
        Ok(Builtin { kind, mode })
    }

    pub fn respond(&self, request: &ServiceRequest) -> ServiceResponse {
        if request.kind != self.kind {
            return ServiceResponse::error(format!("this service handles {}, not {}", self.kind, request.kind));
        }
        let prompt = request.prompt.as_str();
        let out = match &self.mode {
            Mode::Rephrase(m) => slot(TemplateName::Repro, prompt, ORGANIC_TEXT)
                .map(|text| ServiceResponse::text(format!("{REPHRASE_MARKER}\n{}", rephrase(*m, &text)))),
            Mode::Dataman => slot(TemplateName::Dataman, prompt, TEXT).map(|text| ServiceResponse::text(dataman(&text))),
            Mode::Structure => {
                let t = PromptTemplate::shipped(TemplateName::Structure);
                t.extract(prompt)
                    .ok_or_else(|| "prompt does not match the structure template".to_string())
                    .map(|b| {
                        let same = density_class(&b[ORGANIC_TEXT]) == density_class(&b[RECYCLED_TEXT]);
                        ServiceResponse::text(if same { "1" } else { "0" })
                    })
            }
            Mode::Embed(e) => {
                let tokens: Vec<&str> = prompt.split_whitespace().collect();
                Ok(ServiceResponse::vectors(tokens.iter().map(|t| e.token_vector(t)).collect()))
            }
            Mode::Classify => {
                if let Ok(text) = slot(TemplateName::StructureClass, prompt, TEXT) {
                    Ok(ServiceResponse::text(structure_type(&text)))
                } else if PromptTemplate::shipped(TemplateName::OperationClass).extract(prompt).is_some() {
                    Ok(ServiceResponse::text(FIXED_OPERATIONS))
                } else {
                    Err("prompt matches no classification template".to_string())
                }
            }
        };
        out.unwrap_or_else(ServiceResponse::error)
    }
}

impl Transport for Builtin {
    fn call(&self, request: &ServiceRequest) -> Result<ServiceResponse> {
        Ok(self.respond(request))
    }
}

const FIXED_OPERATIONS: &str =
    r#"{"operations": ["paraphrasing sentences", "removing boilerplate", "clarifying terms"]}"#;

fn slot(name: TemplateName, prompt: &str, key: &str) -> std::result::Result<String, String> {
    PromptTemplate::shipped(name)
        .extract(prompt)
        .and_then(|mut b| b.remove(key))
        .ok_or_else(|| format!("prompt does not match the {name} template"))
}

fn rephrase(mode: RephraseMode, text: &str) -> String {
    match mode {
        RephraseMode::Identity => text.to_string(),
        RephraseMode::Uppercase => text.to_uppercase(),
        RephraseMode::TruncateHalf => {
            let n = text.chars().count();
            text.chars().take(n.div_ceil(2)).collect()
        }
    }
}

/// Number of non-blank pieces between sentence terminators.
pub fn sentence_count(text: &str) -> usize {
    text.split(['.', '!', '?']).filter(|s| !s.trim().is_empty()).count()
}

/// Overall score `clamp(1 + sentences, 1, 5)`, repeated for every criterion.
pub fn rule_dataman_score(text: &str) -> u8 {
    (1 + sentence_count(text)).clamp(1, 5) as u8
}

fn dataman(text: &str) -> String {
    let s = rule_dataman_score(text);
    let mut out = String::from("Domain: General\n");
    for k in 1..=13 {
        out.push_str(&format!("[{k}]Criterion:{s}/5\n"));
    }
    out.push_str(&format!("[14]Overall Score:{s}/5"));
    out
}

/// 0: single line; 1: fewer than one newline per ten words; 2: denser.
pub fn density_class(text: &str) -> u8 {
    let newlines = text.trim().matches('\n').count();
    let words = text.split_whitespace().count().max(1);
    if newlines == 0 {
        0
    } else if newlines * 10 < words {
        1
    } else {
        2
    }
}

fn structure_type(text: &str) -> &'static str {
    let markdown = text.contains("```")
        || text.lines().any(|l| {
            let l = l.trim_start();
            l.starts_with('#') || l.starts_with("- ") || l.starts_with("* ") || l.starts_with('|')
        });
    if markdown {
        return "Markdown";
    }
    let lower = text.to_lowercase();
    if lower.contains("posted by") || lower.contains("reply") || lower.contains("comments") {
        return "Blog/Forum";
    }
    "Plain Text"
}
