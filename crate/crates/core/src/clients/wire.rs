//! Message schema shared by every transport.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Rephrase,
    ScoreDataman,
    JudgeStructure,
    Embed,
    Classify,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::Rephrase,
        ServiceKind::ScoreDataman,
        ServiceKind::JudgeStructure,
        ServiceKind::Embed,
        ServiceKind::Classify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Rephrase => "rephrase",
            ServiceKind::ScoreDataman => "score_dataman",
            ServiceKind::JudgeStructure => "judge_structure",
            ServiceKind::Embed => "embed",
            ServiceKind::Classify => "classify",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ServiceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown service kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            top_p: 0.9,
            max_tokens: 2048,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub kind: ServiceKind,
    pub prompt: String,
    pub params: GenerationParams,
}

/// Exactly one of `text`, `vectors` (embed requests) or `error` is expected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ServiceResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ServiceResponse {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn vectors(vectors: Vec<Vec<f64>>) -> Self {
        ServiceResponse {
            vectors: Some(vectors),
            ..Default::default()
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServiceResponse {
            error: Some(message.into()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    HttpJson,
    StdioLines,
    /// In-process deterministic behaviours; `address` selects the mode.
    Builtin,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http-json" => Ok(TransportKind::HttpJson),
            "stdio-lines" => Ok(TransportKind::StdioLines),
            "builtin" => Ok(TransportKind::Builtin),
            _ => Err(Error::Config(format!("unknown transport `{s}`"))),
        }
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_inflight() -> usize {
    8
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceEndpoint {
    pub kind: ServiceKind,
    pub transport: TransportKind,
    /// URL for http-json, shell command line for stdio-lines, mode for builtin.
    pub address: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    /// Total attempts per request.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First backoff delay; doubles after every failed attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub params: GenerationParams,
}

impl ServiceEndpoint {
    pub fn new(kind: ServiceKind, transport: TransportKind, address: impl Into<String>) -> Self {
        ServiceEndpoint {
            kind,
            transport,
            address: address.into(),
            timeout_ms: default_timeout_ms(),
            max_inflight: default_max_inflight(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            params: GenerationParams::default(),
        }
    }

    pub fn builtin(kind: ServiceKind, mode: impl Into<String>) -> Self {
        ServiceEndpoint::new(kind, TransportKind::Builtin, mode)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inflight == 0 {
            return Err(Error::Config(format!("{} endpoint: max_inflight must be >= 1", self.kind)));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config(format!("{} endpoint: timeout_ms must be > 0", self.kind)));
        }
        if self.retries == 0 {
            return Err(Error::Config(format!("{} endpoint: retries must be >= 1", self.kind)));
        }
        if self.transport != TransportKind::Builtin && self.address.trim().is_empty() {
            return Err(Error::Config(format!("{} endpoint: address is empty", self.kind)));
        }
        self.params.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_schema() {
        let req = ServiceRequest {
            kind: ServiceKind::ScoreDataman,
            prompt: "p".into(),
            params: GenerationParams::default(),
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"kind":"score_dataman","prompt":"p","params":{"temperature":1.0,"top_p":0.9,"max_tokens":2048}}"#
        );
        let back: ServiceRequest = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn response_schema() {
        assert_eq!(serde_json::to_string(&ServiceResponse::text("a")).unwrap(), r#"{"text":"a"}"#);
        assert_eq!(serde_json::to_string(&ServiceResponse::error("e")).unwrap(), r#"{"error":"e"}"#);
        let r: ServiceResponse = serde_json::from_str(r#"{"text":"x","extra":1}"#).unwrap();
        assert_eq!(r.text.as_deref(), Some("x"));
    }

    #[test]
    fn endpoint_defaults_and_validation() {
        let e: ServiceEndpoint =
            toml::from_str("kind = \"rephrase\"\ntransport = \"stdio-lines\"\naddress = \"python3 stub.py\"").unwrap();
        assert_eq!(e.max_inflight, 8);
        assert_eq!(e.retries, 3);
        assert_eq!(e.backoff_ms, 500);
        assert_eq!(e.params, GenerationParams::default());
        e.validate().unwrap();
        let mut bad = e.clone();
        bad.max_inflight = 0;
        assert!(bad.validate().is_err());
        let mut bad = e;
        bad.timeout_ms = 0;
        assert!(bad.validate().is_err());
    }
}
