//! Declarative run configuration (TOML).
//!
//! Every key is optional; omitted keys take the defaults below, which are the
//! published settings (threshold 0.018112, reward weights (3, 1, 1, 1),
//! similarity threshold 0.65, length ratio 1.25, clip 0.2, KL weight 0.005,
//! 8 rollouts per group).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clients::{ServiceEndpoint, ServiceKind, DEFAULT_MAX_TOKENS};
use crate::corpus::TokenCounter;
use crate::error::{Error, Result};
use crate::filter::DEFAULT_TAU_ORG;
use crate::grpo::LabConfig;
use crate::reward::RewardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetStep {
    pub total_budget: u64,
    /// Defaults to the token total of the high-quality organic pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub org_hq_tokens: Option<u64>,
}

/// One filtering step: either a fixed threshold or a token budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetStep>,
}

impl Default for FilterStep {
    fn default() -> Self {
        FilterStep {
            tau: Some(DEFAULT_TAU_ORG),
            budget: None,
        }
    }
}

impl FilterStep {
    pub fn validate(&self, name: &str) -> Result<()> {
        match (self.tau, self.budget) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "filter.{name}: set either `tau` or `budget`, not both"
            ))),
            (None, None) => Err(Error::Config(format!("filter.{name}: one of `tau` or `budget` is required"))),
            (Some(t), None) if !t.is_finite() => Err(Error::Config(format!("filter.{name}.tau must be finite"))),
            (None, Some(b)) if b.org_hq_tokens.is_some_and(|o| o > b.total_budget) => Err(Error::Config(format!(
                "filter.{name}.budget: org_hq_tokens exceeds total_budget"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub organic: FilterStep,
    pub recycled: FilterStep,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub org_pool: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub score_tables: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub counter: TokenCounter,
    /// Maximum tokens per chunk sent to the rephraser.
    pub chunk_tokens: u64,
    pub paths: Paths,
    pub filter: FilterConfig,
    pub reward: RewardConfig,
    pub grpo: LabConfig,
    /// Endpoints by kind; kinds without an entry use the in-process builtin.
    pub endpoints: Vec<ServiceEndpoint>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            counter: TokenCounter::default(),
            chunk_tokens: DEFAULT_MAX_TOKENS,
            paths: Paths::default(),
            filter: FilterConfig::default(),
            reward: RewardConfig::default(),
            grpo: LabConfig::default(),
            endpoints: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_tokens == 0 {
            return Err(Error::Config("chunk_tokens must be positive".into()));
        }
        self.filter.organic.validate("organic")?;
        self.filter.recycled.validate("recycled")?;
        self.reward.validate()?;
        self.grpo.validate()?;
        let mut kinds = BTreeSet::new();
        for e in &self.endpoints {
            if !kinds.insert(e.kind) {
                return Err(Error::Config(format!("endpoints: `{}` is configured twice", e.kind)));
            }
            e.validate()?;
        }
        Ok(())
    }

    pub fn endpoint(&self, kind: ServiceKind) -> ServiceEndpoint {
        self.endpoints
            .iter()
            .find(|e| e.kind == kind)
            .cloned()
            .unwrap_or_else(|| ServiceEndpoint::builtin(kind, ""))
    }

    /// Replaces or adds the endpoint for its kind.
    pub fn set_endpoint(&mut self, endpoint: ServiceEndpoint) {
        self.endpoints.retain(|e| e.kind != endpoint.kind);
        self.endpoints.push(endpoint);
        self.endpoints.sort_by_key(|e| e.kind);
    }

    /// Stable digest of the effective configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.filter.organic.tau, Some(0.018112));
        assert_eq!(c.endpoint(ServiceKind::Embed), ServiceEndpoint::builtin(ServiceKind::Embed, ""));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.filter.recycled = FilterStep {
            tau: None,
            budget: Some(BudgetStep {
                total_budget: 1000,
                org_hq_tokens: None,
            }),
        };
        c.set_endpoint(ServiceEndpoint::builtin(ServiceKind::Rephrase, "uppercase"));
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn filter_step_needs_exactly_one_mode() {
        let both = "[filter.organic]\ntau = 0.1\nbudget = { total_budget = 10 }\n";
        let e = RunConfig::from_toml(both).unwrap_err().to_string();
        assert!(e.contains("filter.organic"), "{e}");
        let none = "[filter.recycled]\n";
        assert!(RunConfig::from_toml(none).unwrap_err().to_string().contains("filter.recycled"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("sede = 1").is_err());
        let e = RunConfig::from_toml("[grpo]\nlearning_rate = -1.0").unwrap_err().to_string();
        assert!(e.contains("learning_rate"), "{e}");
        let dup = "[[endpoints]]\nkind = \"embed\"\ntransport = \"builtin\"\naddress = \"\"\n\
                   [[endpoints]]\nkind = \"embed\"\ntransport = \"builtin\"\naddress = \"hash\"\n";
        assert!(RunConfig::from_toml(dup).is_err());
    }
}
