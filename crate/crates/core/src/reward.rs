//! Composite rephrasing reward: a quality delta plus three faithfulness
//! indicators (semantic similarity, structure, length), combined linearly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::dataman_score;
use crate::par::Exec;

/// Weights and thresholds of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_dataman: f64,
    pub lambda_bertscore: f64,
    pub lambda_structure: f64,
    pub lambda_length: f64,
    pub tau_bertscore: f64,
    pub tau_length: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_dataman: 3.0,
            lambda_bertscore: 1.0,
            lambda_structure: 1.0,
            lambda_length: 1.0,
            tau_bertscore: 0.65,
            tau_length: 1.25,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_dataman", self.lambda_dataman),
            ("lambda_bertscore", self.lambda_bertscore),
            ("lambda_structure", self.lambda_structure),
            ("lambda_length", self.lambda_length),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("reward.{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.tau_length > 0.0 && self.tau_length.is_finite()) {
            return Err(Error::Config(format!("reward.tau_length must be > 0, got {}", self.tau_length)));
        }
        if !(-1.0..=1.0).contains(&self.tau_bertscore) {
            return Err(Error::Config(format!(
                "reward.tau_bertscore must lie in [-1, 1], got {}",
                self.tau_bertscore
            )));
        }
        Ok(())
    }
}

/// Verdict returned by the structure judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureVerdict {
    Preserved,
    NotPreserved,
}

/// How the quality component is derived from two quality scores.
pub trait QualityReward: Send + Sync {
    fn delta(&self, organic: f64, recycled: f64) -> Result<f64>;
}

/// Difference of DataMan overall scores (integers in [1, 5]).
#[derive(Debug, Clone, Copy, Default)]
pub struct DataManDelta;

impl QualityReward for DataManDelta {
    fn delta(&self, organic: f64, recycled: f64) -> Result<f64> {
        let o = dataman_score(organic)?;
        let r = dataman_score(recycled)?;
        dataman_reward(o, r)
    }
}

/// Difference of continuous classifier scores, e.g. a fastText probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContinuousDelta;

impl QualityReward for ContinuousDelta {
    fn delta(&self, organic: f64, recycled: f64) -> Result<f64> {
        if !organic.is_finite() || !recycled.is_finite() {
            return Err(Error::Validation("quality scores must be finite".into()));
        }
        Ok(recycled - organic)
    }
}

pub fn dataman_reward(score_organic: u8, score_recycled: u8) -> Result<f64> {
    for s in [score_organic, score_recycled] {
        if !(1..=5).contains(&s) {
            return Err(Error::Validation(format!("DataMan score {s} outside [1, 5]")));
        }
    }
    Ok(f64::from(score_recycled) - f64::from(score_organic))
}

/// 1 iff `similarity >= tau`.
pub fn bertscore_reward(similarity: f64, tau: f64) -> Result<u8> {
    if !(-1.0..=1.0).contains(&similarity) {
        return Err(Error::Validation(format!("similarity {similarity} outside [-1, 1]")));
    }
    Ok(u8::from(similarity >= tau))
}

pub fn structure_reward(verdict: StructureVerdict) -> u8 {
    u8::from(verdict == StructureVerdict::Preserved)
}

/// 1 iff `len_recycled <= tau * len_organic`. An empty rephrasing passes.
pub fn length_reward(len_organic: u64, len_recycled: u64, tau: f64) -> Result<u8> {
    if len_organic == 0 {
        return Err(Error::Degenerate("organic length is zero".into()));
    }
    Ok(u8::from(len_recycled as f64 <= tau * len_organic as f64))
}

/// The four reward components for one (organic, recycled) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_dataman: f64,
    pub r_bertscore: u8,
    pub r_structure: u8,
    pub r_length: u8,
}

impl RewardComponents {
    pub fn total(&self, config: &RewardConfig) -> f64 {
        config.lambda_dataman * self.r_dataman
            + config.lambda_bertscore * f64::from(self.r_bertscore)
            + config.lambda_structure * f64::from(self.r_structure)
            + config.lambda_length * f64::from(self.r_length)
    }
}

/// Components plus weighted total for one pair; also the export record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub organic_id: String,
    pub recycled_id: String,
    pub r_dataman: f64,
    pub r_bertscore: u8,
    pub r_structure: u8,
    pub r_length: u8,
    pub total: f64,
    pub inputs_digest: String,
}

impl RewardBreakdown {
    pub fn components(&self) -> RewardComponents {
        RewardComponents {
            r_dataman: self.r_dataman,
            r_bertscore: self.r_bertscore,
            r_structure: self.r_structure,
            r_length: self.r_length,
        }
    }
}

pub fn inputs_digest(organic_id: &str, recycled_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(organic_id.as_bytes());
    h.update([0u8]);
    h.update(recycled_id.as_bytes());
    hex::encode(&h.finalize()[..16])
}

pub fn combine(
    organic_id: &str,
    recycled_id: &str,
    components: RewardComponents,
    config: &RewardConfig,
) -> RewardBreakdown {
    RewardBreakdown {
        organic_id: organic_id.to_string(),
        recycled_id: recycled_id.to_string(),
        r_dataman: components.r_dataman,
        r_bertscore: components.r_bertscore,
        r_structure: components.r_structure,
        r_length: components.r_length,
        total: components.total(config),
        inputs_digest: inputs_digest(organic_id, recycled_id),
    }
}

/// Everything the reward needs to know about one pair, already measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSignals {
    pub quality_organic: f64,
    pub quality_recycled: f64,
    pub similarity: f64,
    pub structure: StructureVerdict,
    pub len_organic: u64,
    pub len_recycled: u64,
}

/// Scores one pair end to end.
pub fn evaluate_pair(
    organic_id: &str,
    recycled_id: &str,
    signals: &PairSignals,
    quality: &dyn QualityReward,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    if signals.len_recycled == 0 {
        log::warn!("empty rephrasing for `{organic_id}`: length reward passes, quality/similarity decide");
    }
    let components = RewardComponents {
        r_dataman: quality.delta(signals.quality_organic, signals.quality_recycled)?,
        r_bertscore: bertscore_reward(signals.similarity, config.tau_bertscore)?,
        r_structure: structure_reward(signals.structure),
        r_length: length_reward(signals.len_organic, signals.len_recycled, config.tau_length)?,
    };
    Ok(combine(organic_id, recycled_id, components, config))
}

/// Scores many pairs; output order follows `pairs`.
pub fn evaluate_batch(
    pairs: &[(String, String, PairSignals)],
    quality: &dyn QualityReward,
    config: &RewardConfig,
    exec: Exec,
) -> Result<Vec<RewardBreakdown>> {
    exec.try_map(pairs, |(o, r, s)| evaluate_pair(o, r, s, quality, config))
}

pub fn write_breakdowns<W: Write>(rows: &[RewardBreakdown], mut writer: W, path_hint: &Path) -> Result<()> {
    for row in rows {
        let line = serde_json::to_string(row).expect("breakdown serializes");
        writeln!(writer, "{line}").map_err(|e| Error::io(path_hint, e))?;
    }
    writer.flush().map_err(|e| Error::io(path_hint, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::parse_structure_verdict;

    #[test]
    fn dataman_examples() {
        assert_eq!(dataman_reward(3, 5).unwrap(), 2.0);
        assert_eq!(dataman_reward(5, 5).unwrap(), 0.0);
        assert_eq!(dataman_reward(5, 3).unwrap(), -2.0);
        assert!(dataman_reward(0, 3).is_err());
        assert!(dataman_reward(3, 6).is_err());
        assert!(DataManDelta.delta(3.5, 4.0).is_err());
    }

    #[test]
    fn bertscore_examples() {
        assert_eq!(bertscore_reward(0.65, 0.65).unwrap(), 1);
        assert_eq!(bertscore_reward(0.6499, 0.65).unwrap(), 0);
        assert_eq!(bertscore_reward(1.0, 0.65).unwrap(), 1);
        assert!(bertscore_reward(1.01, 0.65).is_err());
    }

    #[test]
    fn structure_examples() {
        assert_eq!(structure_reward(StructureVerdict::Preserved), 1);
        assert_eq!(structure_reward(StructureVerdict::NotPreserved), 0);
        let err = parse_structure_verdict("maybe").map(structure_reward).unwrap_err();
        assert!(matches!(err, Error::Judge { .. }));
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_reward(100, 125, 1.25).unwrap(), 1);
        assert_eq!(length_reward(100, 126, 1.25).unwrap(), 0);
        assert_eq!(length_reward(100, 0, 1.25).unwrap(), 1);
        assert!(matches!(length_reward(0, 5, 1.25), Err(Error::Degenerate(_))));
    }

    #[test]
    fn combine_examples() {
        let cfg = RewardConfig::default();
        let c = |d, b, s, l| RewardComponents {
            r_dataman: d,
            r_bertscore: b,
            r_structure: s,
            r_length: l,
        };
        assert_eq!(combine("x", "x#rec", c(2.0, 1, 1, 1), &cfg).total, 9.0);
        assert_eq!(combine("x", "x#rec", c(0.0, 0, 0, 0), &cfg).total, 0.0);
        assert_eq!(combine("x", "x#rec", c(-4.0, 0, 0, 0), &cfg).total, -12.0);
        assert_eq!(combine("x", "x#rec", c(4.0, 1, 1, 1), &cfg).total, 15.0);
    }

    #[test]
    fn identity_rephrasing_scores_the_copy_floor() {
        let signals = PairSignals {
            quality_organic: 3.0,
            quality_recycled: 3.0,
            similarity: 1.0,
            structure: StructureVerdict::Preserved,
            len_organic: 40,
            len_recycled: 40,
        };
        let b = evaluate_pair("d", "d#rec", &signals, &DataManDelta, &RewardConfig::default()).unwrap();
        assert_eq!(b.total, 3.0);
        assert_eq!(b.inputs_digest, inputs_digest("d", "d#rec"));
        assert_ne!(b.inputs_digest, inputs_digest("d#", "rec"));
    }

    #[test]
    fn continuous_quality_is_pluggable() {
        let signals = PairSignals {
            quality_organic: 0.01,
            quality_recycled: 0.25,
            similarity: 0.9,
            structure: StructureVerdict::NotPreserved,
            len_organic: 10,
            len_recycled: 11,
        };
        let b = evaluate_pair("d", "d#rec", &signals, &ContinuousDelta, &RewardConfig::default()).unwrap();
        assert!((b.r_dataman - 0.24).abs() < 1e-15);
        assert_eq!((b.r_bertscore, b.r_structure, b.r_length), (1, 0, 1));
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig {
            lambda_length: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("lambda_length"));
        let bad = RewardConfig {
            tau_length: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RewardConfig {
            tau_bertscore: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
