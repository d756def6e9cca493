//! Group-relative policy optimization on a tabular softmax policy.
//!
//! The policy maps a context state (one input token) to a distribution over
//! output tokens; a sequence's probability is the product over positions.
//! The objective per rollout `i` of a group is
//!
//! ```text
//! min(P_i * A_i, clip(P_i, 1 - eps, 1 + eps) * A_i) - beta * KL(pi || pi_base)
//! ```
//!
//! with `A_i` the group-normalized reward and the KL taken exactly per
//! visited state and averaged along the sequence.

mod lab;
mod policy;

pub use lab::{
    derive_seed, run_lab, sample_group, validation_rewards, ComponentMeans, CurvePoint, LabConfig, LabRun,
    RephraseTask, RolloutReward, ScoredOutput, TargetTokenTask, TaskKind, ToyInput,
};
pub use policy::{ToyPolicy, MAX_SEQ_LEN, MAX_VOCAB};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

/// Tolerance for recomputed log-probabilities.
pub const LOG_PROB_TOLERANCE: f64 = 1e-6;

/// Which log-probability the importance ratio is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioReference {
    /// The policy snapshot that sampled the rollouts.
    #[default]
    Rollout,
    /// The frozen base policy.
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub n_rollouts: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub std_floor: f64,
    pub ratio_reference: RatioReference,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            n_rollouts: 8,
            epsilon: 0.2,
            beta: 0.005,
            std_floor: 1e-8,
            ratio_reference: RatioReference::Rollout,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("grpo.epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("grpo.beta must be >= 0, got {}", self.beta)));
        }
        if self.n_rollouts < 2 {
            return Err(Error::Config(format!("grpo.n_rollouts must be >= 2, got {}", self.n_rollouts)));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::Config(format!("grpo.std_floor must be > 0, got {}", self.std_floor)));
        }
        Ok(())
    }
}

/// One input with its sampled outputs, their log-probabilities, rewards and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub input_id: String,
    /// Context state at each position.
    pub states: Vec<usize>,
    pub outputs: Vec<Vec<usize>>,
    /// Sequence log-probabilities under the sampling policy.
    pub log_probs_current: Vec<f64>,
    pub log_probs_base: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn rollout_ids(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("{}#{i}", self.input_id)).collect()
    }

    fn check_shape(&self, policy: &ToyPolicy) -> Result<()> {
        let n = self.outputs.len();
        if n < 2 {
            return Err(Error::Validation(format!("group `{}` has {n} rollouts, need >= 2", self.input_id)));
        }
        for (name, len) in [
            ("log_probs_current", self.log_probs_current.len()),
            ("log_probs_base", self.log_probs_base.len()),
            ("rewards", self.rewards.len()),
            ("advantages", self.advantages.len()),
        ] {
            if len != n {
                return Err(Error::Validation(format!(
                    "group `{}`: {name} has {len} entries for {n} rollouts",
                    self.input_id
                )));
            }
        }
        if let Some(&s) = self.states.iter().find(|&&s| s >= policy.num_states()) {
            return Err(Error::Validation(format!("state {s} out of range")));
        }
        for out in &self.outputs {
            if out.len() != self.states.len() {
                return Err(Error::Validation(format!(
                    "group `{}`: output length {} != input length {}",
                    self.input_id,
                    out.len(),
                    self.states.len()
                )));
            }
            if let Some(&t) = out.iter().find(|&&t| t >= policy.vocab()) {
                return Err(Error::Validation(format!("token {t} out of range")));
            }
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Group-normalized advantages `(r_i - mean) / std`; all zero when the
/// population std falls below `std_floor`.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Validation(format!(
            "advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("non-finite reward".into()));
    }
    let m = mean(rewards);
    let sd = population_std(rewards);
    if sd < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / sd).collect())
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::Validation(format!("probability ratio must be > 0, got {ratio}")));
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Exact `KL(policy(.|state) || base(.|state))`.
pub fn kl_penalty(policy: &ToyPolicy, base: &ToyPolicy, state: usize) -> Result<f64> {
    policy.check_compatible(base)?;
    if state >= policy.num_states() {
        return Err(Error::Validation(format!("state {state} out of range")));
    }
    let lp = policy.log_probs(state);
    let lq = base.log_probs(state);
    Ok(kl_from_log_probs(&lp, &lq))
}

fn kl_from_log_probs(lp: &[f64], lq: &[f64]) -> f64 {
    lp.iter()
        .zip(lq)
        .map(|(&a, &b)| if a == f64::NEG_INFINITY { 0.0 } else { a.exp() * (a - b) })
        .sum::<f64>()
        .max(0.0)
}

/// Mean per-position KL along a state sequence.
pub fn sequence_kl(policy: &ToyPolicy, base: &ToyPolicy, states: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &s in states {
        total += kl_penalty(policy, base, s)?;
    }
    Ok(total / states.len() as f64)
}

fn ratio_denominators<'a>(group: &'a RolloutGroup, config: &GrpoConfig) -> &'a [f64] {
    match config.ratio_reference {
        RatioReference::Rollout => &group.log_probs_current,
        RatioReference::Base => &group.log_probs_base,
    }
}

/// Verifies the stored log-probabilities against the supplied policies.
pub fn check_integrity(group: &RolloutGroup, policy: &ToyPolicy, base: &ToyPolicy, config: &GrpoConfig) -> Result<()> {
    policy.check_compatible(base)?;
    group.check_shape(policy)?;
    for (i, out) in group.outputs.iter().enumerate() {
        let lb = base.sequence_log_prob(&group.states, out)?;
        if (lb - group.log_probs_base[i]).abs() > LOG_PROB_TOLERANCE {
            return Err(Error::Integrity(format!(
                "group `{}` rollout {i}: stored base log-prob {} but base policy gives {lb}",
                group.input_id, group.log_probs_base[i]
            )));
        }
        if config.ratio_reference == RatioReference::Base {
            let lc = policy.sequence_log_prob(&group.states, out)?;
            if (lc - group.log_probs_current[i]).abs() > LOG_PROB_TOLERANCE {
                return Err(Error::Integrity(format!(
                    "group `{}` rollout {i}: stored log-prob {} but policy gives {lc}",
                    group.input_id, group.log_probs_current[i]
                )));
            }
        }
        if !group.log_probs_current[i].is_finite() {
            return Err(Error::Integrity(format!("group `{}` rollout {i}: non-finite log-prob", group.input_id)));
        }
    }
    Ok(())
}

/// Objective of a single group after checking its stored log-probabilities.
pub fn grpo_objective(group: &RolloutGroup, policy: &ToyPolicy, base: &ToyPolicy, config: &GrpoConfig) -> Result<f64> {
    check_integrity(group, policy, base, config)?;
    group_objective(group, policy, base, config)
}

/// Mean of the group objectives, recomputing log-probabilities from `policy`.
/// No integrity check: this is the function whose gradient [`ascend`] follows.
pub fn surrogate_objective(
    groups: &[RolloutGroup],
    policy: &ToyPolicy,
    base: &ToyPolicy,
    config: &GrpoConfig,
) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut total = 0.0;
    for g in groups {
        g.check_shape(policy)?;
        total += group_objective(g, policy, base, config)?;
    }
    Ok(total / groups.len() as f64)
}

fn group_objective(group: &RolloutGroup, policy: &ToyPolicy, base: &ToyPolicy, config: &GrpoConfig) -> Result<f64> {
    let denominators = ratio_denominators(group, config);
    let kl = sequence_kl(policy, base, &group.states)?;
    let mut acc = 0.0;
    for (i, out) in group.outputs.iter().enumerate() {
        let lp = policy.sequence_log_prob(&group.states, out)?;
        let ratio = (lp - denominators[i]).exp();
        acc += clipped_term(ratio, group.advantages[i], config.epsilon)? - config.beta * kl;
    }
    Ok(acc / group.len() as f64)
}

/// Analytic gradient of one group's objective with respect to the logits.
fn group_gradient(
    group: &RolloutGroup,
    policy: &ToyPolicy,
    base: &ToyPolicy,
    config: &GrpoConfig,
) -> Result<Vec<f64>> {
    let v = policy.vocab();
    let n = group.len() as f64;
    let mut grad = vec![0.0; policy.logits().len()];
    let denominators = ratio_denominators(group, config);

    let probs: Vec<Vec<f64>> = (0..policy.num_states()).map(|s| policy.probs(s)).collect();

    for (i, out) in group.outputs.iter().enumerate() {
        let a = group.advantages[i];
        let lp = policy.sequence_log_prob(&group.states, out)?;
        let ratio = (lp - denominators[i]).exp();
        let clipped = ratio.clamp(1.0 - config.epsilon, 1.0 + config.epsilon);
        // d/dtheta of min(...) is zero whenever the clipped branch is the smaller one.
        if ratio * a > clipped * a || a == 0.0 {
            continue;
        }
        let coef = a * ratio / n;
        for (&s, &y) in group.states.iter().zip(out) {
            let row = &mut grad[s * v..(s + 1) * v];
            for (k, g) in row.iter_mut().enumerate() {
                *g -= coef * probs[s][k];
            }
            row[y] += coef;
        }
    }

    if config.beta != 0.0 && !group.states.is_empty() {
        // Every rollout of the group carries the same KL term, so its mean is the term itself.
        let scale = config.beta / group.states.len() as f64;
        for &s in &group.states {
            let lp = policy.log_probs(s);
            let lq = base.log_probs(s);
            let kl = kl_from_log_probs(&lp, &lq);
            let row = &mut grad[s * v..(s + 1) * v];
            for k in 0..v {
                let p = probs[s][k];
                row[k] -= scale * p * (lp[k] - lq[k] - kl);
            }
        }
    }
    Ok(grad)
}

/// Objective value and gradient for a batch of groups.
pub fn objective_and_gradient(
    groups: &[RolloutGroup],
    policy: &ToyPolicy,
    base: &ToyPolicy,
    config: &GrpoConfig,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    policy.check_compatible(base)?;
    let value = surrogate_objective(groups, policy, base, config)?;
    let per_group = exec.try_map(groups, |g| group_gradient(g, policy, base, config))?;
    let mut grad = vec![0.0; policy.logits().len()];
    for g in per_group {
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let scale = 1.0 / groups.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((value, grad))
}

/// One plain gradient-ascent step on the batch objective.
pub fn ascend(
    policy: &ToyPolicy,
    base: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
    learning_rate: f64,
) -> Result<ToyPolicy> {
    ascend_with(policy, base, groups, config, learning_rate, Exec::default())
}

pub fn ascend_with(
    policy: &ToyPolicy,
    base: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
    learning_rate: f64,
    exec: Exec,
) -> Result<ToyPolicy> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::Validation(format!("learning rate must be >= 0, got {learning_rate}")));
    }
    let (_, grad) = objective_and_gradient(groups, policy, base, config, exec)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let mut next = policy.clone();
    if learning_rate == 0.0 {
        return Ok(next);
    }
    for (w, g) in next.logits_mut().iter_mut().zip(&grad) {
        *w += learning_rate * g;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn advantage_examples() {
        let a = advantages(&[1.0, 2.0, 3.0], 1e-8).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (x, e) in a.iter().zip(expected) {
            assert!(close(*x, e, 1e-12), "{a:?}");
        }
        assert_eq!(advantages(&[5.0; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert_eq!(advantages(&[0.0, 2.0], 1e-8).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(advantages(&[1.0], 1e-8), Err(Error::Validation(_))));
    }

    #[test]
    fn clipped_term_examples() {
        assert!(close(clipped_term(1.5, 1.0, 0.2).unwrap(), 1.2, 1e-15));
        assert!(close(clipped_term(0.5, -1.0, 0.2).unwrap(), -0.8, 1e-15));
        for a in [-2.5, 0.0, 0.7] {
            assert_eq!(clipped_term(1.0, a, 0.3).unwrap(), a);
        }
        assert!(clipped_term(0.0, 1.0, 0.2).is_err());
        assert!(clipped_term(-1.0, 1.0, 0.2).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = ToyPolicy::from_probs(1, 2, &[0.5, 0.5]).unwrap();
        let q = ToyPolicy::from_probs(1, 2, &[0.9, 0.1]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!(close(kl_penalty(&p, &q, 0).unwrap(), expected, 1e-12));
        assert!(close(expected, 0.51083, 1e-5));
        assert_eq!(kl_penalty(&p, &p, 0).unwrap(), 0.0);

        let other = ToyPolicy::uniform(1, 3).unwrap();
        assert!(matches!(kl_penalty(&p, &other, 0), Err(Error::Validation(_))));
        assert!(kl_penalty(&p, &q, 1).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = GrpoConfig::default();
        assert_eq!((c.n_rollouts, c.epsilon, c.beta, c.std_floor), (8, 0.2, 0.005, 1e-8));
        assert!(c.validate().is_ok());
        assert!(GrpoConfig { epsilon: 1.0, ..c }.validate().is_err());
        assert!(GrpoConfig { n_rollouts: 1, ..c }.validate().is_err());
        assert!(GrpoConfig { beta: -0.1, ..c }.validate().is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(rewards in prop::collection::vec(-10.0f64..10.0, 2..16)) {
            let a = advantages(&rewards, 1e-8).unwrap();
            if population_std(&rewards) >= 1e-8 {
                prop_assert!(mean(&a).abs() < 1e-9);
                prop_assert!((population_std(&a) - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn clipped_term_never_exceeds_unclipped(ratio in 0.01f64..5.0, adv in -5.0f64..5.0, eps in 0.01f64..0.99) {
            let v = clipped_term(ratio, adv, eps).unwrap();
            prop_assert!(v <= ratio * adv + 1e-15);
            if (1.0 - eps..=1.0 + eps).contains(&ratio) {
                prop_assert_eq!(v, ratio * adv);
            }
        }

        #[test]
        fn kl_is_nonnegative(seed in any::<u64>()) {
            let p = ToyPolicy::random(3, 5, 2.0, seed).unwrap();
            let q = ToyPolicy::random(3, 5, 2.0, seed ^ 0xdead_beef).unwrap();
            for s in 0..3 {
                prop_assert!(kl_penalty(&p, &q, s).unwrap() >= 0.0);
                prop_assert!(kl_penalty(&p, &p, s).unwrap().abs() <= 1e-12);
            }
        }
    }
}
