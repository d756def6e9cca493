//! Desk-scale GRPO trainer over toy rephrasing tasks.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{advantages, ascend_with, sequence_kl, GrpoConfig, RatioReference, RolloutGroup, ToyPolicy, MAX_SEQ_LEN, MAX_VOCAB};
use crate::bertscore::{greedy_match_f1, EmbeddedText, HashEmbedder};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::reward::{
    bertscore_reward, dataman_reward, length_reward, structure_reward, RewardComponents, RewardConfig,
    StructureVerdict,
};

/// Stable 64-bit seed from a global seed and a path of labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// One toy organic input: a sequence of context states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyInput {
    pub id: String,
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredOutput {
    pub components: RewardComponents,
    pub total: f64,
}

/// Per-component means over a validation set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentMeans {
    pub dataman: f64,
    pub bertscore: f64,
    pub structure: f64,
    pub length: f64,
    pub total: f64,
}

impl ComponentMeans {
    fn add_scored(&mut self, s: &ScoredOutput, w: f64) {
        self.dataman += w * s.components.r_dataman;
        self.bertscore += w * f64::from(s.components.r_bertscore);
        self.structure += w * f64::from(s.components.r_structure);
        self.length += w * f64::from(s.components.r_length);
        self.total += w * s.total;
    }

    fn add(&mut self, o: &ComponentMeans, w: f64) {
        self.dataman += w * o.dataman;
        self.bertscore += w * o.bertscore;
        self.structure += w * o.structure;
        self.length += w * o.length;
        self.total += w * o.total;
    }
}

/// Reward model for toy rollouts.
pub trait RolloutReward: Send + Sync {
    fn score(&self, input: &[usize], output: &[usize]) -> Result<ScoredOutput>;

    /// Exact expected reward under `policy`, when tractable.
    fn expected(&self, _policy: &ToyPolicy, _input: &[usize]) -> Option<ComponentMeans> {
        None
    }

    /// Lowest and highest attainable total reward.
    fn attainable_range(&self) -> (f64, f64);

    fn vocab(&self) -> usize;

    fn num_states(&self) -> usize {
        self.vocab()
    }

    fn sample_input<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<usize>
    where
        Self: Sized,
    {
        (0..len).map(|_| rng.random_range(0..self.num_states())).collect()
    }
}

/// Reward = fraction of positions emitting the target token of their state.
/// The score is reported in the quality slot; the indicator slots stay zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetTokenTask {
    targets: Vec<usize>,
}

impl TargetTokenTask {
    /// Target for state `s` is `(s + 1) mod vocab`.
    pub fn new(vocab: usize) -> Self {
        TargetTokenTask {
            targets: (0..vocab).map(|s| (s + 1) % vocab).collect(),
        }
    }

    pub fn target(&self, state: usize) -> usize {
        self.targets[state]
    }
}

impl RolloutReward for TargetTokenTask {
    fn score(&self, input: &[usize], output: &[usize]) -> Result<ScoredOutput> {
        if input.is_empty() || input.len() != output.len() {
            return Err(Error::Validation("target task needs equal, nonempty lengths".into()));
        }
        let hits = input
            .iter()
            .zip(output)
            .filter(|(&s, &y)| self.targets[s] == y)
            .count();
        let frac = hits as f64 / input.len() as f64;
        Ok(ScoredOutput {
            components: RewardComponents {
                r_dataman: frac,
                ..Default::default()
            },
            total: frac,
        })
    }

    fn expected(&self, policy: &ToyPolicy, input: &[usize]) -> Option<ComponentMeans> {
        if input.is_empty() {
            return None;
        }
        let frac = input.iter().map(|&s| policy.probs(s)[self.targets[s]]).sum::<f64>() / input.len() as f64;
        Some(ComponentMeans {
            dataman: frac,
            total: frac,
            ..Default::default()
        })
    }

    fn attainable_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn vocab(&self) -> usize {
        self.targets.len()
    }
}

/// A miniature rephrasing problem scored with the composite reward.
///
/// Token 0 is a line break, tokens `1..=k` are plain words, `k+1..=2k` are
/// their refined synonyms and `2k+1` is a verbose filler worth three length
/// units. Quality rises with the share of refined words; similarity is the
/// greedy-match F1 over embeddings in which synonyms share most of their
/// direction; structure requires line breaks to stay in place.
#[derive(Debug, Clone)]
pub struct RephraseTask {
    k: usize,
    embeddings: Vec<Vec<f64>>,
    reward: RewardConfig,
}

impl RephraseTask {
    const SHARED_WEIGHT: f64 = 0.8;
    const NEWLINE: usize = 0;

    pub fn new(vocab: usize, reward: RewardConfig) -> Result<Self> {
        if vocab < 4 || !vocab.is_multiple_of(2) || vocab > MAX_VOCAB {
            return Err(Error::Config(format!(
                "rephrase task needs an even vocabulary in [4, {MAX_VOCAB}], got {vocab}"
            )));
        }
        let k = (vocab - 2) / 2;
        let h = HashEmbedder {
            dim: 32,
            seed: 17,
            nonnegative: false,
        };
        let embeddings = (0..vocab)
            .map(|t| {
                let class = if t == Self::NEWLINE {
                    "newline".to_string()
                } else if t <= 2 * k {
                    format!("class-{}", (t - 1) % k)
                } else {
                    "filler".to_string()
                };
                let shared = h.token_vector(&class);
                let own = h.token_vector(&format!("token-{t}"));
                let (a, b) = (Self::SHARED_WEIGHT.sqrt(), (1.0 - Self::SHARED_WEIGHT).sqrt());
                let mut v: Vec<f64> = shared.iter().zip(&own).map(|(x, y)| a * x + b * y).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect();
        Ok(RephraseTask { k, embeddings, reward })
    }

    fn is_refined(&self, t: usize) -> bool {
        t > self.k && t <= 2 * self.k
    }

    fn filler(&self) -> usize {
        2 * self.k + 1
    }

    /// Integer quality score in [1, 5].
    pub fn quality(&self, seq: &[usize]) -> u8 {
        let words = seq.iter().filter(|&&t| t != Self::NEWLINE).count();
        if words == 0 {
            return 1;
        }
        let refined = seq.iter().filter(|&&t| self.is_refined(t)).count();
        (1 + 4 * refined / words).min(5) as u8
    }

    pub fn length(&self, seq: &[usize]) -> u64 {
        seq.iter().map(|&t| if t == self.filler() { 3 } else { 1 }).sum()
    }

    fn embed(&self, seq: &[usize]) -> Result<EmbeddedText> {
        EmbeddedText::new("toy", seq.iter().map(|&t| self.embeddings[t].clone()).collect())
    }
}

impl RolloutReward for RephraseTask {
    fn score(&self, input: &[usize], output: &[usize]) -> Result<ScoredOutput> {
        let r_dataman = dataman_reward(self.quality(input), self.quality(output))?;
        let f1 = greedy_match_f1(&self.embed(input)?, &self.embed(output)?)?.f1;
        let same_breaks = input
            .iter()
            .zip(output)
            .all(|(&a, &b)| (a == Self::NEWLINE) == (b == Self::NEWLINE));
        let verdict = if same_breaks {
            StructureVerdict::Preserved
        } else {
            StructureVerdict::NotPreserved
        };
        let components = RewardComponents {
            r_dataman,
            r_bertscore: bertscore_reward(f1, self.reward.tau_bertscore)?,
            r_structure: structure_reward(verdict),
            r_length: length_reward(self.length(input), self.length(output), self.reward.tau_length)?,
        };
        Ok(ScoredOutput {
            total: components.total(&self.reward),
            components,
        })
    }

    fn attainable_range(&self) -> (f64, f64) {
        let c = &self.reward;
        (0.0, 4.0 * c.lambda_dataman + c.lambda_bertscore + c.lambda_structure + c.lambda_length)
    }

    fn vocab(&self) -> usize {
        2 * self.k + 2
    }

    fn sample_input<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        (0..len)
            .map(|_| {
                if rng.random_bool(0.2) {
                    Self::NEWLINE
                } else {
                    rng.random_range(1..=self.k)
                }
            })
            .collect()
    }
}

/// Samples `n` rollouts for one input and scores them.
pub fn sample_group(
    policy: &ToyPolicy,
    base: &ToyPolicy,
    input: &ToyInput,
    n: usize,
    reward: &dyn RolloutReward,
    std_floor: f64,
    seed: u64,
) -> Result<RolloutGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = Vec::with_capacity(n);
    let mut log_probs_current = Vec::with_capacity(n);
    let mut log_probs_base = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let out = policy.sample(&input.states, &mut rng);
        log_probs_current.push(policy.sequence_log_prob(&input.states, &out)?);
        log_probs_base.push(base.sequence_log_prob(&input.states, &out)?);
        rewards.push(reward.score(&input.states, &out)?.total);
        outputs.push(out);
    }
    let advantages = advantages(&rewards, std_floor)?;
    Ok(RolloutGroup {
        input_id: input.id.clone(),
        states: input.states.clone(),
        outputs,
        log_probs_current,
        log_probs_base,
        rewards,
        advantages,
    })
}

/// Validation summary: reward component means plus mean KL to the base.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub dataman: f64,
    pub bertscore: f64,
    pub structure: f64,
    pub length: f64,
    pub total: f64,
    pub kl_to_base: f64,
}

/// Mean reward components over `inputs`. Uses the exact expectation when the
/// reward offers one; otherwise `samples` rollouts per input, seeded from
/// `(seed, input id)` so every evaluation sees the same random numbers.
pub fn validation_rewards(
    policy: &ToyPolicy,
    base: &ToyPolicy,
    inputs: &[ToyInput],
    reward: &dyn RolloutReward,
    samples: usize,
    seed: u64,
) -> Result<(ComponentMeans, f64)> {
    if inputs.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    let w = 1.0 / inputs.len() as f64;
    let mut means = ComponentMeans::default();
    let mut kl = 0.0;
    for input in inputs {
        kl += w * sequence_kl(policy, base, &input.states)?;
        if let Some(exact) = reward.expected(policy, &input.states) {
            means.add(&exact, w);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["validation", &input.id]));
        let ws = w / samples.max(1) as f64;
        for _ in 0..samples.max(1) {
            let out = policy.sample(&input.states, &mut rng);
            means.add_scored(&reward.score(&input.states, &out)?, ws);
        }
    }
    Ok((means, kl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    #[default]
    TargetToken,
    Rephrase,
}

/// Everything needed to run the toy trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub n_rollouts: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub std_floor: f64,
    pub ratio_reference: RatioReference,
    pub seed: u64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Groups per update.
    pub batch_size: usize,
    pub eval_every: usize,
    pub train_size: usize,
    pub validation_size: usize,
    /// Rollouts per validation input when no exact expectation exists.
    pub validation_samples: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub task: TaskKind,
}

impl Default for LabConfig {
    fn default() -> Self {
        let g = GrpoConfig::default();
        LabConfig {
            n_rollouts: g.n_rollouts,
            epsilon: g.epsilon,
            beta: g.beta,
            std_floor: g.std_floor,
            ratio_reference: g.ratio_reference,
            seed: 0,
            learning_rate: 0.5,
            steps: 200,
            batch_size: 8,
            eval_every: 10,
            train_size: 512,
            validation_size: 128,
            validation_samples: 8,
            vocab: 8,
            seq_len: 4,
            task: TaskKind::TargetToken,
        }
    }
}

impl LabConfig {
    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            n_rollouts: self.n_rollouts,
            epsilon: self.epsilon,
            beta: self.beta,
            std_floor: self.std_floor,
            ratio_reference: self.ratio_reference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grpo().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("grpo.learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.seq_len == 0 || self.seq_len > MAX_SEQ_LEN {
            return Err(Error::Config(format!("grpo.seq_len must be in [1, {MAX_SEQ_LEN}]")));
        }
        if self.vocab < 2 || self.vocab > MAX_VOCAB {
            return Err(Error::Config(format!("grpo.vocab must be in [2, {MAX_VOCAB}]")));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("train_size", self.train_size),
            ("validation_size", self.validation_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("grpo.{name} must be positive")));
            }
        }
        if self.batch_size > self.train_size {
            return Err(Error::Config("grpo.batch_size exceeds grpo.train_size".into()));
        }
        Ok(())
    }
}

/// Per-update bookkeeping, kept for reproducibility checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub rollout_ids: Vec<String>,
    pub rewards: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabRun {
    pub curve: Vec<CurvePoint>,
    pub steps: Vec<StepRecord>,
    pub policy: ToyPolicy,
    pub attainable_range: (f64, f64),
}

fn make_inputs<T: RolloutReward>(task: &T, prefix: &str, count: usize, len: usize, seed: u64) -> Vec<ToyInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["inputs", prefix]));
    (0..count)
        .map(|i| ToyInput {
            id: format!("{prefix}-{i:05}"),
            states: task.sample_input(len, &mut rng),
        })
        .collect()
}

pub fn run_lab(config: &LabConfig, reward_config: &RewardConfig, exec: Exec) -> Result<LabRun> {
    config.validate()?;
    match config.task {
        TaskKind::TargetToken => run_with(config, &TargetTokenTask::new(config.vocab), exec),
        TaskKind::Rephrase => run_with(config, &RephraseTask::new(config.vocab, *reward_config)?, exec),
    }
}

fn run_with<T: RolloutReward>(config: &LabConfig, task: &T, exec: Exec) -> Result<LabRun> {
    let grpo = config.grpo();
    let base = ToyPolicy::uniform(task.num_states(), task.vocab())?;
    let mut policy = base.clone();
    let train = make_inputs(task, "train", config.train_size, config.seq_len, config.seed);
    let val = make_inputs(task, "val", config.validation_size, config.seq_len, config.seed);

    let mut curve = Vec::new();
    let mut steps = Vec::with_capacity(config.steps);
    for step in 0..=config.steps {
        if step % config.eval_every == 0 || step == config.steps {
            let (m, kl) = validation_rewards(&policy, &base, &val, task, config.validation_samples, config.seed)?;
            curve.push(CurvePoint {
                step,
                dataman: m.dataman,
                bertscore: m.bertscore,
                structure: m.structure,
                length: m.length,
                total: m.total,
                kl_to_base: kl,
            });
        }
        if step == config.steps {
            break;
        }
        let step_label = step.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["batch", &step_label]));
        let batch: Vec<&ToyInput> = sample_indices(&mut rng, train.len(), config.batch_size)
            .into_iter()
            .map(|i| &train[i])
            .collect();
        let groups = exec.try_map(&batch, |input| {
            let seed = derive_seed(config.seed, &["rollout", &step_label, &input.id]);
            sample_group(&policy, &base, input, grpo.n_rollouts, task, grpo.std_floor, seed)
        })?;
        let objective = super::surrogate_objective(&groups, &policy, &base, &grpo)?;
        steps.push(StepRecord {
            step,
            rollout_ids: groups.iter().flat_map(RolloutGroup::rollout_ids).collect(),
            rewards: groups.iter().flat_map(|g| g.rewards.iter().copied()).collect(),
            objective,
        });
        policy = ascend_with(&policy, &base, &groups, &grpo, config.learning_rate, exec)?;
    }
    Ok(LabRun {
        curve,
        steps,
        policy,
        attainable_range: task.attainable_range(),
    })
}
