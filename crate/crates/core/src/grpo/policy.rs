use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_VOCAB: usize = 64;
pub const MAX_SEQ_LEN: usize = 16;

/// Tabular softmax policy: one row of logits per context state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    num_states: usize,
    vocab: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn from_logits(num_states: usize, vocab: usize, logits: Vec<f64>) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::Validation("policy needs at least one state".into()));
        }
        if !(2..=MAX_VOCAB).contains(&vocab) {
            return Err(Error::Validation(format!("vocabulary size must be in [2, {MAX_VOCAB}], got {vocab}")));
        }
        if logits.len() != num_states * vocab {
            return Err(Error::Validation(format!(
                "expected {} logits, got {}",
                num_states * vocab,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        Ok(ToyPolicy {
            num_states,
            vocab,
            logits,
        })
    }

    pub fn uniform(num_states: usize, vocab: usize) -> Result<Self> {
        Self::from_logits(num_states, vocab, vec![0.0; num_states * vocab])
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(num_states: usize, vocab: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..num_states * vocab)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self::from_logits(num_states, vocab, logits)
    }

    /// Builds a policy whose per-state distributions are the given rows.
    pub fn from_probs(num_states: usize, vocab: usize, probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Validation("probabilities must be strictly positive".into()));
        }
        Self::from_logits(num_states, vocab, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn row(&self, state: usize) -> &[f64] {
        &self.logits[state * self.vocab..(state + 1) * self.vocab]
    }

    pub fn log_probs(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row.iter().map(|z| z - lse).collect()
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    /// Log-probability of emitting `outputs[t]` in state `states[t]` for every `t`.
    pub fn sequence_log_prob(&self, states: &[usize], outputs: &[usize]) -> Result<f64> {
        if states.len() != outputs.len() {
            return Err(Error::Validation(format!(
                "sequence length mismatch: {} states, {} outputs",
                states.len(),
                outputs.len()
            )));
        }
        let mut total = 0.0;
        for (&s, &y) in states.iter().zip(outputs) {
            if s >= self.num_states || y >= self.vocab {
                return Err(Error::Validation(format!("(state {s}, token {y}) out of range")));
            }
            total += self.log_probs(s)[y];
        }
        Ok(total)
    }

    /// Samples one output per state by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, states: &[usize], rng: &mut R) -> Vec<usize> {
        states
            .iter()
            .map(|&s| {
                let probs = self.probs(s);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k;
                    }
                }
                self.vocab - 1
            })
            .collect()
    }

    pub fn check_compatible(&self, other: &ToyPolicy) -> Result<()> {
        if self.num_states != other.num_states || self.vocab != other.vocab {
            return Err(Error::Validation(format!(
                "policy spaces differ: {}x{} vs {}x{}",
                self.num_states, self.vocab, other.num_states, other.vocab
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        let p = ToyPolicy::random(4, 7, 30.0, 3).unwrap();
        for s in 0..4 {
            let sum: f64 = p.probs(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let lsum: f64 = p.log_probs(s).iter().map(|l| l.exp()).sum();
            assert!((lsum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ToyPolicy::uniform(1, 65).is_err());
        assert!(ToyPolicy::uniform(0, 4).is_err());
        assert!(ToyPolicy::from_logits(2, 3, vec![0.0; 5]).is_err());
        assert!(ToyPolicy::from_logits(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let p = ToyPolicy::random(3, 5, 1.0, 9).unwrap();
        let states = [0, 1, 2, 1, 0];
        let a = p.sample(&states, &mut ChaCha8Rng::seed_from_u64(1));
        let b = p.sample(&states, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t < 5));
        assert!(p.sequence_log_prob(&states, &a).unwrap() < 0.0);
        assert!(p.sequence_log_prob(&states, &a[..2]).is_err());
    }
}
