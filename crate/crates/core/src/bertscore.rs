//! Greedy-match similarity over token embeddings.
//!
//! Each reference token is matched to its most similar candidate token
//! (recall) and each candidate token to its most similar reference token
//! (precision). No idf weighting and no baseline rescaling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par::Exec;

/// Token embeddings for one text, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedText {
    pub doc_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddedText {
    pub fn new(doc_id: impl Into<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if vectors.is_empty() || dim == 0 {
            return Err(Error::Degenerate("embedded text has no vectors".into()));
        }
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Validation(format!(
                    "vector {i} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            data.extend_from_slice(v);
        }
        Ok(EmbeddedText {
            doc_id: doc_id.into(),
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

// Identical vectors are exactly 1; the rounded quotient can land a ulp below.
fn cosine_with_norms(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    if u == v {
        return 1.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Validation(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok(cosine_with_norms(u, v, nu, nv))
}

/// Precision, recall and F1 of a greedy match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn greedy_match_f1(reference: &EmbeddedText, candidate: &EmbeddedText) -> Result<MatchScores> {
    greedy_match_f1_with(reference, candidate, Exec::Sequential)
}

pub fn greedy_match_f1_with(
    reference: &EmbeddedText,
    candidate: &EmbeddedText,
    exec: Exec,
) -> Result<MatchScores> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::Degenerate("greedy match over an empty sequence".into()));
    }
    if reference.dim != candidate.dim {
        return Err(Error::Validation(format!(
            "dimension mismatch: {} vs {}",
            reference.dim, candidate.dim
        )));
    }
    let ref_norms: Vec<f64> = reference.vectors().map(norm).collect();
    let cand_norms: Vec<f64> = candidate.vectors().map(norm).collect();
    if ref_norms.iter().chain(&cand_norms).any(|&n| n == 0.0) {
        return Err(Error::Degenerate("zero embedding vector".into()));
    }

    let (n_ref, n_cand) = (reference.len(), candidate.len());
    let rows: Vec<Vec<f64>> = exec.map_range(n_ref, |i| {
        let u = reference.vector(i);
        (0..n_cand)
            .map(|j| cosine_with_norms(u, candidate.vector(j), ref_norms[i], cand_norms[j]))
            .collect()
    });

    let recall = rows
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / n_ref as f64;
    let precision = (0..n_cand)
        .map(|j| rows.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / n_cand as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MatchScores {
        precision,
        recall,
        f1,
    })
}

/// Turns whitespace tokens into vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_tokens(&self, tokens: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Embeds `text` token by token (whitespace split).
pub fn embed(doc_id: &str, text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddedText> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::Degenerate(format!("nothing to embed in `{doc_id}`")));
    }
    let vectors = provider.embed_tokens(&tokens)?;
    if vectors.len() != tokens.len() {
        return Err(Error::Service(format!(
            "provider returned {} vectors for {} tokens",
            vectors.len(),
            tokens.len()
        )));
    }
    EmbeddedText::new(doc_id, vectors)
}

/// Deterministic offline provider: each distinct token gets a seeded
/// pseudo-random unit vector, so equal tokens share a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// Fold coordinates to their absolute value, keeping cosines in [0, 1].
    pub nonnegative: bool,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: 64,
            seed: 0,
            nonnegative: false,
        }
    }
}

impl HashEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        loop {
            let mut v: Vec<f64> = (0..self.dim)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    if self.nonnegative {
                        x.abs()
                    } else {
                        x
                    }
                })
                .collect();
            let n = norm(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
                return v;
            }
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed_tokens(&self, tokens: &[&str]) -> Result<Vec<Vec<f64>>> {
        if self.dim == 0 {
            return Err(Error::Config("hash embedder dimension must be positive".into()));
        }
        Ok(tokens.iter().map(|t| self.token_vector(t)).collect())
    }
}

/// Greedy-match F1 between two texts under `provider`.
pub fn text_similarity(reference: &str, candidate: &str, provider: &dyn EmbeddingProvider) -> Result<MatchScores> {
    let r = embed("reference", reference, provider)?;
    let c = embed("candidate", candidate, provider)?;
    greedy_match_f1(&r, &c)
}
