//! Synthetic sense-annotated corpus.
//!
//! Every (word, sense) pair is a Gaussian blob in embedding space. A word has
//! a random center; its sense means sit at distance `cluster_separation` from
//! that center along random directions inside a low-dimensional subspace
//! shared by the whole corpus. Target tokens are their sense mean plus
//! isotropic noise, other tokens are pure noise. Values are rounded to `f32`
//! so a corpus survives the binary container bit-exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::corpus::{AnnotatedSentence, Corpus, Target};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_words: usize,
    /// Sense counts to draw from uniformly, one draw per word.
    pub sense_counts: Vec<usize>,
    pub sentences_per_sense: usize,
    pub embedding_dim: usize,
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    /// Dimension of the subspace holding sense offsets; defaults to a quarter
    /// of the embedding dimension.
    pub informative_dim: Option<usize>,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_words: 60,
            sense_counts: vec![4],
            sentences_per_sense: 10,
            embedding_dim: 16,
            cluster_separation: 3.0,
            noise_sigma: 1.0,
            informative_dim: None,
            min_tokens: 4,
            max_tokens: 12,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<usize> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic corpus: {m}")));
        if self.n_words == 0 || self.sentences_per_sense == 0 || self.embedding_dim == 0 {
            return bad("counts must be positive");
        }
        if self.sense_counts.is_empty() || self.sense_counts.contains(&0) {
            return bad("sense counts must be positive");
        }
        if self.cluster_separation <= 0.0 || !self.cluster_separation.is_finite() {
            return bad("cluster_separation must be positive");
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be non-negative");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        let k = self
            .informative_dim
            .unwrap_or((self.embedding_dim / 4).max(1));
        if k == 0 || k > self.embedding_dim {
            return bad("informative_dim must be in 1..=embedding_dim");
        }
        Ok(k)
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `k` orthonormal vectors of length `dim` by Gram-Schmidt.
fn random_basis(dim: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<Corpus> {
    let k = cfg.validate()?;
    let dim = cfg.embedding_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis = random_basis(dim, k, &mut rng);
    let round = |x: f64| x as f32 as f64;

    let mut sentences = Vec::new();
    for w in 0..cfg.n_words {
        let word = format!("w{w:04}");
        let n_senses = cfg.sense_counts[rng.random_range(0..cfg.sense_counts.len())];
        let center: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
        for s in 0..n_senses {
            let sense = format!("{word}.s{s}");
            let coef: Vec<f64> = (0..k).map(|_| gaussian(&mut rng)).collect();
            let norm = coef.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
            let mut mean = center.clone();
            for (c, b) in coef.iter().zip(&basis) {
                for (m, bi) in mean.iter_mut().zip(b) {
                    *m += cfg.cluster_separation * c / norm * bi;
                }
            }
            for j in 0..cfg.sentences_per_sense {
                let n_tokens = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
                let target = rng.random_range(0..n_tokens);
                let mut data = Vec::with_capacity(n_tokens * dim);
                for t in 0..n_tokens {
                    for m in &mean {
                        let noise = cfg.noise_sigma * gaussian(&mut rng);
                        data.push(round(if t == target { m + noise } else { noise }));
                    }
                }
                sentences.push(AnnotatedSentence {
                    sentence_id: format!("{word}-s{s}-{j:03}"),
                    n_tokens,
                    targets: vec![Target {
                        index: target,
                        word: word.clone(),
                        sense: sense.clone(),
                    }],
                    embeddings: Matrix::new(n_tokens, dim, data)?,
                });
            }
        }
    }
    Corpus::new(sentences, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_words: 5,
            sense_counts: vec![2, 3],
            sentences_per_sense: 4,
            embedding_dim: 8,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_noise_collapses_each_sense() {
        let corpus = generate_synthetic_corpus(&SyntheticConfig {
            noise_sigma: 0.0,
            ..small(1)
        })
        .unwrap();
        for entry in corpus.words().values() {
            for insts in entry.instances.values() {
                let first = corpus.token_embedding(insts[0]);
                assert!(insts.iter().all(|&i| corpus.token_embedding(i) == first));
            }
        }
    }

    #[test]
    fn seeded_generation_is_bit_identical() {
        let a = generate_synthetic_corpus(&small(7)).unwrap();
        let b = generate_synthetic_corpus(&small(7)).unwrap();
        assert_eq!(a.sentences(), b.sentences());
        let c = generate_synthetic_corpus(&small(8)).unwrap();
        assert_ne!(a.sentences(), c.sentences());
    }

    #[test]
    fn shape_and_inventory() {
        let corpus = generate_synthetic_corpus(&small(3)).unwrap();
        assert_eq!(corpus.words().len(), 5);
        for entry in corpus.words().values() {
            assert!(matches!(entry.n_senses(), 2 | 3));
            assert!(entry.instances.values().all(|v| v.len() == 4));
        }
        assert!(corpus.sentences().iter().all(|s| s
            .embeddings
            .data()
            .iter()
            .all(|&x| x == x as f32 as f64)));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_synthetic_corpus(&SyntheticConfig {
            cluster_separation: 0.0,
            ..small(0)
        })
        .is_err());
        assert!(generate_synthetic_corpus(&SyntheticConfig {
            n_words: 0,
            ..small(0)
        })
        .is_err());
    }
}
