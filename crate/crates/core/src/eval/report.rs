use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Score of one word's evaluation episode under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    /// Number of senses in the episode's query set.
    pub n_senses: usize,
    pub macro_f1: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMean {
    pub seed: u64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseGroup {
    pub n_senses: usize,
    pub n_words: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Aggregated evaluation of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Mean over seeds of the per-seed average word score.
    pub mean: f64,
    /// Population standard deviation of the per-seed means; 0 for one seed.
    pub std: f64,
    pub seed_means: Vec<SeedMean>,
    /// Word scores averaged over seeds, grouped by query sense count.
    pub by_sense_count: Vec<SenseGroup>,
    /// Seed-averaged word scores in five bins of width 0.2; the last bin is
    /// closed.
    pub histogram: Vec<HistogramBin>,
    pub scores: Vec<WordScore>,
}

pub const HISTOGRAM_BINS: usize = 5;

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Builds a report from word scores. Input order does not matter.
pub fn aggregate(method: &str, scores: &[WordScore]) -> EvalReport {
    let mut scores = scores.to_vec();
    scores.sort_by(|a, b| (a.seed, &a.word).cmp(&(b.seed, &b.word)));

    let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut per_word: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
    for s in &scores {
        per_seed.entry(s.seed).or_default().push(s.macro_f1);
        per_word
            .entry(&s.word)
            .or_insert_with(|| (s.n_senses, Vec::new()))
            .1
            .push(s.macro_f1);
    }
    let seed_means: Vec<SeedMean> = per_seed
        .iter()
        .map(|(&seed, v)| SeedMean {
            seed,
            mean: mean(v.iter().copied()),
        })
        .collect();
    let overall = mean(seed_means.iter().map(|s| s.mean));
    let std = mean(seed_means.iter().map(|s| (s.mean - overall).powi(2))).sqrt();

    let word_means: Vec<(usize, f64)> = per_word
        .values()
        .map(|(n, v)| (*n, mean(v.iter().copied())))
        .collect();
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(n, m) in &word_means {
        groups.entry(n).or_default().push(m);
    }
    let by_sense_count = groups
        .into_iter()
        .map(|(n_senses, v)| SenseGroup {
            n_senses,
            n_words: v.len(),
            mean: mean(v),
        })
        .collect();

    let width = 1.0 / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &(_, m) in &word_means {
        let bin = ((m * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin].count += 1;
    }

    EvalReport {
        method: method.to_string(),
        mean: overall,
        std,
        seed_means,
        by_sense_count,
        histogram,
        scores,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per word score: `word,n_senses,macro_f1,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,n_senses,macro_f1,seed\n");
        for s in &self.scores {
            let _ = writeln!(out, "{},{},{},{}", s.word, s.n_senses, s.macro_f1, s.seed);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: macro F1 {:.4} +/- {:.4} over {} seed(s)",
            self.method,
            self.mean,
            self.std,
            self.seed_means.len()
        )
    }
}
