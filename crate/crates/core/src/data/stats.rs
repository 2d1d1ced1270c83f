use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::episode::{Episode, Split};

/// Per-split dataset statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub n_words: usize,
    pub n_episodes: usize,
    pub n_unique_sentences: usize,
    pub average_senses: f64,
    /// Episodes keyed by the number of senses in their support set.
    pub support_sense_histogram: BTreeMap<usize, usize>,
    /// Episodes keyed by the number of senses in their query set.
    pub query_sense_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub support_size: usize,
    pub splits: Vec<SplitStats>,
}

/// Aggregates episodes split by split. Average senses is the mean class count
/// per episode.
pub fn dataset_stats(support_size: usize, episodes: &[Episode]) -> DatasetStats {
    let mut by_split: BTreeMap<Split, Vec<&Episode>> = BTreeMap::new();
    for ep in episodes {
        by_split.entry(ep.split).or_default().push(ep);
    }
    let splits = by_split
        .into_iter()
        .map(|(split, eps)| {
            let words: BTreeSet<&String> = eps.iter().flat_map(|e| &e.words).collect();
            let sentences: BTreeSet<usize> = eps.iter().flat_map(|e| e.sentences()).collect();
            let mut support_sense_histogram = BTreeMap::new();
            let mut query_sense_histogram = BTreeMap::new();
            for e in &eps {
                *support_sense_histogram
                    .entry(e.support_sense_count())
                    .or_insert(0) += 1;
                *query_sense_histogram
                    .entry(e.query_sense_count())
                    .or_insert(0) += 1;
            }
            let total_senses: usize = eps.iter().map(|e| e.n_classes()).sum();
            SplitStats {
                split,
                n_words: words.len(),
                n_episodes: eps.len(),
                n_unique_sentences: sentences.len(),
                average_senses: if eps.is_empty() {
                    0.0
                } else {
                    total_senses as f64 / eps.len() as f64
                },
                support_sense_histogram,
                query_sense_histogram,
            }
        })
        .collect();
    DatasetStats {
        support_size,
        splits,
    }
}

impl DatasetStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8}  {:<11} {:>8} {:>10} {:>18} {:>14}",
            "|S|", "split", "words", "episodes", "unique sentences", "avg. senses"
        );
        for s in &self.splits {
            let _ = writeln!(
                out,
                "{:>8}  {:<11} {:>8} {:>10} {:>18} {:>14.2}",
                self.support_size,
                s.split.as_str(),
                s.n_words,
                s.n_episodes,
                s.n_unique_sentences,
                s.average_senses
            );
        }
        for s in &self.splits {
            let fmt = |h: &BTreeMap<usize, usize>| {
                h.iter()
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let _ = writeln!(
                out,
                "{} episodes by support senses: {}",
                s.split.as_str(),
                fmt(&s.support_sense_histogram)
            );
            let _ = writeln!(
                out,
                "{} episodes by query senses: {}",
                s.split.as_str(),
                fmt(&s.query_sense_histogram)
            );
        }
        out
    }
}
