#![allow(dead_code)]

pub mod fd;

use metawsd::data::{
    build_episode_set, generate_synthetic_corpus, BuildConfig, Corpus, EpisodeSet, SyntheticConfig,
};
use metawsd::meta::TaskData;

pub fn blobs(separation: f64, sigma: f64, seed: u64) -> Corpus {
    generate_synthetic_corpus(&SyntheticConfig {
        cluster_separation: separation,
        noise_sigma: sigma,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn episodes(corpus: &Corpus, n_train: usize, seed: u64) -> EpisodeSet {
    let cfg = BuildConfig {
        n_train_episodes: n_train,
        seed,
        ..BuildConfig::new(8)
    };
    build_episode_set(corpus, &cfg).unwrap().1
}

pub fn tasks(corpus: &Corpus, eps: &[metawsd::data::Episode]) -> Vec<TaskData> {
    eps.iter()
        .map(|e| TaskData::from_episode(corpus, e))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

use std::collections::{BTreeMap, BTreeSet};

use metawsd::data::Episode;

/// Meta-training episode contract; returns the first violation.
pub fn check_train_episode(ep: &Episode, s: usize) -> Result<(), String> {
    if ep.support.len() != s || ep.query.len() != s {
        return Err(format!(
            "episode {}: support {} / query {} != {s}",
            ep.id,
            ep.support.len(),
            ep.query.len()
        ));
    }
    let distinct: BTreeSet<&String> = ep.senses.iter().collect();
    if distinct.len() != ep.senses.len() {
        return Err(format!("episode {}: a sense holds two labels", ep.id));
    }
    for (name, items) in [("support", &ep.support), ("query", &ep.query)] {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for it in items.iter() {
            *counts.entry(it.label).or_default() += 1;
        }
        if counts.keys().copied().collect::<Vec<_>>() != (0..ep.n_classes()).collect::<Vec<_>>() {
            return Err(format!(
                "episode {}: {name} labels do not cover 0..{}",
                ep.id,
                ep.n_classes()
            ));
        }
        let (lo, hi) = (
            counts.values().min().unwrap(),
            counts.values().max().unwrap(),
        );
        if hi - lo > 1 {
            return Err(format!("episode {}: {name} class sizes {lo}..{hi}", ep.id));
        }
    }
    Ok(())
}

/// Evaluation episode contract: query senses are a subset of support senses
/// and span at least two senses.
pub fn check_eval_episode(ep: &Episode) -> Result<(), String> {
    let support: BTreeSet<usize> = ep.support.iter().map(|i| i.label).collect();
    let query: BTreeSet<usize> = ep.query.iter().map(|i| i.label).collect();
    if !query.is_subset(&support) {
        return Err(format!("episode {}: query sense outside support", ep.id));
    }
    if query.len() < 2 {
        return Err(format!(
            "episode {}: query spans {} sense(s)",
            ep.id,
            query.len()
        ));
    }
    if support.len() != ep.n_classes() {
        return Err(format!("episode {}: unused label", ep.id));
    }
    Ok(())
}

/// Macro F1 from an explicit confusion matrix.
pub fn macro_f1_oracle(gold: &[usize], pred: &[usize], classes: &[usize]) -> f64 {
    let n = classes
        .iter()
        .chain(gold)
        .chain(pred)
        .max()
        .map_or(0, |m| m + 1);
    let mut confusion = vec![vec![0usize; n]; n];
    for (&g, &p) in gold.iter().zip(pred) {
        confusion[g][p] += 1;
    }
    let mut total = 0.0;
    for &c in classes {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..n).map(|g| confusion[g][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp / predicted as f64
        };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        total += if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    total / classes.len() as f64
}
