use std::collections::BTreeMap;

use crate::data::Episode;
use crate::error::{Error, Result};
use crate::meta::TaskData;

/// Labels every query item with the most frequent support sense; ties go to
/// the lexicographically smallest sense id.
pub fn majority_sense_predict(episode: &Episode) -> Result<Vec<usize>> {
    if episode.support.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "episode {} has an empty support set",
            episode.id
        )));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for item in &episode.support {
        counts
            .entry(&episode.senses[item.label])
            .or_insert((0, item.label))
            .0 += 1;
    }
    // Senses iterate in sorted order; the first strict maximum wins ties.
    let mut best: Option<(usize, usize)> = None;
    for &(count, label) in counts.values() {
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, label));
        }
    }
    let label = best.expect("nonempty support").1;
    Ok(vec![label; episode.query.len()])
}

fn unit(row: &[f64]) -> Result<Vec<f64>> {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine distance undefined for a zero embedding".into(),
        ));
    }
    Ok(row.iter().map(|x| x / norm).collect())
}

/// Labels each query item with the sense of its nearest support item by
/// cosine distance on the raw embeddings; ties go to the earliest support
/// item.
pub fn nearest_neighbor_predict(task: &TaskData) -> Result<Vec<usize>> {
    let support: Vec<Vec<f64>> = (0..task.support_x.rows())
        .map(|i| unit(task.support_x.row(i)))
        .collect::<Result<_>>()?;
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    (0..task.query_x.rows())
        .map(|q| {
            let query = unit(task.query_x.row(q))?;
            let mut best = (f64::INFINITY, 0);
            for (i, s) in support.iter().enumerate() {
                let cos: f64 = s.iter().zip(&query).map(|(a, b)| a * b).sum();
                let dist = 1.0 - cos;
                if dist < best.0 {
                    best = (dist, i);
                }
            }
            Ok(task.support_y[best.1])
        })
        .collect()
}
