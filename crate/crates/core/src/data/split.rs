use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint word sets for meta-training, meta-validation and meta-testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.60, 0.15, 0.25];

/// Randomly partitions `words` with the given train/val/test proportions.
///
/// Train and validation sizes are rounded to the nearest word and the test
/// set takes the remainder. Each output set is sorted.
pub fn split_words(words: &[String], ratios: [f64; 3], seed: u64) -> Result<WordSplit> {
    if words.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty corpus".into(),
        ));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let mut pool: Vec<String> = words.to_vec();
    pool.sort();
    pool.dedup();
    let n = pool.len();
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut test = pool.split_off(n_train + n_val);
    let mut val = pool.split_off(n_train);
    let mut train = pool;
    train.sort();
    val.sort();
    test.sort();
    Ok(WordSplit { train, val, test })
}
