use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over `classes`.
///
/// Precision, recall and F1 with an empty denominator count as 0, so a class
/// listed in `classes` that never occurs in `gold` or `pred` scores 0.
/// Predictions outside `classes` only count as misses.
pub fn macro_f1(gold: &[usize], pred: &[usize], classes: &[usize]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::InvalidArgument("macro F1 over no classes".into()));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut total = 0.0;
    for &c in classes {
        let mut tp = 0;
        let mut n_pred = 0;
        let mut n_gold = 0;
        for (&g, &p) in gold.iter().zip(pred) {
            tp += usize::from(g == c && p == c);
            n_pred += usize::from(p == c);
            n_gold += usize::from(g == c);
        }
        let precision = ratio(tp, n_pred);
        let recall = ratio(tp, n_gold);
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / classes.len() as f64)
}
