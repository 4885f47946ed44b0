//! Classification metrics.

use crate::error::{Error, Result};

/// `(micro, macro)` F1 of single-label predictions over `classes` classes.
///
/// Micro F1 pools true positives over all classes and equals accuracy here.
/// Macro F1 is the unweighted mean of per-class F1, where a class with no
/// true positives (including one absent from both vectors) scores 0.
pub fn f1_scores(pred: &[usize], truth: &[usize], classes: usize) -> Result<(f64, f64)> {
    if pred.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(&c) = pred.iter().chain(truth).find(|&&c| c >= classes) {
        return Err(Error::Metric(format!(
            "class {c} out of range for {classes} classes"
        )));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fne = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let micro = tp.iter().sum::<usize>() as f64 / pred.len() as f64;
    let per_class = (0..classes).map(|c| {
        let denom = 2 * tp[c] + fp[c] + fne[c];
        if tp[c] == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    });
    let macro_f1 = per_class.sum::<f64>() / classes as f64;
    Ok((micro, macro_f1))
}
