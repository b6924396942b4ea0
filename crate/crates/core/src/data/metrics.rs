use crate::error::{Error, Result};

fn check(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    Ok(())
}

/// `m[true][pred]` counts over `classes` classes.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

/// Per-class F1 averaged with weights proportional to class support.
pub fn weighted_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let classes = preds.iter().chain(labels).max().unwrap() + 1;
    let m = confusion_matrix(preds, labels, classes);
    let total = labels.len() as f64;
    let mut score = 0.0;
    for c in 0..classes {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = m[c][c] as f64;
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        let denom = support as f64 + predicted as f64;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        score += f1 * support as f64 / total;
    }
    Ok(score)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
