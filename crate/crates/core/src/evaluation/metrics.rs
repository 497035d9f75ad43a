//! Macro-F1 and confusion matrices.

use crate::error::{Error, Result};

fn check(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::precondition(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::precondition("need at least one class"));
    }
    if let Some(&l) = preds.iter().chain(truths).find(|&&l| l >= n_classes) {
        return Err(Error::precondition(format!("label {l} out of range for {n_classes} classes")));
    }
    Ok(())
}

/// `counts[true][pred]`.
pub fn confusion(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check(preds, truths, n_classes)?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// `2PR / (P + R)` per class, 0 when `P + R = 0`.
pub fn per_class_f1(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let m = confusion(preds, truths, n_classes)?;
    Ok((0..n_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            let actual: usize = m[c].iter().sum();
            let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        })
        .collect())
}

/// Unweighted mean of the per-class F1 over all `n_classes`.
pub fn macro_f1(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<f64> {
    let f = per_class_f1(preds, truths, n_classes)?;
    Ok(f.iter().sum::<f64>() / n_classes as f64)
}

/// Macro-F1 over the classes that occur in `truths` only.
pub fn macro_f1_present(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<f64> {
    let f = per_class_f1(preds, truths, n_classes)?;
    let present: Vec<usize> = (0..n_classes).filter(|c| truths.contains(c)).collect();
    if present.is_empty() {
        return Err(Error::precondition("no items"));
    }
    Ok(present.iter().map(|&c| f[c]).sum::<f64>() / present.len() as f64)
}
