//! Product-moment and rank correlation of silence proportion with F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl std::str::FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            other => Err(Error::config(format!("unknown correlation `{other}` (expected pearson|spearman)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub method: CorrelationMethod,
    pub coefficient: f64,
    pub n_points: usize,
    /// `(silence_proportion, f1)` per group.
    pub pairs: Vec<(f64, f64)>,
    pub sources: Vec<String>,
}

/// Pearson coefficient with population moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::precondition("need two non-empty samples of equal length"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) || sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateCorrelation(
            "zero variance in one coordinate".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Correlation over `(source_id, silence_proportion, macro_f1)` groups.
pub fn silence_f1_correlation(groups: &[(String, f64, f64)], method: CorrelationMethod) -> Result<CorrelationResult> {
    if groups.len() < 3 {
        return Err(Error::precondition(format!("need at least 3 groups, got {}", groups.len())));
    }
    let x: Vec<f64> = groups.iter().map(|g| g.1).collect();
    let y: Vec<f64> = groups.iter().map(|g| g.2).collect();
    let coefficient = match method {
        CorrelationMethod::Pearson => pearson(&x, &y)?,
        CorrelationMethod::Spearman => spearman(&x, &y)?,
    };
    Ok(CorrelationResult {
        method,
        coefficient,
        n_points: groups.len(),
        pairs: x.into_iter().zip(y).collect(),
        sources: groups.iter().map(|g| g.0.clone()).collect(),
    })
}
