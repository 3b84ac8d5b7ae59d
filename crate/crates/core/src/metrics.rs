//! Evaluation measures for estimated cause distributions, plus the empirical
//! Cramér's V used for exploratory screening.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A probability vector over causes.
#[derive(Clone, Debug, PartialEq)]
pub struct CsmfVector(Vec<f64>);

impl CsmfVector {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::input("CSMF vector is empty"));
        }
        if probabilities.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::input("CSMF entries must be nonnegative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("CSMF entries sum to {total}, not 1")));
        }
        Ok(Self(probabilities))
    }

    /// Normalized counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::input("cannot build a CSMF from zero counts"));
        }
        Self::new(counts.iter().map(|&k| k as f64 / total as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "cause count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn l1_distance(p0: &CsmfVector, p1: &CsmfVector) -> Result<f64> {
    check_lengths(&p0.0, &p1.0)?;
    Ok(p0.0.iter().zip(&p1.0).map(|(a, b)| (a - b).abs()).sum())
}

/// `1 − L1 / (2 (1 − min truth))`, in [0, 1].
pub fn csmf_accuracy(truth: &CsmfVector, estimate: &CsmfVector) -> Result<f64> {
    let d = l1_distance(truth, estimate)?;
    let min = truth.0.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 1.0 {
        return Err(Error::input("CSMF accuracy needs at least two causes"));
    }
    Ok(1.0 - d / (2.0 * (1.0 - min)))
}

/// Pearson correlation between actual and predicted deaths per cause.
pub fn cause_count_correlation(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    if actual.len() < 2 {
        return Err(Error::input("correlation needs at least two causes"));
    }
    let n = actual.len() as f64;
    let ma = actual.iter().sum::<f64>() / n;
    let mp = predicted.iter().sum::<f64>() / n;
    let (mut sap, mut saa, mut spp) = (0.0, 0.0, 0.0);
    for (a, p) in actual.iter().zip(predicted) {
        sap += (a - ma) * (p - mp);
        saa += (a - ma) * (a - ma);
        spp += (p - mp) * (p - mp);
    }
    if saa == 0.0 || spp == 0.0 {
        return Err(Error::Degenerate("count vector has zero variance".into()));
    }
    Ok((sap / (saa * spp).sqrt()).clamp(-1.0, 1.0))
}

/// Cramér's V of paired discrete samples; pairs with a missing side are
/// dropped.
pub fn cramers_v_empirical<Y: Ord + Clone, X: Ord + Clone>(y: &[Option<Y>], x: &[Option<X>]) -> Result<f64> {
    if y.len() != x.len() {
        return Err(Error::input("paired samples differ in length"));
    }
    let mut table: BTreeMap<(Y, X), f64> = BTreeMap::new();
    let mut rows: BTreeMap<Y, f64> = BTreeMap::new();
    let mut cols: BTreeMap<X, f64> = BTreeMap::new();
    let mut n = 0.0;
    for (a, b) in y.iter().zip(x) {
        if let (Some(a), Some(b)) = (a, b) {
            *table.entry((a.clone(), b.clone())).or_default() += 1.0;
            *rows.entry(a.clone()).or_default() += 1.0;
            *cols.entry(b.clone()).or_default() += 1.0;
            n += 1.0;
        }
    }
    if rows.len() < 2 || cols.len() < 2 {
        return Err(Error::Degenerate("both variables need at least two observed levels".into()));
    }
    let mut chi2 = 0.0;
    for (a, ra) in &rows {
        for (b, cb) in &cols {
            let expected = ra * cb / n;
            let observed = table.get(&(a.clone(), b.clone())).copied().unwrap_or(0.0);
            chi2 += (observed - expected) * (observed - expected) / expected;
        }
    }
    let m = rows.len().min(cols.len()) as f64;
    Ok((chi2 / (n * (m - 1.0))).sqrt().min(1.0))
}
