//! Classification metrics and label correlations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::WindowTable;

fn check_scored(labels: &[u8], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Config(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyTable);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Undefined("NaN score".into()));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting one half.
///
/// Uses doubled midranks so the result is an exact ratio of integers.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_scored(labels, scores)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j share the doubled midrank i+1+j.
        let pos_in_group = idx[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_pos += pos_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let u2 = rank2_pos - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class is absent.
    pub recall: Option<f64>,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub threshold: f64,
    pub n: usize,
    pub accuracy: f64,
    pub engaged: ClassMetrics,
    pub disengaged: ClassMetrics,
}

/// Predicts engaged when `score >= threshold`.
pub fn classification_report(
    labels: &[u8],
    scores: &[f64],
    threshold: f64,
) -> Result<ClassificationReport> {
    check_scored(labels, scores)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&y, &s) in labels.iter().zip(scores) {
        match (y == 1, s >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(ClassificationReport {
        threshold,
        n: labels.len(),
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        engaged: ClassMetrics {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            support: tp + fn_,
            predicted: tp + fp,
        },
        disengaged: ClassMetrics {
            precision: ratio(tn, tn + fn_),
            recall: ratio(tn, tn + fp),
            support: tn + fp,
            predicted: tn + fn_,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub feature: String,
    pub base: String,
    /// `None` for constant features.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub entries: Vec<Correlation>,
}

impl CorrelationTable {
    /// Entries whose base name is their own feature name.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, Option<f64>)]) -> Self {
        CorrelationTable {
            entries: pairs
                .iter()
                .map(|(n, r)| Correlation {
                    feature: n.as_ref().to_string(),
                    base: n.as_ref().to_string(),
                    r: *r,
                })
                .collect(),
        }
    }

    pub fn get(&self, feature: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.feature == feature)
            .and_then(|e| e.r)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,base,r\n");
        for e in &self.entries {
            let r = e.r.map_or(String::new(), |r| r.to_string());
            s.push_str(&format!("{},{},{}\n", e.feature, e.base, r));
        }
        s
    }
}

/// Pearson correlation over the pairs with no missing value.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson r of every feature against the label, pooled over all rows.
pub fn feature_correlations(table: &WindowTable) -> Result<CorrelationTable> {
    if table.n_rows() < 2 {
        return Err(Error::InsufficientData(
            "correlations need at least two rows".into(),
        ));
    }
    let y: Vec<f64> = table.rows().iter().map(|r| f64::from(r.engaged)).collect();
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Undefined("label is constant".into()));
    }
    let entries = table
        .columns()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let x: Vec<f64> = table.rows().iter().map(|r| r.features[j]).collect();
            Correlation {
                feature: c.name.clone(),
                base: c.base.clone(),
                r: pearson(&x, &y),
            }
        })
        .collect();
    Ok(CorrelationTable { entries })
}

/// Mean over participants of each participant's own correlation. Participants
/// with a constant label or feature are skipped for that feature.
pub fn per_user_correlations(table: &WindowTable) -> Result<CorrelationTable> {
    let per: Vec<CorrelationTable> = table
        .participants()
        .iter()
        .filter_map(|p| feature_correlations(&table.subset(&table.participant_rows(p))).ok())
        .collect();
    if per.is_empty() {
        return Err(Error::Undefined("no participant has both labels".into()));
    }
    let entries = table
        .columns()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let rs: Vec<f64> = per.iter().filter_map(|t| t.entries[j].r).collect();
            Correlation {
                feature: c.name.clone(),
                base: c.base.clone(),
                r: (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64),
            }
        })
        .collect();
    Ok(CorrelationTable { entries })
}

/// Base feature names with any derived column above `|r| > threshold`, in
/// table order.
pub fn key_features(corrs: &CorrelationTable, threshold: f64) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in &corrs.entries {
        if e.r.is_some_and(|r| r.abs() > threshold) && !out.contains(&e.base) {
            out.push(e.base.clone());
        }
    }
    out
}
