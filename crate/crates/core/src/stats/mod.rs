//! PCA, one-way ANOVA, variance F-test, Fleiss' kappa, Spearman correlation
//! and the t-tests behind them.

mod dist;
mod pca;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pearson;

pub use dist::{f_survival, t_two_sided_p};
pub use pca::{pca_project, PcaResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df1: f64,
    pub df2: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sum_sq_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// One-way ANOVA F statistic across groups.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InsufficientData(
            "ANOVA needs at least two groups of two values".into(),
        ));
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ssb: f64 = groups
        .iter()
        .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
        .sum();
    let ssw: f64 = groups.iter().map(|g| sum_sq_dev(g)).sum();
    let (df1, df2) = (k - 1.0, n as f64 - k);
    let f = match (ssb > 0.0, ssw > 0.0) {
        (_, true) => (ssb / df1) / (ssw / df2),
        (true, false) => f64::INFINITY,
        (false, false) => return Err(Error::Undefined("all values are identical".into())),
    };
    Ok(TestResult {
        statistic: f,
        p_value: f_survival(f, df1, df2),
        df1,
        df2,
    })
}

/// Two-sided F-test for equal variances; the statistic is larger over smaller
/// sample variance.
pub fn var_ftest(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(
            "F-test needs two values per sample".into(),
        ));
    }
    let va = sum_sq_dev(a) / (a.len() - 1) as f64;
    let vb = sum_sq_dev(b) / (b.len() - 1) as f64;
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::Undefined("zero sample variance".into()));
    }
    let (f, d1, d2) = if va >= vb {
        (va / vb, (a.len() - 1) as f64, (b.len() - 1) as f64)
    } else {
        (vb / va, (b.len() - 1) as f64, (a.len() - 1) as f64)
    };
    Ok(TestResult {
        statistic: f,
        p_value: (2.0 * f_survival(f, d1, d2)).min(1.0),
        df1: d1,
        df2: d2,
    })
}

/// Student's two-sample t-test with pooled variance.
pub fn t_test_equal_var(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(
            "t-test needs two values per sample".into(),
        ));
    }
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = (sum_sq_dev(a) + sum_sq_dev(b)) / df;
    let se = (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    if se == 0.0 {
        return Err(Error::Undefined("zero pooled variance".into()));
    }
    let t = (mean(a) - mean(b)) / se;
    Ok(TestResult {
        statistic: t,
        p_value: t_two_sided_p(t, df),
        df1: df,
        df2: f64::NAN,
    })
}

/// Least-squares line with a t-test on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

/// With zero residual the p-value is 0 for a non-zero slope and 1 otherwise.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InsufficientData(
            "regression needs three paired points".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("constant regressor".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let df = (n - 2) as f64;
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    let slope_se = (sse.max(0.0) / df / sxx).sqrt();
    let (t, p_value) = if sse <= 1e-24 * scale {
        let exact_zero = slope.abs() <= 1e-12 * (my.abs() + 1.0);
        if exact_zero {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(slope), 0.0)
        }
    } else {
        let t = slope / slope_se;
        (t, t_two_sided_p(t, df))
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        t,
        p_value,
        n,
    })
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        idx[i..j].iter().for_each(|&k| out[k] = r);
        i = j;
    }
    out
}

/// Pearson correlation of midranks; `None` for constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData(
            "spearman needs two paired values".into(),
        ));
    }
    Ok(pearson(&midranks(x), &midranks(y)))
}

/// Per-item counts of raters choosing each category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterMatrix {
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl RaterMatrix {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        let first = counts
            .first()
            .ok_or_else(|| Error::InsufficientData("no rated items".into()))?;
        let raters: u32 = first.iter().sum();
        let cats = first.len();
        if raters < 2 || cats < 2 {
            return Err(Error::InsufficientData(
                "need two raters and two categories".into(),
            ));
        }
        if counts
            .iter()
            .any(|r| r.len() != cats || r.iter().sum::<u32>() != raters)
        {
            return Err(Error::Config(
                "every item needs the same raters and categories".into(),
            ));
        }
        Ok(RaterMatrix { counts, raters })
    }

    /// Builds counts from per-rater binary labels (`labels[rater][item]`).
    pub fn from_binary_labels(labels: &[Vec<u8>]) -> Result<Self> {
        let n_items = labels.first().map_or(0, Vec::len);
        if labels.iter().any(|l| l.len() != n_items) {
            return Err(Error::Config(
                "raters labelled different item counts".into(),
            ));
        }
        let counts = (0..n_items)
            .map(|i| {
                let ones = labels.iter().filter(|l| l[i] == 1).count() as u32;
                vec![labels.len() as u32 - ones, ones]
            })
            .collect();
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }
}

pub fn fleiss_kappa(m: &RaterMatrix) -> Result<f64> {
    let n = f64::from(m.raters);
    let items = m.counts.len() as f64;
    let cats = m.counts[0].len();
    let p_bar = m
        .counts
        .iter()
        .map(|row| {
            let s: f64 = row.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
            (s - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..cats)
        .map(|j| {
            let pj = m.counts.iter().map(|r| f64::from(r[j])).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined("chance agreement is 1".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
