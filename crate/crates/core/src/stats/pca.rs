use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit principal axes, by decreasing eigenvalue.
    pub axes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// Row projections onto `axes`.
    pub scores: Vec<Vec<f64>>,
    pub warning: Option<String>,
}

/// Projects rows onto the top `k` eigenvectors of their sample covariance.
///
/// Each axis is signed so its largest-magnitude component is positive. Axes
/// with (numerically) zero variance are dropped and flagged in `warning`.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "PCA needs at least two rows".into(),
        ));
    }
    let d = rows[0].len();
    if rows
        .iter()
        .any(|r| r.len() != d || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Undefined(
            "PCA input must be a finite rectangular matrix".into(),
        ));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = cov.trace();

    let eig = SymmetricEigen::try_new(cov.clone(), 1e-15, 0)
        .ok_or_else(|| Error::Undefined("eigen-decomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let tol = 1e-12 * total_variance.abs().max(f64::MIN_POSITIVE);
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    let kept = k.min(rank);
    let warning =
        (kept < k).then(|| format!("covariance rank {rank} is below the requested {k} components"));

    let mut axes = Vec::with_capacity(kept);
    let mut eigenvalues = Vec::with_capacity(kept);
    for &i in order.iter().take(kept) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    let explained = eigenvalues.iter().map(|l| l / total_variance).collect();
    let scores = (0..n)
        .map(|i| {
            axes.iter()
                .map(|a| (0..d).map(|j| centered[(i, j)] * a[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        mean,
        axes,
        eigenvalues,
        explained,
        total_variance,
        scores,
        warning,
    })
}
