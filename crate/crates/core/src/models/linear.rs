use serde::{Deserialize, Serialize};

use super::gbdt::sigmoid;
use crate::error::{Error, Result};
use crate::preprocess::WindowTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    /// L2 penalty on the weights (the intercept is not penalised).
    pub lambda: f64,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            lambda: 1.0,
            tolerance: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + dot(&self.weights, x))
    }

    pub fn predict_table(&self, table: &WindowTable) -> Result<Vec<f64>> {
        if table.n_features() != self.weights.len() {
            return Err(Error::FeatureMismatch {
                expected: self.weights.len(),
                found: table.n_features(),
            });
        }
        Ok(table
            .rows()
            .iter()
            .map(|r| self.predict_proba(&r.features))
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L2-regularised logistic regression by gradient descent with step `1/L`.
///
/// Minimises `mean(logloss) + lambda/2 * |w|^2`; `L` bounds the curvature
/// from the largest eigenvalue of the design Gram matrix.
pub fn train_baseline(train: &WindowTable, cfg: &LinearConfig) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let names = train.feature_names();
    for (i, r) in train.rows().iter().enumerate() {
        if let Some(j) = r.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i + 1,
                column: names[j].to_string(),
            });
        }
    }
    let n = train.n_rows() as f64;
    let d = train.n_features();
    let xs: Vec<&[f64]> = train.rows().iter().map(|r| r.features.as_slice()).collect();
    let y: Vec<f64> = train.rows().iter().map(|r| f64::from(r.engaged)).collect();

    let lip = 0.25 * top_eigenvalue(&xs, d) / n + cfg.lambda;
    let step = 1.0 / lip;

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        gw.iter_mut().zip(&w).for_each(|(g, w)| *g = cfg.lambda * w);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&y) {
            let r = (sigmoid(b + dot(&w, x)) - y) / n;
            gb += r;
            for (g, v) in gw.iter_mut().zip(*x) {
                *g += r * v;
            }
        }
        let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if norm < cfg.tolerance {
            converged = true;
            break;
        }
        w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
        b -= step * gb;
        iterations += 1;
    }
    Ok(LinearModel {
        feature_names: names.into_iter().map(String::from).collect(),
        weights: w,
        intercept: b,
        iterations,
        converged,
    })
}

/// Largest eigenvalue of `Z^T Z` for `Z = [X, 1]`, by power iteration with a
/// safety margin.
fn top_eigenvalue(xs: &[&[f64]], d: usize) -> f64 {
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut out = vec![0.0; d + 1];
        for x in xs {
            let zx = dot(&v[..d], x) + v[d];
            for (o, xv) in out.iter_mut().zip(*x) {
                *o += zx * xv;
            }
            out[d] += zx;
        }
        let norm = out.iter().map(|o| o * o).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let prev = lambda;
        lambda = norm;
        v = out.into_iter().map(|o| o / norm).collect();
        if (lambda - prev).abs() <= 1e-6 * lambda {
            break;
        }
    }
    lambda * 1.05
}
