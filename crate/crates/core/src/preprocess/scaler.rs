use serde::{Deserialize, Serialize};

use super::WindowTable;
use crate::error::{Error, Result};

/// Per-feature mean and population standard deviation of a training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Missing values are ignored; an all-missing column gets mean 0 and std 0.
pub fn fit_scaler(train: &WindowTable) -> Result<Scaler> {
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let d = train.n_features();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let vals = train
            .rows()
            .iter()
            .map(|r| r.features[j])
            .filter(|v| !v.is_nan());
        let (mut n, mut sum) = (0usize, 0.0);
        for v in vals.clone() {
            n += 1;
            sum += v;
        }
        if n == 0 {
            continue;
        }
        let m = sum / n as f64;
        let var = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = var.sqrt();
    }
    Ok(Scaler {
        feature_names: train
            .feature_names()
            .into_iter()
            .map(String::from)
            .collect(),
        mean,
        std,
    })
}

pub fn apply_scaler(scaler: &Scaler, table: &WindowTable) -> Result<WindowTable> {
    scaler.check(table)?;
    let rows = table
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            scaler.transform_in_place(&mut r.features);
            r
        })
        .collect();
    Ok(table.with_rows(rows))
}

impl Scaler {
    fn check(&self, table: &WindowTable) -> Result<()> {
        let names = table.feature_names();
        if names.len() != self.feature_names.len() {
            return Err(Error::FeatureMismatch {
                expected: self.feature_names.len(),
                found: names.len(),
            });
        }
        if let Some((_, n)) = self.feature_names.iter().zip(&names).find(|(a, b)| a != b) {
            return Err(Error::UnknownFeature((*n).to_string()));
        }
        Ok(())
    }

    /// `(x - mean) / std`; zero-variance features map to 0, NaN stays NaN.
    pub fn transform_in_place(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s > 0.0 {
                (*v - m) / s
            } else if v.is_nan() {
                f64::NAN
            } else {
                0.0
            };
        }
    }

    pub fn inverse_in_place(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    pub fn inverse(&self, table: &WindowTable) -> Result<WindowTable> {
        self.check(table)?;
        let rows = table
            .rows()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                self.inverse_in_place(&mut r.features);
                r
            })
            .collect();
        Ok(table.with_rows(rows))
    }
}
