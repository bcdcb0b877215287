use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, FeatureMatrix, RegressionTree, TreeParams};
use crate::error::{Error, Result};
use crate::preprocess::WindowTable;
use crate::rng::substream;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Probability clip used for the prior of single-class training data.
pub const PROB_EPS: f64 = 1e-6;
const MAX_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience_rounds: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            validation_fraction: 0.1,
            patience_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bagging {
    pub n_bags: usize,
    pub subsample_fraction: f64,
}

impl Default for Bagging {
    fn default() -> Self {
        Bagging {
            n_bags: 5,
            subsample_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub early_stopping: EarlyStopping,
    pub bagging: Bagging,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 100,
            max_depth: 6,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            min_child_weight: 1.0,
            lambda: 1.0,
            early_stopping: EarlyStopping::default(),
            bagging: Bagging::default(),
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        let ok = self.n_trees >= 1
            && self.max_depth >= 1
            && self.learning_rate > 0.0
            && self.lambda >= 0.0
            && self.min_child_weight >= 0.0
            && self.bagging.n_bags >= 1
            && (unit(self.bagging.subsample_fraction) || self.bagging.subsample_fraction == 1.0)
            && unit(self.early_stopping.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid boosting configuration {self:?}"
            )))
        }
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            min_child_weight: self.min_child_weight,
            lambda: self.lambda,
        }
    }

    /// Short stable identifier for reports.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::preprocess::fingerprint_str(&json)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagModel {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    /// Training log-loss before the first tree and after each kept tree.
    pub train_loss: Vec<f64>,
    pub best_validation_loss: Option<f64>,
}

impl BagModel {
    fn margin(&self, lr: f64, x: &[f64]) -> f64 {
        self.base_score + lr * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub config: GbdtConfig,
    pub feature_names: Vec<String>,
    pub schema_fingerprint: String,
    /// Set when the training labels were all one class.
    pub degenerate: bool,
    pub bags: Vec<BagModel>,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: GbdtModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Number of trees kept in each bag.
    pub fn tree_counts(&self) -> Vec<usize> {
        self.bags.iter().map(|b| b.trees.len()).collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-MAX_LOGIT, MAX_LOGIT);
    1.0 / (1.0 + (-z).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn log_loss(margin: &[f64], y: &[f64]) -> f64 {
    let n = margin.len() as f64;
    margin
        .iter()
        .zip(y)
        .map(|(&m, &y)| {
            let p = sigmoid(m);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Trains a bagged, early-stopped boosted ensemble on logistic loss.
pub fn train_gbdt(train: &WindowTable, cfg: &GbdtConfig) -> Result<GbdtModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let feature_names: Vec<String> = train
        .feature_names()
        .into_iter()
        .map(String::from)
        .collect();
    let mut model = GbdtModel {
        format_version: MODEL_FORMAT_VERSION,
        config: cfg.clone(),
        schema_fingerprint: train.schema_fingerprint(),
        feature_names,
        degenerate: false,
        bags: Vec::new(),
    };
    let y: Vec<f64> = train.rows().iter().map(|r| f64::from(r.engaged)).collect();
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    if pos == 0 || pos == y.len() {
        let p = if pos == 0 { PROB_EPS } else { 1.0 - PROB_EPS };
        model.degenerate = true;
        model.bags.push(BagModel {
            base_score: logit(p),
            trees: Vec::new(),
            train_loss: Vec::new(),
            best_validation_loss: None,
        });
        return Ok(model);
    }

    // Chronological order used to carve the validation tail of each bag.
    let mut chrono: Vec<usize> = (0..train.n_rows()).collect();
    let rows = train.rows();
    chrono.sort_by(|&a, &b| {
        (rows[a].session_index, rows[a].t_start_s)
            .partial_cmp(&(rows[b].session_index, rows[b].t_start_s))
            .expect("finite times")
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; chrono.len()];
    for (k, &i) in chrono.iter().enumerate() {
        rank[i] = k;
    }

    let bags: Vec<BagModel> = {
        use rayon::prelude::*;
        (0..cfg.bagging.n_bags)
            .into_par_iter()
            .map(|b| train_bag(train, &y, &rank, cfg, b))
            .collect()
    };
    model.bags = bags;
    Ok(model)
}

fn ceil_frac(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn train_bag(
    table: &WindowTable,
    y: &[f64],
    rank: &[usize],
    cfg: &GbdtConfig,
    bag: usize,
) -> BagModel {
    let n = table.n_rows();
    let m = ceil_frac(cfg.bagging.subsample_fraction, n).clamp(1, n);
    let mut rng = substream(cfg.seed, "gbdt_bag", bag as u64);
    let mut sample: Vec<usize> = index::sample(&mut rng, n, m).into_vec();
    sample.sort_by_key(|&i| rank[i]);

    let n_val = if m >= 2 {
        ceil_frac(cfg.early_stopping.validation_fraction, m).clamp(1, m - 1)
    } else {
        0
    };
    let (fit_idx, val_idx) = sample.split_at(m - n_val);

    let d = table.n_features();
    let fit_rows: Vec<&[f64]> = fit_idx
        .iter()
        .map(|&i| table.rows()[i].features.as_slice())
        .collect();
    let x = FeatureMatrix::from_rows(&fit_rows, d);
    let y_fit: Vec<f64> = fit_idx.iter().map(|&i| y[i]).collect();
    let y_val: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();

    let prior = (y_fit.iter().sum::<f64>() / y_fit.len() as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
    let base = logit(prior);
    let lr = cfg.learning_rate;
    let params = cfg.tree_params();

    let mut f = vec![base; y_fit.len()];
    let mut fv = vec![base; y_val.len()];
    let mut loss = log_loss(&f, &y_fit);
    let mut train_loss = vec![loss];
    let mut trees: Vec<RegressionTree> = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut grad = vec![0.0; y_fit.len()];
    let mut hess = vec![0.0; y_fit.len()];

    for _round in 0..cfg.n_trees {
        for i in 0..f.len() {
            let p = sigmoid(f[i]);
            grad[i] = p - y_fit[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let (mut tree, mut step) = fit_tree(&x, &grad, &hess, &params);

        // Halve the step until training loss does not increase.
        let mut accepted = None;
        for _ in 0..20 {
            let cand: Vec<f64> = f.iter().zip(&step).map(|(a, s)| a + lr * s).collect();
            let l = log_loss(&cand, &y_fit);
            if l <= loss {
                accepted = Some((cand, l));
                break;
            }
            tree.scale_leaves(0.5);
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        let Some((cand, l)) = accepted else { break };
        f = cand;
        loss = l;
        train_loss.push(loss);
        for (k, &i) in val_idx.iter().enumerate() {
            fv[k] += lr * tree.predict(&table.rows()[i].features);
        }
        trees.push(tree);

        if !y_val.is_empty() {
            let vl = log_loss(&fv, &y_val);
            if best.is_none_or(|(b, _)| vl < b) {
                best = Some((vl, trees.len()));
            }
            let (_, at) = best.expect("set above");
            if trees.len() - at >= cfg.early_stopping.patience_rounds {
                break;
            }
        }
    }

    let keep = best.map_or(trees.len(), |(_, at)| at);
    trees.truncate(keep.max(1).min(trees.len()));
    train_loss.truncate(trees.len() + 1);
    BagModel {
        base_score: base,
        trees,
        train_loss,
        best_validation_loss: best.map(|(v, _)| v),
    }
}

/// Bag-averaged probability of engagement for one feature vector.
pub fn predict_proba(model: &GbdtModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features() {
        return Err(Error::FeatureMismatch {
            expected: model.n_features(),
            found: x.len(),
        });
    }
    Ok(predict_unchecked(model, x))
}

fn predict_unchecked(model: &GbdtModel, x: &[f64]) -> f64 {
    let lr = model.config.learning_rate;
    let s: f64 = model.bags.iter().map(|b| sigmoid(b.margin(lr, x))).sum();
    s / model.bags.len() as f64
}

/// Scores every row; the table's feature names must match the model's.
pub fn predict_table(model: &GbdtModel, table: &WindowTable) -> Result<Vec<f64>> {
    if table.schema_fingerprint() != model.schema_fingerprint {
        return Err(Error::FeatureMismatch {
            expected: model.n_features(),
            found: table.n_features(),
        });
    }
    Ok(table
        .rows()
        .iter()
        .map(|r| predict_unchecked(model, &r.features))
        .collect())
}
