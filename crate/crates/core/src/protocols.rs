//! Train/test split families and the experiment runner.

use std::fmt;

use itertools::Itertools;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auroc, classification_report};
use crate::models::{
    predict_table, train_baseline, train_gbdt, GbdtConfig, GbdtModel, LinearConfig, LinearModel,
};
use crate::preprocess::{
    apply_scaler, fit_scaler, select_features, FeatureGroup, Scaler, WindowTable,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Train on every `train_users`-subset of participants, test on the rest.
    Generalized { train_users: usize },
    /// Per participant, train on the chronologically first fraction of windows.
    Individualized { train_fraction: f64 },
    /// Uniform row samples pooled over all participants, one per repeat.
    RandomSample {
        train_fraction: f64,
        seed: u64,
        repeats: usize,
    },
}

impl SplitSpec {
    pub fn random(train_fraction: f64, seed: u64) -> Self {
        SplitSpec::RandomSample {
            train_fraction,
            seed,
            repeats: 10,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            SplitSpec::Generalized { .. } => "generalized",
            SplitSpec::Individualized { .. } => "individualized",
            SplitSpec::RandomSample { .. } => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Provenance {
    Generalized {
        train_users: Vec<String>,
        test_users: Vec<String>,
    },
    Individualized {
        participant: String,
        train_fraction: f64,
    },
    RandomSample {
        train_fraction: f64,
        seed: u64,
    },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Generalized { train_users, .. } => {
                write!(f, "train={}", train_users.join("+"))
            }
            Provenance::Individualized {
                participant,
                train_fraction,
            } => write!(f, "{participant}@{train_fraction}"),
            Provenance::RandomSample {
                train_fraction,
                seed,
            } => write!(f, "random@{train_fraction}#{seed}"),
        }
    }
}

/// Row indices into the table the split was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSplit(format!(
            "train fraction {f} outside (0, 1)"
        )))
    }
}

fn ceil_count(f: f64, n: usize) -> usize {
    (f * n as f64 - 1e-9).ceil().max(0.0) as usize
}

pub fn generalized_splits(windows: &WindowTable, train_users: usize) -> Result<Vec<Split>> {
    let users = windows.participants();
    let p = users.len();
    if train_users == 0 || train_users >= p {
        return Err(Error::InvalidSplit(format!(
            "need 1 <= M <= {} training users, got {train_users}",
            p.saturating_sub(1)
        )));
    }
    let user_of: Vec<usize> = windows
        .rows()
        .iter()
        .map(|r| {
            users
                .iter()
                .position(|u| *u == r.key.participant)
                .expect("listed")
        })
        .collect();
    Ok((0..p)
        .combinations(train_users)
        .map(|combo| {
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..windows.n_rows()).partition(|&i| combo.contains(&user_of[i]));
            Split {
                train,
                test,
                provenance: Provenance::Generalized {
                    train_users: combo.iter().map(|&u| users[u].clone()).collect(),
                    test_users: (0..p)
                        .filter(|u| !combo.contains(u))
                        .map(|u| users[u].clone())
                        .collect(),
                },
            }
        })
        .collect())
}

/// Rows ordered by (session index, window start), stable on ties.
fn chronological(windows: &WindowTable) -> Vec<usize> {
    let rows = windows.rows();
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        rows[a]
            .session_index
            .cmp(&rows[b].session_index)
            .then(rows[a].t_start_s.total_cmp(&rows[b].t_start_s))
    });
    idx
}

pub fn individualized_split(user_windows: &WindowTable, train_fraction: f64) -> Result<Split> {
    check_fraction(train_fraction)?;
    let users = user_windows.participants();
    if users.len() != 1 {
        return Err(Error::InvalidSplit(format!(
            "individualized split needs one participant, found {}",
            users.len()
        )));
    }
    let order = chronological(user_windows);
    let n = order.len();
    let k = ceil_count(train_fraction, n);
    if k == 0 || k >= n {
        return Err(Error::InvalidSplit(format!(
            "fraction {train_fraction} of {n} windows leaves an empty side"
        )));
    }
    Ok(Split {
        train: order[..k].to_vec(),
        test: order[k..].to_vec(),
        provenance: Provenance::Individualized {
            participant: users[0].clone(),
            train_fraction,
        },
    })
}

pub fn random_split(windows: &WindowTable, train_fraction: f64, seed: u64) -> Result<Split> {
    check_fraction(train_fraction)?;
    let n = windows.n_rows();
    let k = ceil_count(train_fraction, n);
    if k == 0 || k >= n {
        return Err(Error::InvalidSplit(format!(
            "fraction {train_fraction} of {n} windows leaves an empty side"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = index::sample(&mut rng, n, k).into_vec();
    train.sort_unstable();
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok(Split {
        train,
        test,
        provenance: Provenance::RandomSample {
            train_fraction,
            seed,
        },
    })
}

/// All splits of a spec, indices relative to `windows`.
pub fn splits_for(windows: &WindowTable, spec: &SplitSpec) -> Result<Vec<Split>> {
    match spec {
        SplitSpec::Generalized { train_users } => generalized_splits(windows, *train_users),
        SplitSpec::Individualized { train_fraction } => windows
            .participants()
            .iter()
            .map(|p| {
                let rows = windows.participant_rows(p);
                let s = individualized_split(&windows.subset(&rows), *train_fraction)?;
                Ok(Split {
                    train: s.train.iter().map(|&i| rows[i]).collect(),
                    test: s.test.iter().map(|&i| rows[i]).collect(),
                    provenance: s.provenance,
                })
            })
            .collect(),
        SplitSpec::RandomSample {
            train_fraction,
            seed,
            repeats,
        } => (0..*repeats as u64)
            .map(|k| {
                random_split(
                    windows,
                    *train_fraction,
                    derive_seed(*seed, "random_split", k),
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gbdt(GbdtConfig),
    Logistic(LinearConfig),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Gbdt(GbdtConfig::default())
    }
}

impl ModelSpec {
    pub fn fingerprint(&self) -> String {
        crate::preprocess::fingerprint_str(&serde_json::to_string(self).expect("serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Gbdt(GbdtModel),
    Logistic(LinearModel),
}

impl TrainedModel {
    /// Scores a table that has already been projected and scaled.
    pub fn predict_table(&self, table: &WindowTable) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Gbdt(m) => predict_table(m, table),
            TrainedModel::Logistic(m) => m.predict_table(&impute_zero(table)),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

fn impute_zero(t: &WindowTable) -> WindowTable {
    let rows = t
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.features
                .iter_mut()
                .filter(|v| v.is_nan())
                .for_each(|v| *v = 0.0);
            r
        })
        .collect();
    t.with_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub feature_group: FeatureGroup,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::default(),
            feature_group: FeatureGroup::All,
            threshold: 0.5,
        }
    }
}

/// Fits the scaler and model on the train rows of an already projected table.
pub fn fit_split(
    projected: &WindowTable,
    split: &Split,
    model: &ModelSpec,
) -> Result<(Scaler, TrainedModel)> {
    fit_rows(projected, &split.train, model)
}

/// Fits the scaler and model on the given rows of an already projected table.
pub fn fit_rows(
    projected: &WindowTable,
    rows: &[usize],
    model: &ModelSpec,
) -> Result<(Scaler, TrainedModel)> {
    let train = projected.subset(rows);
    let scaler = fit_scaler(&train)?;
    let train = apply_scaler(&scaler, &train)?;
    let trained = match model {
        ModelSpec::Gbdt(cfg) => TrainedModel::Gbdt(train_gbdt(&train, cfg)?),
        ModelSpec::Logistic(cfg) => {
            TrainedModel::Logistic(train_baseline(&impute_zero(&train), cfg)?)
        }
    };
    Ok((scaler, trained))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub provenance: Provenance,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when the test set holds a single class.
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub engaged_precision: Option<f64>,
    pub engaged_recall: Option<f64>,
    pub disengaged_precision: Option<f64>,
    pub disengaged_recall: Option<f64>,
    pub model_fingerprint: String,
    pub feature_group: String,
    pub degenerate_model: bool,
}

/// Test-set scores of one split, aligned with `rows` of the input table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPredictions {
    pub provenance: Provenance,
    pub rows: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Metric means over the reports of one spec; undefined values are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub protocol: String,
    /// Training users or training fraction.
    pub setting: f64,
    pub n_splits: usize,
    pub auroc: Option<f64>,
    pub accuracy: Option<f64>,
    pub engaged_precision: Option<f64>,
    pub engaged_recall: Option<f64>,
    pub disengaged_precision: Option<f64>,
    pub disengaged_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: SplitSpec,
    pub reports: Vec<EvalReport>,
    pub summary: ExperimentSummary,
    pub predictions: Vec<SplitPredictions>,
}

/// Runs every split of `spec`: project, scale on train, fit, score the test rows.
pub fn run_experiment(
    windows: &WindowTable,
    spec: &SplitSpec,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    let projected = select_features(windows, &cfg.feature_group)?;
    let splits = splits_for(&projected, spec)?;
    let fingerprint = cfg.model.fingerprint();

    let outcomes: Vec<Result<(EvalReport, SplitPredictions)>> = {
        use rayon::prelude::*;
        splits
            .par_iter()
            .map(|split| evaluate_split(&projected, split, spec, cfg, &fingerprint))
            .collect()
    };
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut predictions = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (r, p) = o?;
        reports.push(r);
        predictions.push(p);
    }
    let summary = summarize(spec, &reports);
    Ok(ExperimentResult {
        spec: spec.clone(),
        reports,
        summary,
        predictions,
    })
}

fn evaluate_split(
    projected: &WindowTable,
    split: &Split,
    spec: &SplitSpec,
    cfg: &ExperimentConfig,
    fingerprint: &str,
) -> Result<(EvalReport, SplitPredictions)> {
    let ctx = || format!("split {}", split.provenance);
    let (scaler, model) = fit_split(projected, split, &cfg.model).map_err(|e| e.context(ctx()))?;
    let test = apply_scaler(&scaler, &projected.subset(&split.test))?;
    let scores = model.predict_table(&test)?;
    let labels = test.labels();
    let auc = match auroc(&labels, &scores) {
        Ok(a) => Some(a),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e.context(ctx())),
    };
    let rep = classification_report(&labels, &scores, cfg.threshold)?;
    let degenerate = matches!(&model, TrainedModel::Gbdt(m) if m.degenerate);
    Ok((
        EvalReport {
            protocol: spec.family().to_string(),
            provenance: split.provenance.clone(),
            n_train: split.train.len(),
            n_test: split.test.len(),
            auroc: auc,
            accuracy: rep.accuracy,
            engaged_precision: rep.engaged.precision,
            engaged_recall: rep.engaged.recall,
            disengaged_precision: rep.disengaged.precision,
            disengaged_recall: rep.disengaged.recall,
            model_fingerprint: fingerprint.to_string(),
            feature_group: cfg.feature_group.to_string(),
            degenerate_model: degenerate,
        },
        SplitPredictions {
            provenance: split.provenance.clone(),
            rows: split.test.clone(),
            scores,
        },
    ))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(spec: &SplitSpec, reports: &[EvalReport]) -> ExperimentSummary {
    let setting = match spec {
        SplitSpec::Generalized { train_users } => *train_users as f64,
        SplitSpec::Individualized { train_fraction } => *train_fraction,
        SplitSpec::RandomSample { train_fraction, .. } => *train_fraction,
    };
    ExperimentSummary {
        protocol: spec.family().to_string(),
        setting,
        n_splits: reports.len(),
        auroc: mean_of(reports.iter().map(|r| r.auroc)),
        accuracy: mean_of(reports.iter().map(|r| Some(r.accuracy))),
        engaged_precision: mean_of(reports.iter().map(|r| r.engaged_precision)),
        engaged_recall: mean_of(reports.iter().map(|r| r.engaged_recall)),
        disengaged_precision: mean_of(reports.iter().map(|r| r.disengaged_precision)),
        disengaged_recall: mean_of(reports.iter().map(|r| r.disengaged_recall)),
    }
}

/// One row per summary, in the layout of the published result tables.
pub fn summary_table_csv(summaries: &[ExperimentSummary]) -> String {
    let first = summaries
        .first()
        .map_or("generalized", |s| s.protocol.as_str());
    let setting = if first == "generalized" {
        "Training Users"
    } else {
        "Training Proportion"
    };
    let mut out = format!(
        "{setting},AUROC,Accuracy,Engagement Precision,Engagement Recall,Disengagement Precision,Disengagement Recall\n"
    );
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    for s in summaries {
        let set = if s.protocol == "generalized" {
            format!("{}", s.setting as usize)
        } else {
            format!("{:.2}", s.setting)
        };
        out.push_str(&format!(
            "{set},{},{},{},{},{},{}\n",
            cell(s.auroc),
            cell(s.accuracy),
            cell(s.engaged_precision),
            cell(s.engaged_recall),
            cell(s.disengaged_precision),
            cell(s.disengaged_recall)
        ));
    }
    out
}
