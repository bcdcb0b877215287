//! Boosted decision trees and the logistic baseline.

mod gbdt;
mod linear;
mod tree;

pub use gbdt::{
    logit, predict_proba, predict_table, sigmoid, train_gbdt, BagModel, Bagging, EarlyStopping,
    GbdtConfig, GbdtModel, MODEL_FORMAT_VERSION, PROB_EPS,
};
pub use linear::{train_baseline, LinearConfig, LinearModel};
pub use tree::{fit_tree, FeatureMatrix, Node, RegressionTree, TreeParams};
