//! Pixel classifiers: a CART random forest and a small MLP.

mod forest;
mod mlp;

use rayon::prelude::*;

pub use forest::{rf_fit, DecisionTree, ForestParams, RandomForestModel, TreeNode};
pub use mlp::{mlp_fit, MlpFit, MlpModel, MlpParams};

use crate::error::{Error, Result};

/// Burnt-class decision threshold on predicted probabilities.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub trait Classifier: Sync {
    fn n_features(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.par_iter().map(|r| self.predict_proba(r)).collect()
    }

    fn predict_labels(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        Ok(self
            .predict_many(rows)?
            .into_iter()
            .map(|p| u8::from(p >= DECISION_THRESHOLD))
            .collect())
    }
}

/// Validates a training set and returns its dimensionality.
fn check_training_data(features: &[Vec<f64>], labels: &[u8]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::dims("label count", features.len(), labels.len()));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Fit("feature vectors are empty".into()));
    }
    if let Some(r) = features.iter().find(|r| r.len() != d) {
        return Err(Error::dims("feature vector", d, r.len()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Fit("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Fit("training labels contain a single class".into()));
    }
    Ok(d)
}
