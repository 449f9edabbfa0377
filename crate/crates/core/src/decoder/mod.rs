//! Ridge decoding from EEG features to model representations, with nested
//! λ selection, Monte-Carlo cross-validation and the analysis cases.

mod analysis;
mod cv;
mod ridge;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eeg::EegError;
use crate::stats::StatsError;
use crate::stimuli::Condition;

pub use analysis::{run_analysis, run_permutation_null, Analysis, AnalysisCase, AnalysisData, ConditionBlock, NullSummary};
pub(crate) use analysis::null_pair;
pub use cv::{mc_cross_validate, mc_cross_validate_pair, split_for_trial, sweep_lambda, LambdaSweep, Split, TrialKernel, TrialOutcome};
pub use ridge::{fit_ridge, fit_ridge_dual, fit_ridge_primal, fit_ridge_standardized, predict, RidgeModel};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("ridge needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("ridge system is numerically singular at lambda {0}")]
    Singular(f64),
    #[error("{have} sentences available, at least {need} needed")]
    TooFewSentences { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no data for condition {0}")]
    MissingCondition(Condition),
    #[error("row keys of {a} and {b} do not align")]
    MissingAlignment { a: Condition, b: Condition },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Eeg(#[from] EegError),
}

/// Row key: (sentence id, content-word index).
pub type RowKey = (u32, usize);

/// Aligned EEG features and representations for one condition pairing.
#[derive(Debug, Clone)]
pub struct DecodingDataset {
    /// n × D EEG features.
    pub x: Arc<DMatrix<f64>>,
    /// n × P representations.
    pub y: Arc<DMatrix<f64>>,
    pub keys: Vec<RowKey>,
    pub eeg_condition: Condition,
    pub rep_condition: Condition,
}

impl DecodingDataset {
    pub fn new(
        x: Arc<DMatrix<f64>>,
        y: Arc<DMatrix<f64>>,
        keys: Vec<RowKey>,
        eeg_condition: Condition,
        rep_condition: Condition,
    ) -> Result<Self, DecoderError> {
        if x.nrows() != y.nrows() || x.nrows() != keys.len() {
            return Err(DecoderError::ShapeMismatch(format!(
                "{} EEG rows, {} representation rows, {} keys",
                x.nrows(),
                y.nrows(),
                keys.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DecoderError::NonFinite("EEG features"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DecoderError::NonFinite("representations"));
        }
        Ok(DecodingDataset {
            x,
            y,
            keys,
            eeg_condition,
            rep_condition,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// `n` values spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo * (hi / lo).powf(k as f64 / (n - 1) as f64)
                }
            })
            .collect(),
    }
}

pub const LAMBDA_MIN: f64 = 0.1;
pub const LAMBDA_MAX: f64 = 200.0;

/// Twelve log-spaced values over [0.1, 200].
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(LAMBDA_MIN, LAMBDA_MAX, 12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_trials: usize,
    /// Fraction of sentences held out per trial (at least one).
    pub test_fraction: f64,
    pub lambda_grid: Vec<f64>,
    pub inner_folds: usize,
    pub seed: u64,
    /// Z-score representations with training statistics.
    pub standardize_y: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_trials: 200,
            test_fraction: 0.1,
            lambda_grid: default_lambda_grid(),
            inner_folds: 5,
            seed: 0,
            standardize_y: true,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        let bad = |m: String| Err(DecoderError::Config(m));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} is not in (0, 1)", self.test_fraction));
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid is empty".into());
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(LAMBDA_MIN..=LAMBDA_MAX).contains(*l)) {
            return bad(format!("lambda {l} is outside [{LAMBDA_MIN}, {LAMBDA_MAX}]"));
        }
        if self.inner_folds < 2 {
            return bad("inner_folds must be at least 2".into());
        }
        Ok(())
    }
}

/// One Monte-Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub lambda: f64,
    pub acc_2v2: f64,
    pub mse: f64,
}

pub fn mean_accuracy(records: &[TrialRecord]) -> f64 {
    records.iter().map(|r| r.acc_2v2).sum::<f64>() / records.len() as f64
}

pub fn mean_mse(records: &[TrialRecord]) -> f64 {
    records.iter().map(|r| r.mse).sum::<f64>() / records.len() as f64
}
