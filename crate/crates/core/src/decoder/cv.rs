//! Nested cross-validation in kernel form.
//!
//! With n training rows and D ≫ n features, every ridge fit in a trial is
//! expressed through the n × n Gram matrix K = ZZᵀ of the standardized
//! training features. One eigendecomposition K = QΛQᵀ per trial gives the
//! test predictions K_te Q (Λ + λI)⁻¹ Qᵀ Y and, through the held-out-group
//! identity in [`GroupCv`], the inner validation predictions. The X-dependent part of a trial lives in
//! [`TrialKernel`] so that permutations of Y can reuse it.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{DecoderError, DecodingDataset, McConfig, RowKey, TrialRecord};
use crate::eeg::Standardization;
use crate::seeding::{derive_seed, rng_for};
use crate::stats::{mse, random_pairing, two_vs_two_paired};

/// Row indices of one Monte-Carlo trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_sentences: Vec<u32>,
}

fn sentences(keys: &[RowKey]) -> Vec<u32> {
    keys.iter().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Sentence-grouped train/test split for `trial`, a pure function of
/// `(cfg.seed, trial)` and the set of sentence ids.
pub fn split_for_trial(keys: &[RowKey], cfg: &McConfig, trial: usize) -> Result<Split, DecoderError> {
    let mut ids = sentences(keys);
    let need = cfg.inner_folds + 1;
    if ids.len() < need {
        return Err(DecoderError::TooFewSentences { have: ids.len(), need });
    }
    let n_test = ((ids.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, ids.len() - cfg.inner_folds);
    ids.shuffle(&mut rng_for(cfg.seed, &[trial as u64, 0]));
    let mut test_sentences = ids[..n_test].to_vec();
    test_sentences.sort_unstable();
    let held: BTreeSet<u32> = test_sentences.iter().copied().collect();
    let (test, train): (Vec<usize>, Vec<usize>) = (0..keys.len()).partition(|&r| held.contains(&keys[r].0));
    Ok(Split {
        train,
        test,
        test_sentences,
    })
}

struct InnerFold {
    val: Vec<usize>,
    /// Rows `val` of the eigenvectors of the full training kernel.
    q_val: DMatrix<f64>,
    pairs: Vec<(usize, usize)>,
}

/// Sentence-grouped inner folds over the rows of a Gram matrix.
///
/// With H = (K + λI)⁻¹ and α = HY, the prediction for a held-out group g
/// from a fit on the remaining rows is Y_g − H_gg⁻¹ α_g, so a single
/// eigendecomposition K = QΛQᵀ serves every fold and every λ.
struct GroupCv {
    folds: Vec<InnerFold>,
}

impl GroupCv {
    fn new(q: &DMatrix<f64>, groups: &[u32], n_folds: usize, seed: u64) -> Result<Self, DecoderError> {
        let mut ids: Vec<u32> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if ids.len() < n_folds {
            return Err(DecoderError::TooFewSentences {
                have: ids.len(),
                need: n_folds,
            });
        }
        ids.shuffle(&mut rng_for(seed, &[0]));
        let fold_of: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &s)| (s, i % n_folds)).collect();
        let folds = (0..n_folds)
            .map(|f| {
                let val: Vec<usize> = (0..groups.len()).filter(|&r| fold_of[&groups[r]] == f).collect();
                if val.len() < 2 {
                    return Err(DecoderError::TooFewRows(val.len()));
                }
                let pairs = random_pairing(val.len(), &mut rng_for(seed, &[1, f as u64]));
                Ok(InnerFold {
                    q_val: q.select_rows(&val),
                    val,
                    pairs,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GroupCv { folds })
    }

    /// Mean validation 2-vs-2 accuracy for each λ of `grid`; `c` is QᵀY.
    fn scores(&self, q: &DMatrix<f64>, evals: &DVector<f64>, y: &DMatrix<f64>, c: &DMatrix<f64>, grid: &[f64]) -> Result<Vec<f64>, DecoderError> {
        grid.iter()
            .map(|&lambda| {
                let mut scaled = c.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row /= evals[i] + lambda;
                }
                let alpha = q * scaled;
                let mut total = 0.0;
                for fold in &self.folds {
                    let h = shrunk(&fold.q_val, evals, lambda) * fold.q_val.transpose();
                    let chol = Cholesky::new(h).ok_or(DecoderError::Singular(lambda))?;
                    let pred = y.select_rows(&fold.val) - chol.solve(&alpha.select_rows(&fold.val));
                    total += two_vs_two_paired(&y.select_rows(&fold.val), &pred, &fold.pairs)?.accuracy;
                }
                Ok(total / self.folds.len() as f64)
            })
            .collect()
    }
}

/// `a · bᵀ` without materializing the transpose.
fn mul_transposed(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let (m, k, n) = (a.nrows(), a.ncols(), b.nrows());
    let mut out = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: the pointers cover column-major buffers of exactly these
    // shapes and strides; `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    out
}

/// `aᵀ · b` through the blocked product.
fn transposed_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

/// `m · diag(1 / (evals + λ))`
fn shrunk(m: &DMatrix<f64>, evals: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col /= evals[j] + lambda;
    }
    out
}

/// Best grid value; ties go to the larger λ.
fn pick(grid: &[f64], scores: &[f64]) -> f64 {
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (&l, &s) in grid.iter().zip(scores) {
        if s > best.1 || (s == best.1 && l > best.0) {
            best = (l, s);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSweep {
    pub best: f64,
    /// (λ, mean validation 2-vs-2 accuracy)
    pub scores: Vec<(f64, f64)>,
}

/// Selects λ from `grid` by sentence-grouped `folds`-fold cross-validation
/// on (already standardized) `x`, `y`.
pub fn sweep_lambda(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    keys: &[RowKey],
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LambdaSweep, DecoderError> {
    if x.nrows() != y.nrows() || x.nrows() != keys.len() {
        return Err(DecoderError::ShapeMismatch(format!("{} / {} / {} rows", x.nrows(), y.nrows(), keys.len())));
    }
    if grid.is_empty() {
        return Err(DecoderError::Config("lambda grid is empty".into()));
    }
    let groups: Vec<u32> = keys.iter().map(|k| k.0).collect();
    let eig = SymmetricEigen::new(mul_transposed(x, x));
    let cv = GroupCv::new(&eig.eigenvectors, &groups, folds, seed)?;
    let c = transposed_mul(&eig.eigenvectors, y);
    let scores = cv.scores(&eig.eigenvectors, &eig.eigenvalues, y, &c, grid)?;
    Ok(LambdaSweep {
        best: pick(grid, &scores),
        scores: grid.iter().copied().zip(scores).collect(),
    })
}

/// Everything in one trial that depends only on the EEG features.
pub struct TrialKernel {
    pub trial: usize,
    pub split: Split,
    cv: GroupCv,
    q: DMatrix<f64>,
    evals: DVector<f64>,
    /// K_test,train Q
    kq_test: DMatrix<f64>,
    test_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub lambda: f64,
    pub acc_2v2: f64,
    pub mse: f64,
    pub cv_scores: Vec<f64>,
}

impl TrialKernel {
    /// Training rows come from `x_train`, test rows from `x_test` (the same
    /// matrix except when EEG is swapped at test time). Features are
    /// standardized with training-row statistics; the inner folds reuse
    /// them.
    pub fn build(x_train: &DMatrix<f64>, x_test: &DMatrix<f64>, keys: &[RowKey], cfg: &McConfig, trial: usize) -> Result<Self, DecoderError> {
        let split = split_for_trial(keys, cfg, trial)?;
        let stats = Standardization::fit_rows(x_train, &split.train);
        let z_train = stats.apply_rows(x_train, &split.train)?;
        let z_test = stats.apply_rows(x_test, &split.test)?;
        let k = mul_transposed(&z_train, &z_train);
        let k_test = mul_transposed(&z_test, &z_train);
        let groups: Vec<u32> = split.train.iter().map(|&r| keys[r].0).collect();
        let eig = SymmetricEigen::new(k);
        let cv = GroupCv::new(&eig.eigenvectors, &groups, cfg.inner_folds, derive_seed(cfg.seed, &[trial as u64, 1]))?;
        let kq_test = k_test * &eig.eigenvectors;
        let test_pairs = random_pairing(split.test.len(), &mut rng_for(cfg.seed, &[trial as u64, 2]));
        if test_pairs.is_empty() {
            return Err(DecoderError::TooFewRows(split.test.len()));
        }
        Ok(TrialKernel {
            trial,
            split,
            cv,
            q: eig.eigenvectors,
            evals: eig.eigenvalues,
            kq_test,
            test_pairs,
        })
    }

    /// Selects λ on the training rows of `y_train`, fits, and scores the
    /// test rows of `y_test` (both full n × P matrices).
    pub fn evaluate(&self, y_train: &DMatrix<f64>, y_test: &DMatrix<f64>, cfg: &McConfig) -> Result<TrialOutcome, DecoderError> {
        let (y_tr, y_te) = if cfg.standardize_y {
            let stats = Standardization::fit_rows(y_train, &self.split.train);
            (stats.apply_rows(y_train, &self.split.train)?, stats.apply_rows(y_test, &self.split.test)?)
        } else {
            (y_train.select_rows(&self.split.train), y_test.select_rows(&self.split.test))
        };
        let c = transposed_mul(&self.q, &y_tr);
        let cv_scores = self.cv.scores(&self.q, &self.evals, &y_tr, &c, &cfg.lambda_grid)?;
        let lambda = pick(&cfg.lambda_grid, &cv_scores);
        let pred = shrunk(&self.kq_test, &self.evals, lambda) * c;
        Ok(TrialOutcome {
            lambda,
            acc_2v2: two_vs_two_paired(&y_te, &pred, &self.test_pairs)?.accuracy,
            mse: mse(&y_te, &pred)?,
            cv_scores,
        })
    }
}

fn same_keys(train: &DecodingDataset, test: &DecodingDataset) -> Result<(), DecoderError> {
    if train.keys != test.keys || train.y.ncols() != test.y.ncols() || train.x.ncols() != test.x.ncols() {
        return Err(DecoderError::MissingAlignment {
            a: train.eeg_condition,
            b: test.eeg_condition,
        });
    }
    Ok(())
}

/// Monte-Carlo cross-validation with training rows from `train` and test
/// rows from `test`. Trials run in parallel; records are in trial order.
pub fn mc_cross_validate_pair(train: &DecodingDataset, test: &DecodingDataset, cfg: &McConfig) -> Result<Vec<TrialRecord>, DecoderError> {
    cfg.validate()?;
    same_keys(train, test)?;
    (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let kernel = TrialKernel::build(&train.x, &test.x, &train.keys, cfg, trial)?;
            let out = kernel.evaluate(&train.y, &test.y, cfg)?;
            Ok(TrialRecord {
                trial,
                lambda: out.lambda,
                acc_2v2: out.acc_2v2,
                mse: out.mse,
            })
        })
        .collect()
}

pub fn mc_cross_validate(dataset: &DecodingDataset, cfg: &McConfig) -> Result<Vec<TrialRecord>, DecoderError> {
    mc_cross_validate_pair(dataset, dataset, cfg)
}

pub(crate) fn check_pair(train: &DecodingDataset, test: &DecodingDataset) -> Result<(), DecoderError> {
    same_keys(train, test)
}
