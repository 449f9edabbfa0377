//! Evaluation statistics: cosine 2-vs-2 test, MSE, permutation nulls,
//! p-values and false-discovery-rate control.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{null_pair, DecoderError, DecodingDataset, McConfig};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("2-vs-2 test needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("p-value {value} at position {index} is outside [0, 1]")]
    InvalidPValue { index: usize, value: f64 },
    #[error("null distribution is empty")]
    EmptyNull,
    #[error("{requested} permutations requested, at least {min} required")]
    TooFewPermutations { requested: usize, min: usize },
    #[error("no non-identity permutation exists at {0} granularity")]
    NoPermutation(Granularity),
    #[error("null distribution file {path}: {message}")]
    Format { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `u·v / (‖u‖‖v‖)`, or 0 when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairResult {
    Pass,
    Tie,
    Fail,
}

/// One 2-vs-2 test: matched cosine sum against mismatched cosine sum.
/// Returns the result and whether a zero vector was involved.
pub fn two_vs_two_test(yi: &[f64], yj: &[f64], pi: &[f64], pj: &[f64]) -> (PairResult, bool) {
    let zero = [yi, yj, pi, pj].iter().any(|v| v.iter().all(|x| *x == 0.0));
    let matched = cosine(yi, pi) + cosine(yj, pj);
    let mismatched = cosine(yi, pj) + cosine(yj, pi);
    let r = if matched > mismatched {
        PairResult::Pass
    } else if matched == mismatched {
        PairResult::Tie
    } else {
        PairResult::Fail
    };
    (r, zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoVsTwoOutcome {
    pub n_tests: usize,
    pub n_pass: usize,
    pub n_ties: usize,
    pub accuracy: f64,
    /// Tests in which some vector was all zeros (cosine taken as 0).
    pub n_zero_vectors: usize,
}

impl TwoVsTwoOutcome {
    fn from_results(results: impl Iterator<Item = (PairResult, bool)>) -> Self {
        let (mut n_tests, mut n_pass, mut n_ties, mut n_zero_vectors) = (0, 0, 0, 0);
        for (r, zero) in results {
            n_tests += 1;
            match r {
                PairResult::Pass => n_pass += 1,
                PairResult::Tie => n_ties += 1,
                PairResult::Fail => {}
            }
            n_zero_vectors += usize::from(zero);
        }
        TwoVsTwoOutcome {
            n_tests,
            n_pass,
            n_ties,
            accuracy: (n_pass as f64 + 0.5 * n_ties as f64) / n_tests as f64,
            n_zero_vectors,
        }
    }
}

/// 2-vs-2 over explicit index-aligned pairs.
pub fn two_vs_two(true_pairs: &[(&[f64], &[f64])], pred_pairs: &[(&[f64], &[f64])]) -> Result<TwoVsTwoOutcome, StatsError> {
    if true_pairs.len() != pred_pairs.len() {
        return Err(StatsError::ShapeMismatch(format!("{} true pairs vs {} predicted", true_pairs.len(), pred_pairs.len())));
    }
    if true_pairs.is_empty() {
        return Err(StatsError::TooFewRows(0));
    }
    Ok(TwoVsTwoOutcome::from_results(
        true_pairs.iter().zip(pred_pairs).map(|((yi, yj), (pi, pj))| two_vs_two_test(yi, yj, pi, pj)),
    ))
}

/// Random disjoint pairing of `0..n` (one index is left out when `n` is odd).
pub fn random_pairing<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// 2-vs-2 accuracy over the rows of `y` / `y_hat`, paired by a random
/// disjoint pairing drawn from `rng`.
pub fn two_vs_two_rows<R: Rng + ?Sized>(y: &DMatrix<f64>, y_hat: &DMatrix<f64>, rng: &mut R) -> Result<TwoVsTwoOutcome, StatsError> {
    let pairs = random_pairing(y.nrows(), rng);
    two_vs_two_paired(y, y_hat, &pairs)
}

/// 2-vs-2 accuracy over the given row pairs.
pub fn two_vs_two_paired(y: &DMatrix<f64>, y_hat: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Result<TwoVsTwoOutcome, StatsError> {
    if y.shape() != y_hat.shape() {
        return Err(StatsError::ShapeMismatch(format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    if y.nrows() < 2 || pairs.is_empty() {
        return Err(StatsError::TooFewRows(y.nrows()));
    }
    // Rows become contiguous columns.
    let yt = y.transpose();
    let pt = y_hat.transpose();
    let p = y.ncols();
    fn row(m: &DMatrix<f64>, i: usize, p: usize) -> &[f64] {
        &m.as_slice()[i * p..(i + 1) * p]
    }
    Ok(TwoVsTwoOutcome::from_results(
        pairs
            .iter()
            .map(|&(i, j)| two_vs_two_test(row(&yt, i, p), row(&yt, j, p), row(&pt, i, p), row(&pt, j, p))),
    ))
}

/// Mean squared error over all entries.
pub fn mse(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<f64, StatsError> {
    if y.shape() != y_hat.shape() {
        return Err(StatsError::ShapeMismatch(format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(y.iter().zip(y_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// `(1 + #{null ≥ observed}) / (1 + |null|)`.
pub fn p_value(observed: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&v| v >= observed).count();
    (1 + hits) as f64 / (1 + null.len()) as f64
}

/// Lower-tail counterpart of [`p_value`] for error metrics such as MSE.
pub fn p_value_lower(observed: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&v| v <= observed).count();
    (1 + hits) as f64 / (1 + null.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdrResult {
    /// Rejection flags in input order.
    pub reject: Vec<bool>,
    /// k*: the number of rejected hypotheses.
    pub n_rejected: usize,
    /// p-value cutoff at k*, if any hypothesis is rejected.
    pub threshold: Option<f64>,
}

fn step_up(pvals: &[f64], alpha: f64, dependence: f64) -> Result<FdrResult, StatsError> {
    for (index, &value) in pvals.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(StatsError::InvalidPValue { index, value });
        }
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let cut = |i: usize| alpha * i as f64 / (m as f64 * dependence);
    let k = (1..=m).rev().find(|&i| pvals[order[i - 1]] <= cut(i)).unwrap_or(0);
    let mut reject = vec![false; m];
    for &o in &order[..k] {
        reject[o] = true;
    }
    Ok(FdrResult {
        reject,
        n_rejected: k,
        threshold: (k > 0).then(|| cut(k)),
    })
}

/// Benjamini–Hochberg–Yekutieli step-up with `c(m) = Σ_{k≤m} 1/k`.
pub fn fdr_by(pvals: &[f64], alpha: f64) -> Result<FdrResult, StatsError> {
    let c: f64 = (1..=pvals.len()).map(|k| 1.0 / k as f64).sum();
    step_up(pvals, alpha, c.max(1.0))
}

/// Plain Benjamini–Hochberg step-up.
pub fn fdr_bh(pvals: &[f64], alpha: f64) -> Result<FdrResult, StatsError> {
    step_up(pvals, alpha, 1.0)
}

/// Unit at which representations are shuffled against the EEG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Whole sentences are exchanged among sentences with the same number
    /// of content words, keeping word positions.
    #[default]
    Sentence,
    /// Individual rows are shuffled.
    Word,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Sentence => "sentence",
            Granularity::Word => "word",
        })
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentence" => Ok(Granularity::Sentence),
            "word" => Ok(Granularity::Word),
            _ => Err(format!("unknown granularity {s:?}")),
        }
    }
}

/// Row permutation `perm` (row `r` receives the representation of row
/// `perm[r]`) for data keyed by `(sentence_id, word_index)`. The identity is
/// never returned.
pub fn draw_permutation<R: Rng + ?Sized>(keys: &[(u32, usize)], granularity: Granularity, rng: &mut R) -> Result<Vec<usize>, StatsError> {
    let n = keys.len();
    match granularity {
        Granularity::Word => {
            if n < 2 {
                return Err(StatsError::NoPermutation(granularity));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                perm.shuffle(rng);
                if perm.iter().enumerate().any(|(i, &p)| i != p) {
                    return Ok(perm);
                }
            }
        }
        Granularity::Sentence => {
            let mut rows: BTreeMap<u32, BTreeMap<usize, usize>> = BTreeMap::new();
            for (r, &(s, w)) in keys.iter().enumerate() {
                rows.entry(s).or_default().insert(w, r);
            }
            let mut groups: BTreeMap<Vec<usize>, Vec<u32>> = BTreeMap::new();
            for (s, words) in &rows {
                groups.entry(words.keys().copied().collect()).or_default().push(*s);
            }
            if groups.values().all(|g| g.len() < 2) {
                return Err(StatsError::NoPermutation(granularity));
            }
            loop {
                let mut perm = vec![0; n];
                let mut moved = false;
                for ids in groups.values() {
                    let mut shuffled = ids.clone();
                    shuffled.shuffle(rng);
                    moved |= shuffled != *ids;
                    for (dst, src) in ids.iter().zip(&shuffled) {
                        for (w, &r) in &rows[dst] {
                            perm[r] = rows[src][w];
                        }
                    }
                }
                if moved {
                    return Ok(perm);
                }
            }
        }
    }
}

/// Default minimum size of a null distribution.
pub const MIN_PERMUTATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub values: Vec<f64>,
    pub seed: u64,
    pub granularity: Granularity,
}

impl NullDistribution {
    pub fn new(values: Vec<f64>, seed: u64, granularity: Granularity, min: usize) -> Result<Self, StatsError> {
        if values.len() < min {
            return Err(StatsError::TooFewPermutations {
                requested: values.len(),
                min,
            });
        }
        Ok(NullDistribution { values, seed, granularity })
    }

    pub fn p_value(&self, observed: f64) -> Result<f64, StatsError> {
        if self.values.is_empty() {
            return Err(StatsError::EmptyNull);
        }
        Ok(p_value(observed, &self.values))
    }

    /// `# seed=<s> granularity=<g>` followed by one value per line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={} granularity={}\n", self.seed, self.granularity);
        for v in &self.values {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), StatsError> {
        fs::write(path, self.to_csv()).map_err(|source| StatsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, StatsError> {
        let text = fs::read_to_string(path).map_err(|source| StatsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |message: String| StatsError::Format {
            path: path.display().to_string(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad("missing header".into()))?;
        let (mut seed, mut granularity) = (None, None);
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("granularity", v)) => granularity = v.parse().ok(),
                _ => {}
            }
        }
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("{l:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NullDistribution {
            values,
            seed: seed.ok_or_else(|| bad("header lacks seed".into()))?,
            granularity: granularity.ok_or_else(|| bad("header lacks granularity".into()))?,
        })
    }
}

/// Null distribution of mean 2-vs-2 accuracy for `dataset`: for each of
/// `n_perms` permutations (never the identity) the representations are
/// shuffled at `granularity` and the full Monte-Carlo cross-validation is
/// rerun. `min` is the smallest acceptable distribution size
/// ([`MIN_PERMUTATIONS`] by default).
pub fn permutation_null(
    dataset: &DecodingDataset,
    cfg: &McConfig,
    n_perms: usize,
    granularity: Granularity,
    min: usize,
) -> Result<NullDistribution, DecoderError> {
    if n_perms < min {
        return Err(StatsError::TooFewPermutations { requested: n_perms, min }.into());
    }
    let summary = null_pair(dataset, dataset, cfg, n_perms, granularity)?;
    Ok(NullDistribution::new(summary.acc_2v2, cfg.seed, granularity, min)?)
}
