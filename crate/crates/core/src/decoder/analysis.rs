use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{check_pair, TrialKernel};
use super::{mc_cross_validate_pair, DecoderError, DecodingDataset, McConfig, RowKey, TrialRecord};
use crate::charlm::{Layer, LayerActivations};
use crate::eeg::{feature_matrix, word_features, EegEpoch};
use crate::seeding::{derive_seed, rng_for};
use crate::stats::{draw_permutation, Granularity};
use crate::stimuli::{Condition, Corpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Analysis {
    A1,
    A2,
    A3,
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Analysis::A1 => "A1",
            Analysis::A2 => "A2",
            Analysis::A3 => "A3",
        })
    }
}

impl FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(Analysis::A1),
            "A2" => Ok(Analysis::A2),
            "A3" => Ok(Analysis::A3),
            _ => Err(format!("unknown analysis {s:?}")),
        }
    }
}

/// Which condition supplies EEG and representations at train and test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnalysisCase {
    pub analysis: Analysis,
    pub case_no: u8,
    pub train_eeg: Condition,
    pub train_rep: Condition,
    pub test_eeg: Condition,
    pub test_rep: Condition,
}

impl AnalysisCase {
    const fn row(analysis: Analysis, case_no: u8, c: [Condition; 4]) -> Self {
        AnalysisCase {
            analysis,
            case_no,
            train_eeg: c[0],
            train_rep: c[1],
            test_eeg: c[2],
            test_rep: c[3],
        }
    }

    /// The seven cases, in table order.
    pub fn all() -> [AnalysisCase; 7] {
        use Analysis::*;
        use Condition::{Jabberwocky as Jab, Sentence as Sen, WordList as Wl};
        [
            Self::row(A1, 1, [Sen, Sen, Sen, Sen]),
            Self::row(A1, 2, [Jab, Jab, Jab, Jab]),
            Self::row(A1, 3, [Wl, Wl, Wl, Wl]),
            Self::row(A2, 1, [Sen, Jab, Sen, Jab]),
            Self::row(A2, 2, [Jab, Sen, Jab, Sen]),
            Self::row(A3, 1, [Sen, Sen, Jab, Sen]),
            Self::row(A3, 2, [Jab, Jab, Sen, Jab]),
        ]
    }

    pub fn get(analysis: Analysis, case_no: u8) -> Option<Self> {
        Self::all().into_iter().find(|c| c.analysis == analysis && c.case_no == case_no)
    }

    /// `A<k>.<case>`
    pub fn id(&self) -> String {
        format!("{}.{}", self.analysis, self.case_no)
    }

    /// e.g. `train Sen/Sen, test Jab/Sen` (EEG/representation).
    pub fn description(&self) -> String {
        format!(
            "train {}/{}, test {}/{}",
            self.train_eeg.short(),
            self.train_rep.short(),
            self.test_eeg.short(),
            self.test_rep.short()
        )
    }

    /// Parses `A1.2`, or `A1` for all cases of an analysis.
    pub fn parse_selection(s: &str) -> Result<Vec<AnalysisCase>, String> {
        match s.split_once('.') {
            Some((a, c)) => {
                let analysis: Analysis = a.parse()?;
                let case_no: u8 = c.parse().map_err(|_| format!("bad case number in {s:?}"))?;
                Self::get(analysis, case_no).map(|c| vec![c]).ok_or_else(|| format!("no case {s}"))
            }
            None => {
                let analysis: Analysis = s.parse()?;
                Ok(Self::all().into_iter().filter(|c| c.analysis == analysis).collect())
            }
        }
    }
}

/// EEG features and representations of one condition, rows aligned by key.
#[derive(Debug, Clone)]
pub struct ConditionBlock {
    pub keys: Vec<RowKey>,
    pub eeg: Arc<DMatrix<f64>>,
    pub reps: Arc<DMatrix<f64>>,
}

/// Per-condition inputs for one representation layer.
#[derive(Debug, Clone, Default)]
pub struct AnalysisData {
    pub conditions: BTreeMap<Condition, ConditionBlock>,
}

impl AnalysisData {
    fn block(&self, c: Condition) -> Result<&ConditionBlock, DecoderError> {
        self.conditions.get(&c).ok_or(DecoderError::MissingCondition(c))
    }

    fn dataset(&self, eeg: Condition, rep: Condition) -> Result<DecodingDataset, DecoderError> {
        let e = self.block(eeg)?;
        let r = self.block(rep)?;
        if e.keys != r.keys {
            return Err(DecoderError::MissingAlignment { a: eeg, b: rep });
        }
        DecodingDataset::new(e.eeg.clone(), r.reps.clone(), e.keys.clone(), eeg, rep)
    }

    /// One `AnalysisData` per layer from subject-averaged epochs and
    /// content-word activations, sharing the EEG matrices. Conditions
    /// missing from `averaged` are skipped.
    pub fn for_layers(
        averaged: &[EegEpoch],
        corpus: &Corpus,
        reps: &BTreeMap<(Condition, u32), Vec<LayerActivations>>,
        layers: &[Layer],
        window_ms: f64,
    ) -> Result<BTreeMap<Layer, AnalysisData>, DecoderError> {
        let mut out: BTreeMap<Layer, AnalysisData> = layers.iter().map(|&l| (l, AnalysisData::default())).collect();
        for c in Condition::ALL {
            if !averaged.iter().any(|e| e.condition == c) {
                continue;
            }
            let features = word_features(averaged, corpus, c, window_ms)?;
            let keys: Vec<RowKey> = features.iter().map(|f| (f.sentence_id, f.word_index)).collect();
            let eeg = Arc::new(feature_matrix(&features)?);
            for (&layer, data) in out.iter_mut() {
                let rows = keys
                    .iter()
                    .map(|&(id, k)| {
                        reps.get(&(c, id))
                            .and_then(|v| v.get(k))
                            .map(|a| a.get(layer))
                            .ok_or_else(|| DecoderError::ShapeMismatch(format!("no {layer} activation for {c} sentence {id} word {k}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let p = rows.first().map_or(0, |r| r.len());
                let m = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
                data.conditions.insert(
                    c,
                    ConditionBlock {
                        keys: keys.clone(),
                        eeg: eeg.clone(),
                        reps: Arc::new(m),
                    },
                );
            }
        }
        Ok(out)
    }

    /// Training and test datasets of `case`.
    pub fn datasets(&self, case: &AnalysisCase) -> Result<(DecodingDataset, DecodingDataset), DecoderError> {
        let train = self.dataset(case.train_eeg, case.train_rep)?;
        let test = self.dataset(case.test_eeg, case.test_rep)?;
        check_pair(&train, &test)?;
        Ok((train, test))
    }
}

/// Per-trial records of one analysis case. Splits depend only on the
/// sentence ids, so paired conditions share them within a trial.
pub fn run_analysis(case: &AnalysisCase, data: &AnalysisData, cfg: &McConfig) -> Result<Vec<TrialRecord>, DecoderError> {
    let (train, test) = data.datasets(case)?;
    mc_cross_validate_pair(&train, &test, cfg)
}

/// Per-permutation means over the Monte-Carlo trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullSummary {
    pub acc_2v2: Vec<f64>,
    pub mse: Vec<f64>,
}

pub(crate) fn null_pair(
    train: &DecodingDataset,
    test: &DecodingDataset,
    cfg: &McConfig,
    n_perms: usize,
    granularity: Granularity,
) -> Result<NullSummary, DecoderError> {
    cfg.validate()?;
    check_pair(train, test)?;
    let perm_seed = derive_seed(cfg.seed, &[0x9e11]);
    let perms = (0..n_perms)
        .map(|p| draw_permutation(&train.keys, granularity, &mut rng_for(perm_seed, &[p as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    let shared = Arc::ptr_eq(&train.y, &test.y);
    let per_trial = (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let kernel = TrialKernel::build(&train.x, &test.x, &train.keys, cfg, trial)?;
            perms
                .iter()
                .map(|perm| {
                    let y_train = train.y.select_rows(perm);
                    let out = if shared {
                        kernel.evaluate(&y_train, &y_train, cfg)?
                    } else {
                        kernel.evaluate(&y_train, &test.y.select_rows(perm), cfg)?
                    };
                    Ok((out.acc_2v2, out.mse))
                })
                .collect::<Result<Vec<_>, DecoderError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = cfg.n_trials as f64;
    let mean = |f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        (0..n_perms).map(|p| per_trial.iter().map(|t| f(&t[p])).sum::<f64>() / n).collect()
    };
    Ok(NullSummary {
        acc_2v2: mean(|t| t.0),
        mse: mean(|t| t.1),
    })
}

/// Null distribution of mean accuracy and MSE for `case`: representations
/// are permuted against the EEG and the whole cross-validation (λ sweep
/// included) is rerun. Kernels are built once per trial and shared across
/// permutations; the same permutation is applied to training and test
/// representations.
pub fn run_permutation_null(
    case: &AnalysisCase,
    data: &AnalysisData,
    cfg: &McConfig,
    n_perms: usize,
    granularity: Granularity,
) -> Result<NullSummary, DecoderError> {
    let (train, test) = data.datasets(case)?;
    null_pair(&train, &test, cfg, n_perms, granularity)
}
