use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use eegdecode::decoder::*;
use eegdecode::eeg::Standardization;
use eegdecode::seeding::rng_for;
use eegdecode::stats::mse;
use eegdecode::Condition::{self, Jabberwocky as Jab, Sentence as Sen, WordList as Wl};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn keys(sentences: u32, words: usize) -> Vec<RowKey> {
    (1..=sentences).flat_map(|s| (0..words).map(move |w| (s, w))).collect()
}

#[test]
fn primal_and_dual_agree() {
    let mut rng = rng_for(1, &[]);
    for (n, d) in [(20, 50), (50, 20), (30, 30), (8, 200)] {
        let x = gaussian(n, d, &mut rng);
        let y = gaussian(n, 4, &mut rng);
        for lambda in [0.1, 1.0, 200.0] {
            let p = fit_ridge_primal(&x, &y, lambda).unwrap();
            let q = fit_ridge_dual(&x, &y, lambda).unwrap();
            assert!((p.beta - q.beta).amax() <= 1e-8, "{n}x{d} λ={lambda}");
        }
    }
}

/// Gradient descent on ‖Xβ − Y‖² + λ‖β‖² from β = 0.
fn gradient_descent(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let lipschitz = (x.transpose() * x).symmetric_eigenvalues().max() + lambda;
    let step = 1.0 / lipschitz;
    let mut beta = DMatrix::zeros(x.ncols(), y.ncols());
    for _ in 0..20_000 {
        let grad = x.tr_mul(&(x * &beta - y)) + &beta * lambda;
        beta -= grad * step;
    }
    beta
}

#[test]
fn closed_form_matches_gradient_descent() {
    let mut rng = rng_for(2, &[]);
    for _ in 0..3 {
        let x = gaussian(20, 50, &mut rng);
        let y = gaussian(20, 3, &mut rng);
        let model = fit_ridge(&x, &y, 1.0).unwrap();
        let oracle = gradient_descent(&x, &y, 1.0);
        assert!((model.beta - oracle).amax() <= 1e-6);
    }
}

#[test]
fn vanishing_lambda_interpolates() {
    let mut rng = rng_for(3, &[]);
    let q = gaussian(12, 12, &mut rng).qr().q();
    let y = gaussian(12, 3, &mut rng);
    let model = fit_ridge(&q, &y, 1e-10).unwrap();
    assert!((predict(&model, &q).unwrap() - &y).amax() <= 1e-6);
}

#[test]
fn huge_lambda_shrinks_to_zero() {
    let mut rng = rng_for(4, &[]);
    let x = gaussian(20, 50, &mut rng);
    let y = gaussian(20, 3, &mut rng);
    let model = fit_ridge(&x, &y, 1e12).unwrap();
    assert!(model.beta.norm() < 1e-6 * x.tr_mul(&y).norm());
}

#[test]
fn ridge_preconditions() {
    let x = DMatrix::from_element(1, 3, 1.0);
    let y = DMatrix::from_element(1, 2, 1.0);
    assert!(matches!(fit_ridge(&x, &y, 1.0), Err(DecoderError::TooFewRows(1))));
    let x = DMatrix::from_element(4, 3, 1.0);
    assert!(matches!(fit_ridge(&x, &DMatrix::zeros(3, 2), 1.0), Err(DecoderError::ShapeMismatch(_))));
    assert!(matches!(fit_ridge(&x, &DMatrix::zeros(4, 2), 0.0), Err(DecoderError::Config(_))));
    let model = fit_ridge(&x, &DMatrix::zeros(4, 2), 1.0).unwrap();
    assert!(matches!(predict(&model, &DMatrix::zeros(2, 5)), Err(DecoderError::ShapeMismatch(_))));
}

proptest! {
    #[test]
    fn predict_is_linear(seed in any::<u64>(), c in -5.0f64..5.0) {
        let mut rng = rng_for(seed, &[]);
        let x = gaussian(10, 15, &mut rng);
        let y = gaussian(10, 2, &mut rng);
        let model = fit_ridge(&x, &y, 1.0).unwrap();
        let probe = gaussian(4, 15, &mut rng);
        let base = predict(&model, &probe).unwrap();
        prop_assert!((predict(&model, &(&probe * 2.0)).unwrap() - &base * 2.0).amax() < 1e-12);
        prop_assert!((predict(&model, &(&probe * c)).unwrap() - &base * c).amax() < 1e-10);
        prop_assert_eq!(predict(&model, &DMatrix::zeros(3, 15)).unwrap(), DMatrix::zeros(3, 2));
    }
}

#[test]
fn standardized_model_applies_training_statistics() {
    let mut rng = rng_for(5, &[]);
    let x = gaussian(30, 8, &mut rng).add_scalar(3.0);
    let y = gaussian(30, 2, &mut rng);
    let model = fit_ridge_standardized(&x, &y, 0.5).unwrap();
    let stats = Standardization::fit(&x);
    let direct = stats.apply(&x).unwrap() * &model.beta;
    assert_eq!(predict(&model, &x).unwrap(), direct);
}

#[test]
fn singleton_grid_is_returned() {
    let mut rng = rng_for(6, &[]);
    let k = keys(10, 3);
    let x = gaussian(30, 20, &mut rng);
    let y = gaussian(30, 2, &mut rng);
    let sweep = sweep_lambda(&x, &y, &k, &[7.0], 5, 0).unwrap();
    assert_eq!(sweep.best, 7.0);
    assert_eq!(sweep.scores.len(), 1);
}

#[test]
fn sweep_prefers_small_lambda_on_planted_data() {
    let mut rng = rng_for(7, &[]);
    let k = keys(30, 4);
    let y = gaussian(120, 3, &mut rng);
    let x = &y * gaussian(3, 40, &mut rng);
    let grid = default_lambda_grid();
    let sweep = sweep_lambda(&x, &y, &k, &grid, 5, 1).unwrap();
    let smallest = sweep.scores[0].1;
    assert!(sweep.scores.iter().all(|&(_, s)| smallest >= s), "{:?}", sweep.scores);
    assert!(grid.contains(&sweep.best));
}

#[test]
fn sweep_is_total_on_noise() {
    let mut rng = rng_for(8, &[]);
    let k = keys(12, 5);
    let x = gaussian(60, 30, &mut rng);
    let y = gaussian(60, 4, &mut rng);
    let grid = default_lambda_grid();
    let a = sweep_lambda(&x, &y, &k, &grid, 5, 3).unwrap();
    assert!(grid.contains(&a.best));
    assert_eq!(a, sweep_lambda(&x, &y, &k, &grid, 5, 3).unwrap());
    assert!(matches!(sweep_lambda(&x, &y, &k[..12], &grid, 5, 3), Err(DecoderError::ShapeMismatch(_))));
    let few = keys(4, 15);
    assert!(matches!(sweep_lambda(&x, &y, &few, &grid, 5, 3), Err(DecoderError::TooFewSentences { .. })));
}

#[test]
fn default_grid_spans_the_range() {
    let grid = default_lambda_grid();
    assert_eq!(grid.len(), 12);
    assert_eq!((grid[0], grid[11]), (0.1, 200.0));
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
    let ratios: Vec<f64> = grid.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
}

#[test]
fn config_validation() {
    assert!(McConfig::default().validate().is_ok());
    for bad in [
        McConfig { n_trials: 0, ..Default::default() },
        McConfig { test_fraction: 1.0, ..Default::default() },
        McConfig { lambda_grid: vec![], ..Default::default() },
        McConfig { lambda_grid: vec![0.01], ..Default::default() },
        McConfig { lambda_grid: vec![500.0], ..Default::default() },
        McConfig { inner_folds: 1, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(DecoderError::Config(_))), "{bad:?}");
    }
}

#[test]
fn dataset_invariants() {
    let x = Arc::new(DMatrix::zeros(4, 3));
    let y = Arc::new(DMatrix::zeros(4, 2));
    assert!(DecodingDataset::new(x.clone(), y.clone(), keys(2, 2), Sen, Sen).is_ok());
    assert!(matches!(DecodingDataset::new(x.clone(), y.clone(), keys(1, 2), Sen, Sen), Err(DecoderError::ShapeMismatch(_))));
    let mut bad = DMatrix::zeros(4, 2);
    bad[(1, 1)] = f64::NAN;
    assert!(matches!(DecodingDataset::new(x, Arc::new(bad), keys(2, 2), Sen, Sen), Err(DecoderError::NonFinite(_))));
}

fn mc_cfg(n_trials: usize) -> McConfig {
    McConfig {
        n_trials,
        seed: 5,
        ..McConfig::default()
    }
}

#[test]
fn splits_are_sentence_disjoint_and_deterministic() {
    let k = keys(80, 8);
    let cfg = mc_cfg(200);
    for trial in 0..200 {
        let s = split_for_trial(&k, &cfg, trial).unwrap();
        assert_eq!(s.test_sentences.len(), 8);
        let train: BTreeSet<u32> = s.train.iter().map(|&r| k[r].0).collect();
        let test: BTreeSet<u32> = s.test.iter().map(|&r| k[r].0).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(test, s.test_sentences.iter().copied().collect());
        assert_eq!(s.train.len() + s.test.len(), k.len());
        assert_eq!(s, split_for_trial(&k, &cfg, trial).unwrap());
    }
    let a = split_for_trial(&k, &cfg, 0).unwrap();
    let b = split_for_trial(&k, &mc_cfg(200), 1).unwrap();
    assert_ne!(a.test_sentences, b.test_sentences);
}

#[test]
fn splits_depend_only_on_sentence_ids() {
    let cfg = mc_cfg(1);
    let a = split_for_trial(&keys(20, 3), &cfg, 4).unwrap();
    let b = split_for_trial(&keys(20, 6), &cfg, 4).unwrap();
    assert_eq!(a.test_sentences, b.test_sentences);
}

/// `sentences` × `words` rows, Y (P = 4) planted noiselessly in X (D = 60).
fn planted(sentences: u32, words: usize, seed: u64) -> DecodingDataset {
    let k = keys(sentences, words);
    let mut rng = rng_for(seed, &[]);
    let y = gaussian(k.len(), 4, &mut rng);
    let x = &y * gaussian(4, 60, &mut rng);
    DecodingDataset::new(Arc::new(x), Arc::new(y), k, Sen, Sen).unwrap()
}

#[test]
fn monte_carlo_records() {
    let data = planted(40, 5, 9);
    let cfg = mc_cfg(200);
    let records = mc_cross_validate(&data, &cfg).unwrap();
    assert_eq!(records.len(), 200);
    assert!(records.iter().enumerate().all(|(i, r)| r.trial == i));
    assert!(records.iter().all(|r| cfg.lambda_grid.contains(&r.lambda)));
    assert!(mean_accuracy(&records) >= 0.95);
    assert_eq!(records, mc_cross_validate(&data, &cfg).unwrap());
}

#[test]
fn single_trial_is_reproducible_in_isolation() {
    let data = planted(30, 4, 10);
    let cfg = mc_cfg(6);
    let all = mc_cross_validate(&data, &cfg).unwrap();
    let kernel = TrialKernel::build(&data.x, &data.x, &data.keys, &cfg, 4).unwrap();
    let out = kernel.evaluate(&data.y, &data.y, &cfg).unwrap();
    assert_eq!((out.lambda, out.acc_2v2, out.mse), (all[4].lambda, all[4].acc_2v2, all[4].mse));
}

#[test]
fn noise_decodes_at_chance() {
    let k = keys(60, 6);
    let mut rng = rng_for(11, &[]);
    let x = gaussian(k.len(), 80, &mut rng);
    let y = gaussian(k.len(), 4, &mut rng);
    let data = DecodingDataset::new(Arc::new(x), Arc::new(y), k, Sen, Sen).unwrap();
    let acc = mean_accuracy(&mc_cross_validate(&data, &mc_cfg(100)).unwrap());
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn test_rows_never_reach_the_fit() {
    let data = planted(30, 4, 12);
    let cfg = McConfig {
        standardize_y: false,
        ..mc_cfg(1)
    };
    let trial = 2;
    let split = split_for_trial(&data.keys, &cfg, trial).unwrap();
    let mut rng = rng_for(99, &[]);
    let (mut x2, mut y2) = ((*data.x).clone(), (*data.y).clone());
    let (d, p) = (x2.ncols(), y2.ncols());
    for &r in &split.test {
        x2.row_mut(r).copy_from(&gaussian(1, d, &mut rng));
        y2.row_mut(r).copy_from(&gaussian(1, p, &mut rng));
    }
    let clean = TrialKernel::build(&data.x, &data.x, &data.keys, &cfg, trial).unwrap().evaluate(&data.y, &data.y, &cfg).unwrap();
    let dirty = TrialKernel::build(&x2, &x2, &data.keys, &cfg, trial).unwrap().evaluate(&y2, &y2, &cfg).unwrap();
    assert_eq!(clean.cv_scores, dirty.cv_scores);
    assert_eq!(clean.lambda, dirty.lambda);

    // The kernel solution equals a direct fit on the training rows alone.
    let stats = Standardization::fit_rows(&x2, &split.train);
    let z_train = stats.apply_rows(&x2, &split.train).unwrap();
    let z_test = stats.apply_rows(&x2, &split.test).unwrap();
    let model = fit_ridge_dual(&z_train, &y2.select_rows(&split.train), dirty.lambda).unwrap();
    let pred = z_test * model.beta;
    let direct = mse(&y2.select_rows(&split.test), &pred).unwrap();
    assert!((direct - dirty.mse).abs() <= 1e-9 * direct.max(1.0));
}

#[test]
fn table_of_cases() {
    use Analysis::*;
    let expected = [
        (A1, 1, [Sen, Sen, Sen, Sen]),
        (A1, 2, [Jab, Jab, Jab, Jab]),
        (A1, 3, [Wl, Wl, Wl, Wl]),
        (A2, 1, [Sen, Jab, Sen, Jab]),
        (A2, 2, [Jab, Sen, Jab, Sen]),
        (A3, 1, [Sen, Sen, Jab, Sen]),
        (A3, 2, [Jab, Jab, Sen, Jab]),
    ];
    let all = AnalysisCase::all();
    assert_eq!(all.len(), expected.len());
    for (case, (a, n, c)) in all.iter().zip(expected) {
        assert_eq!((case.analysis, case.case_no), (a, n));
        assert_eq!([case.train_eeg, case.train_rep, case.test_eeg, case.test_rep], c, "{}", case.id());
    }
    assert_eq!(AnalysisCase::get(A2, 3), None);
    assert_eq!(AnalysisCase::parse_selection("A3").unwrap().len(), 2);
    assert_eq!(AnalysisCase::parse_selection("a1.3").unwrap(), vec![all[2]]);
    assert!(AnalysisCase::parse_selection("A4").is_err());
    assert!(AnalysisCase::parse_selection("A1.9").is_err());
    assert_eq!(all[5].description(), "train Sen/Sen, test Jab/Sen");
}

/// Per-condition data with identical representations across conditions
/// and EEG = Y·A_c (+ noise).
fn three_conditions(shared_mapping: bool, sigma: f64, seed: u64) -> AnalysisData {
    let k = keys(40, 6);
    let mut rng = rng_for(seed, &[]);
    let y = Arc::new(gaussian(k.len(), 160, &mut rng));
    let shared = gaussian(160, 200, &mut rng);
    let mut conditions = BTreeMap::new();
    for c in Condition::ALL {
        let a = if shared_mapping { shared.clone() } else { gaussian(160, 200, &mut rng) };
        let x = &*y * a + gaussian(k.len(), 200, &mut rng) * sigma;
        conditions.insert(
            c,
            ConditionBlock {
                keys: k.clone(),
                eeg: Arc::new(x),
                reps: y.clone(),
            },
        );
    }
    AnalysisData { conditions }
}

#[test]
fn first_case_equals_plain_cross_validation() {
    let data = three_conditions(true, 0.5, 13);
    let cfg = mc_cfg(20);
    let case = AnalysisCase::get(Analysis::A1, 1).unwrap();
    let block = &data.conditions[&Sen];
    let plain = DecodingDataset::new(block.eeg.clone(), block.reps.clone(), block.keys.clone(), Sen, Sen).unwrap();
    assert_eq!(run_analysis(&case, &data, &cfg).unwrap(), mc_cross_validate(&plain, &cfg).unwrap());
}

#[test]
fn substitution_identity() {
    let mut data = three_conditions(true, 0.5, 14);
    let sen = data.conditions[&Sen].clone();
    data.conditions.insert(Jab, sen);
    let cfg = mc_cfg(20);
    let a1 = run_analysis(&AnalysisCase::get(Analysis::A1, 1).unwrap(), &data, &cfg).unwrap();
    let a3 = run_analysis(&AnalysisCase::get(Analysis::A3, 1).unwrap(), &data, &cfg).unwrap();
    assert!((mean_accuracy(&a1) - mean_accuracy(&a3)).abs() <= 1e-12);
    assert!((mean_mse(&a1) - mean_mse(&a3)).abs() <= 1e-12);
}

#[test]
fn shared_mapping_transfers_across_conditions() {
    let data = three_conditions(true, 0.0, 15);
    let cfg = mc_cfg(20);
    for case in AnalysisCase::all() {
        let acc = mean_accuracy(&run_analysis(&case, &data, &cfg).unwrap());
        assert!(acc >= 0.95, "{}: {acc}", case.id());
    }
}

#[test]
fn condition_specific_mappings_break_substitution() {
    let data = three_conditions(false, 0.0, 16);
    let cfg = mc_cfg(40);
    for case in AnalysisCase::all() {
        let acc = mean_accuracy(&run_analysis(&case, &data, &cfg).unwrap());
        match case.analysis {
            Analysis::A3 => assert!((acc - 0.5).abs() <= 0.05, "{}: {acc}", case.id()),
            _ => assert!(acc >= 0.95, "{}: {acc}", case.id()),
        }
    }
}

#[test]
fn missing_or_misaligned_conditions() {
    let mut data = three_conditions(true, 0.5, 17);
    data.conditions.remove(&Wl);
    let cfg = mc_cfg(2);
    assert!(matches!(
        run_analysis(&AnalysisCase::get(Analysis::A1, 3).unwrap(), &data, &cfg),
        Err(DecoderError::MissingCondition(Wl))
    ));
    let jab = data.conditions.get_mut(&Jab).unwrap();
    jab.keys.swap(0, 1);
    assert!(matches!(
        run_analysis(&AnalysisCase::get(Analysis::A2, 1).unwrap(), &data, &cfg),
        Err(DecoderError::MissingAlignment { .. })
    ));
}

#[test]
fn permutation_null_reuses_the_pipeline() {
    let data = three_conditions(true, 0.0, 18);
    let cfg = mc_cfg(3);
    let case = AnalysisCase::get(Analysis::A1, 1).unwrap();
    let null = run_permutation_null(&case, &data, &cfg, 40, eegdecode::stats::Granularity::Sentence).unwrap();
    assert_eq!((null.acc_2v2.len(), null.mse.len()), (40, 40));
    let mean = null.acc_2v2.iter().sum::<f64>() / 40.0;
    assert!((mean - 0.5).abs() <= 0.08, "{mean}");
    assert_eq!(null, run_permutation_null(&case, &data, &cfg, 40, eegdecode::stats::Granularity::Sentence).unwrap());
}
