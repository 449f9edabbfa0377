//! Synthetic multi-subject EEG with planted linear mappings from model
//! representations, for validating the decoding pipeline end to end.
//!
//! For a content word with representation `y` (1 × P) in a planted layer,
//! every subject's flattened word window is `Σ_layers y·A + ε` with
//! `A` (P × D) drawn N(0, 1)/√P and `ε ~ N(0, σ²)` independent per subject
//! and sample. Samples outside content-word windows are pure noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charlm::{Layer, LayerActivations};
use crate::eeg::{onset_sample, save_epochs, window_samples, EegEpoch, EegError, SubjectId};
use crate::seeding::rng_for;
use crate::stimuli::{content_words, Condition, Corpus};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("layer {layer}: feature dimension {d} is smaller than representation dimension {p}")]
    DimensionTooSmall { layer: Layer, d: usize, p: usize },
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("sentence {sentence_id} ({condition}): content-word windows {a} and {b} overlap")]
    OverlappingWindows { sentence_id: u32, condition: Condition, a: usize, b: usize },
    #[error("sentence {sentence_id} ({condition}): word window ends at sample {end}, epoch has {samples}")]
    WindowOverrun { sentence_id: u32, condition: Condition, end: usize, samples: usize },
    #[error("no representations for sentence {sentence_id} ({condition})")]
    MissingRepresentation { sentence_id: u32, condition: Condition },
    #[error("could not draw a full-rank mapping for layer {0}")]
    RankDeficient(Layer),
    #[error(transparent)]
    Eeg(#[from] EegError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sentences: u32,
    /// Word slots per sentence; with `slot_ms` this fixes the epoch length.
    pub words_per_sentence: usize,
    pub slot_ms: f64,
    pub channels: usize,
    pub rate_hz: u32,
    pub window_ms: f64,
    pub n_subjects: u32,
    pub noise_sigma: f64,
    pub planted_layers: Vec<Layer>,
    /// One mapping per layer for all conditions; otherwise each condition
    /// draws its own.
    pub shared_across_conditions: bool,
    pub conditions: Vec<Condition>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sentences: 80,
            words_per_sentence: 10,
            slot_ms: 500.0,
            channels: 64,
            rate_hz: 500,
            window_ms: 400.0,
            n_subjects: 1,
            noise_sigma: 1.0,
            planted_layers: vec![Layer::Lstm2],
            shared_across_conditions: true,
            conditions: Condition::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.channels == 0 || self.rate_hz == 0 || self.words_per_sentence == 0 || self.n_subjects == 0 {
            return bad("channels, rate_hz, words_per_sentence and n_subjects must be positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if !(self.slot_ms > 0.0 && self.window_ms > 0.0) {
            return bad("slot_ms and window_ms must be positive");
        }
        window_samples(self.window_ms, self.rate_hz)?;
        window_samples(self.slot_ms * self.words_per_sentence as f64, self.rate_hz)?;
        Ok(())
    }

    /// D = channels × window samples.
    pub fn feature_dim(&self) -> Result<usize, SynthError> {
        Ok(self.channels * window_samples(self.window_ms, self.rate_hz)?)
    }

    pub fn epoch_samples(&self) -> Result<usize, SynthError> {
        Ok(window_samples(self.slot_ms * self.words_per_sentence as f64, self.rate_hz)?)
    }
}

/// A representation-to-signal map `A` (P × D).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMapping {
    pub layer: Layer,
    /// `None` when shared by all conditions.
    pub condition: Option<Condition>,
    pub a: DMatrix<f64>,
    /// Redraws needed before `A` had full row rank.
    pub redraws: u32,
}

/// Standard-normal entries scaled by 1/√P; redrawn until `AAᵀ` is positive
/// definite (rank P).
pub fn draw_mapping(p: usize, d: usize, seed: u64, path: &[u64], layer: Layer) -> Result<(DMatrix<f64>, u32), SynthError> {
    if d < p {
        return Err(SynthError::DimensionTooSmall { layer, d, p });
    }
    let scale = 1.0 / (p as f64).sqrt();
    for redraw in 0..8u32 {
        let mut full = path.to_vec();
        full.push(u64::from(redraw));
        let mut rng = rng_for(seed, &full);
        let a = DMatrix::from_fn(p, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        if Cholesky::new(&a * a.transpose()).is_some() {
            return Ok((a, redraw));
        }
    }
    Err(SynthError::RankDeficient(layer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub noise_sigma: f64,
    pub n_subjects: u32,
    pub planted_layers: Vec<Layer>,
    pub shared_across_conditions: bool,
    pub channels: usize,
    pub rate_hz: u32,
    pub window_ms: f64,
    pub feature_dim: usize,
    /// Representation dimension of each planted layer.
    pub layer_dims: BTreeMap<Layer, usize>,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Per-subject epochs, ordered by (condition, sentence, subject).
    pub epochs: Vec<EegEpoch>,
    pub mappings: Vec<PlantedMapping>,
    pub truth: GroundTruth,
}

impl SynthOutput {
    /// Writes the epochs (with manifest) and `ground_truth.json` into `dir`;
    /// returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, SynthError> {
        let manifest = save_epochs(dir, &self.epochs)?;
        let path = dir.join("ground_truth.json");
        let json = serde_json::to_string_pretty(&self.truth).expect("ground truth serializes");
        fs::write(&path, json + "\n").map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(manifest)
    }
}

fn condition_index(c: Condition) -> u64 {
    Condition::ALL.iter().position(|&x| x == c).unwrap() as u64
}

fn layer_index(l: Layer) -> u64 {
    Layer::ALL.iter().position(|&x| x == l).unwrap() as u64
}

fn noise_epoch(cfg: &SynthConfig, samples: usize, subject: u32, condition: Condition, id: u32) -> DMatrix<f64> {
    if cfg.noise_sigma == 0.0 {
        return DMatrix::zeros(cfg.channels, samples);
    }
    let mut rng = rng_for(cfg.seed, &[2, u64::from(subject), condition_index(condition), u64::from(id)]);
    let sigma = cfg.noise_sigma;
    // Filled row by row so that a channel's samples are consecutive draws.
    let mut m = DMatrix::zeros(cfg.channels, samples);
    for r in 0..cfg.channels {
        for c in 0..samples {
            m[(r, c)] = sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Generates epochs for every sentence of `cfg.conditions` in `corpus`
/// whose id is at most `cfg.n_sentences`, planting `cfg.planted_layers` of
/// `reps` (content-word activations keyed like [`crate::charlm::extract_all`]).
pub fn generate(
    cfg: &SynthConfig,
    corpus: &Corpus,
    reps: &BTreeMap<(Condition, u32), Vec<LayerActivations>>,
) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let d = cfg.feature_dim()?;
    let w = window_samples(cfg.window_ms, cfg.rate_hz)?;
    let samples = cfg.epoch_samples()?;

    let mut layers = cfg.planted_layers.clone();
    layers.sort();
    layers.dedup();
    let mut layer_dims = BTreeMap::new();
    if !layers.is_empty() {
        let first = reps.values().flat_map(|v| v.first()).next();
        for &l in &layers {
            let p = first.map_or(0, |a| a.get(l).len());
            layer_dims.insert(l, p);
        }
    }

    let mut mappings = Vec::new();
    for &l in &layers {
        let p = layer_dims[&l];
        if cfg.shared_across_conditions {
            let (a, redraws) = draw_mapping(p, d, cfg.seed, &[1, layer_index(l), 99], l)?;
            mappings.push(PlantedMapping {
                layer: l,
                condition: None,
                a,
                redraws,
            });
        } else {
            for &c in &cfg.conditions {
                let (a, redraws) = draw_mapping(p, d, cfg.seed, &[1, layer_index(l), condition_index(c)], l)?;
                mappings.push(PlantedMapping {
                    layer: l,
                    condition: Some(c),
                    a,
                    redraws,
                });
            }
        }
    }

    let sentences: Vec<_> = cfg
        .conditions
        .iter()
        .flat_map(|&c| corpus.by_condition(c).filter(|s| s.id <= cfg.n_sentences))
        .collect();

    // Signal per sentence: channels × samples, shared by all subjects.
    let signals = sentences
        .par_iter()
        .map(|s| {
            let mut signal = DMatrix::zeros(cfg.channels, samples);
            let words = content_words(s);
            let starts: Vec<usize> = words.iter().map(|x| onset_sample(x.onset_ms, cfg.rate_hz)).collect();
            for (k, &start) in starts.iter().enumerate() {
                if start + w > samples {
                    return Err(SynthError::WindowOverrun {
                        sentence_id: s.id,
                        condition: s.condition,
                        end: start + w,
                        samples,
                    });
                }
                if let Some(j) = (0..k).find(|&j| starts[j] < start + w && start < starts[j] + w) {
                    return Err(SynthError::OverlappingWindows {
                        sentence_id: s.id,
                        condition: s.condition,
                        a: j,
                        b: k,
                    });
                }
            }
            if mappings.is_empty() {
                return Ok(signal);
            }
            let acts = reps.get(&(s.condition, s.id)).filter(|a| a.len() == words.len()).ok_or(
                SynthError::MissingRepresentation {
                    sentence_id: s.id,
                    condition: s.condition,
                },
            )?;
            for m in mappings.iter().filter(|m| m.condition.is_none() || m.condition == Some(s.condition)) {
                for (k, act) in acts.iter().enumerate() {
                    let y = act.get(m.layer);
                    let flat = y.transpose() * &m.a;
                    // Row-major layout: channel c occupies flat[c·w .. (c+1)·w].
                    for c in 0..cfg.channels {
                        for t in 0..w {
                            signal[(c, starts[k] + t)] += flat[c * w + t];
                        }
                    }
                }
            }
            Ok(signal)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    let units: Vec<(usize, u32)> = (0..sentences.len()).flat_map(|i| (1..=cfg.n_subjects).map(move |subj| (i, subj))).collect();
    let epochs = units
        .par_iter()
        .map(|&(i, subject)| {
            let s = sentences[i];
            EegEpoch {
                subject: SubjectId::Subject(subject),
                sentence_id: s.id,
                condition: s.condition,
                sampling_rate_hz: cfg.rate_hz,
                data: &signals[i] + noise_epoch(cfg, samples, subject, s.condition, s.id),
            }
        })
        .collect();

    Ok(SynthOutput {
        epochs,
        mappings,
        truth: GroundTruth {
            seed: cfg.seed,
            noise_sigma: cfg.noise_sigma,
            n_subjects: cfg.n_subjects,
            planted_layers: layers,
            shared_across_conditions: cfg.shared_across_conditions,
            channels: cfg.channels,
            rate_hz: cfg.rate_hz,
            window_ms: cfg.window_ms,
            feature_dim: d,
            layer_dims,
            conditions: cfg.conditions.clone(),
        },
    })
}

/// Pure Gaussian epochs (no dependence on any representation) for ids
/// `1..=n_sentences` in every configured condition and subject.
pub fn generate_null(cfg: &SynthConfig) -> Result<Vec<EegEpoch>, SynthError> {
    cfg.validate()?;
    let samples = cfg.epoch_samples()?;
    let units: Vec<(Condition, u32, u32)> = cfg
        .conditions
        .iter()
        .flat_map(|&c| (1..=cfg.n_sentences).flat_map(move |id| (1..=cfg.n_subjects).map(move |subj| (c, id, subj))))
        .collect();
    Ok(units
        .par_iter()
        .map(|&(condition, id, subject)| EegEpoch {
            subject: SubjectId::Subject(subject),
            sentence_id: id,
            condition,
            sampling_rate_hz: cfg.rate_hz,
            data: noise_epoch(cfg, samples, subject, condition, id),
        })
        .collect())
}
