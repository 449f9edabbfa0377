//! MLP probes of what a representation layer encodes: sentence-level
//! classification tasks over mean-pooled word activations, and a
//! word-order probe over pairs of word representations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charlm::{forward_word, LanguageModel, Layer, LmError, LstmState};
use crate::eeg::Standardization;
use crate::seeding::rng_for;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("task {task}: {message}")]
    InvalidTask { task: String, message: String },
    #[error("cannot embed an empty sentence")]
    EmptySentence,
    #[error("embedding dimension {got} differs from {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{examples} examples but {embeddings} embeddings")]
    Misaligned { examples: usize, embeddings: usize },
    #[error("probe training diverged in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("word pair {index} has both words at position {position}")]
    IdenticalPositions { index: usize, position: usize },
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Semantic,
    Syntactic,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Semantic => "semantic",
            ProbeKind::Syntactic => "syntactic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeExample {
    pub tokens: Vec<String>,
    pub label: usize,
    pub split: SplitName,
}

/// A sentence classification task, stored as JSON
/// `{name, kind, n_classes, examples: [{tokens, label, split}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTask {
    pub name: String,
    pub kind: ProbeKind,
    pub n_classes: usize,
    pub examples: Vec<ProbeExample>,
}

impl ProbeTask {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |message: String| {
            Err(ProbeError::InvalidTask {
                task: self.name.clone(),
                message,
            })
        };
        if self.n_classes < 2 {
            return bad(format!("n_classes is {}, need at least 2", self.n_classes));
        }
        if let Some((i, e)) = self.examples.iter().enumerate().find(|(_, e)| e.label >= self.n_classes) {
            return bad(format!("example {i} has label {} >= n_classes {}", e.label, self.n_classes));
        }
        if let Some(i) = self.examples.iter().position(|e| e.tokens.is_empty()) {
            return bad(format!("example {i} has no tokens"));
        }
        for split in [SplitName::Train, SplitName::Dev, SplitName::Test] {
            if self.split_indices(split).is_empty() {
                return bad(format!("{split:?} split is empty").to_lowercase());
            }
        }
        Ok(())
    }

    pub fn split_indices(&self, split: SplitName) -> Vec<usize> {
        (0..self.examples.len()).filter(|&i| self.examples[i].split == split).collect()
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, ProbeError> {
        let task: ProbeTask = serde_json::from_str(text).map_err(|e| ProbeError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        task.validate().map_err(|e| ProbeError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        Ok(task)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("probe task serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![100, 100],
            epochs: 50,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.hidden_sizes.contains(&0) {
            return Err(ProbeError::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ProbeError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Elementwise mean of the word vectors.
pub fn sentence_embedding(words: &[DVector<f64>]) -> Result<DVector<f64>, ProbeError> {
    let first = words.first().ok_or(ProbeError::EmptySentence)?;
    let mut sum = DVector::zeros(first.len());
    for w in words {
        if w.len() != first.len() {
            return Err(ProbeError::DimensionMismatch {
                expected: first.len(),
                got: w.len(),
            });
        }
        sum += w;
    }
    Ok(sum / words.len() as f64)
}

/// Mean-pooled activations of every example, per layer, each sentence run
/// from a zero state.
pub fn embed_task(model: &LanguageModel, task: &ProbeTask) -> Result<BTreeMap<Layer, Vec<DVector<f64>>>, ProbeError> {
    let per_example = task
        .examples
        .par_iter()
        .map(|e| {
            let mut state = LstmState::zeros(&model.config);
            let mut acts = Vec::with_capacity(e.tokens.len());
            for t in &e.tokens {
                let step = forward_word(model, &state, t)?;
                state = step.state;
                acts.push(step.activations);
            }
            Layer::ALL
                .iter()
                .map(|&l| sentence_embedding(&acts.iter().map(|a| a.get(l).clone()).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    Ok(Layer::ALL
        .iter()
        .enumerate()
        .map(|(k, &l)| (l, per_example.iter().map(|v| v[k].clone()).collect()))
        .collect())
}

/// Fully connected ReLU network with a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// (weights out × in, bias) per layer, the last one producing logits.
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub input_stats: Standardization,
}

impl Mlp {
    fn standardized(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(j, &v)| {
                let s = self.input_stats.scale[j];
                if s == 0.0 {
                    0.0
                } else {
                    (v - self.input_stats.mean[j]) / s
                }
            }),
        )
    }

    /// Activations of every layer for a standardized input; the last entry
    /// holds the logits.
    fn forward(&self, z: DVector<f64>) -> Vec<DVector<f64>> {
        let mut acts = vec![z];
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut a = w * acts.last().unwrap() + b;
            if i + 1 < self.layers.len() {
                a.apply(|v| *v = v.max(0.0));
            }
            acts.push(a);
        }
        acts
    }

    pub fn logits(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward(self.standardized(x)).pop().unwrap()
    }

    pub fn predict(&self, x: &DVector<f64>) -> usize {
        self.logits(x).argmax().0
    }

    pub fn accuracy(&self, xs: &[DVector<f64>], labels: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let hits = xs.iter().zip(labels).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / xs.len() as f64
    }
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let e = logits.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Plain per-example SGD on cross-entropy, visiting the examples in a
/// freshly shuffled order each epoch. Inputs are z-scored with the
/// training statistics, which the returned model keeps.
pub fn train_mlp(xs: &[DVector<f64>], labels: &[usize], n_classes: usize, cfg: &MlpConfig) -> Result<Mlp, ProbeError> {
    cfg.validate()?;
    if xs.len() != labels.len() {
        return Err(ProbeError::Misaligned {
            examples: labels.len(),
            embeddings: xs.len(),
        });
    }
    let dim = xs.first().map_or(0, |x| x.len());
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(ProbeError::DimensionMismatch { expected: dim, got: x.len() });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(ProbeError::Config(format!("label {y} >= n_classes {n_classes}")));
    }
    let stacked = DMatrix::from_fn(xs.len(), dim, |i, j| xs[i][j]);
    let input_stats = Standardization::fit(&stacked);

    let mut rng = rng_for(cfg.seed, &[0]);
    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden_sizes);
    sizes.push(n_classes);
    let layers = sizes
        .windows(2)
        .map(|s| {
            let std = (2.0 / s[0].max(1) as f64).sqrt();
            let w = DMatrix::from_fn(s[1], s[0], |_, _| std * rng.sample::<f64, _>(StandardNormal));
            (w, DVector::zeros(s[1]))
        })
        .collect();
    let mut mlp = Mlp { layers, input_stats };
    let inputs: Vec<DVector<f64>> = xs.iter().map(|x| mlp.standardized(x)).collect();

    let mut order: Vec<usize> = (0..xs.len()).collect();
    let n_layers = mlp.layers.len();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, &[1, epoch as u64]));
        for &i in &order {
            let acts = mlp.forward(inputs[i].clone());
            let mut delta = softmax(&acts[n_layers]);
            delta[labels[i]] -= 1.0;
            for l in (0..n_layers).rev() {
                let back = if l > 0 {
                    let mut d = mlp.layers[l].0.tr_mul(&delta);
                    d.zip_apply(&acts[l], |g, a| {
                        if a <= 0.0 {
                            *g = 0.0
                        }
                    });
                    Some(d)
                } else {
                    None
                };
                let (w, b) = &mut mlp.layers[l];
                w.ger(-cfg.learning_rate, &delta, &acts[l], 1.0);
                b.axpy(-cfg.learning_rate, &delta, 1.0);
                if let Some(d) = back {
                    delta = d;
                }
            }
        }
        if mlp.layers.iter().any(|(w, b)| w.iter().chain(b.iter()).any(|v| !v.is_finite())) {
            return Err(ProbeError::Divergence { epoch });
        }
    }
    Ok(mlp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains on the train split of `task` and scores dev and test.
/// `embeddings[i]` belongs to `task.examples[i]`.
pub fn train_probe(task: &ProbeTask, embeddings: &[DVector<f64>], cfg: &MlpConfig) -> Result<(Mlp, ProbeResult), ProbeError> {
    task.validate()?;
    if embeddings.len() != task.examples.len() {
        return Err(ProbeError::Misaligned {
            examples: task.examples.len(),
            embeddings: embeddings.len(),
        });
    }
    let pick = |split| {
        let idx = task.split_indices(split);
        let xs: Vec<DVector<f64>> = idx.iter().map(|&i| embeddings[i].clone()).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| task.examples[i].label).collect();
        (xs, ys)
    };
    let (xt, yt) = pick(SplitName::Train);
    let (xd, yd) = pick(SplitName::Dev);
    let (xe, ye) = pick(SplitName::Test);
    let mlp = train_mlp(&xt, &yt, task.n_classes, cfg)?;
    let result = ProbeResult {
        task: task.name.clone(),
        dev_accuracy: mlp.accuracy(&xd, &yd),
        test_accuracy: mlp.accuracy(&xe, &ye),
        n_train: xt.len(),
        n_test: xe.len(),
    };
    Ok((mlp, result))
}

/// Two words of one sentence with their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPair {
    pub first: DVector<f64>,
    pub first_position: usize,
    pub second: DVector<f64>,
    pub second_position: usize,
}

/// Up to `per_sentence` pairs of distinct positions from each sentence.
pub fn sample_word_pairs(sentences: &[Vec<DVector<f64>>], per_sentence: usize, seed: u64) -> Vec<WordPair> {
    let mut out = Vec::new();
    for (s, words) in sentences.iter().enumerate() {
        if words.len() < 2 {
            continue;
        }
        let mut rng = rng_for(seed, &[s as u64]);
        for _ in 0..per_sentence {
            let i = rng.random_range(0..words.len());
            let j = (i + rng.random_range(1..words.len())) % words.len();
            out.push(WordPair {
                first: words[i].clone(),
                first_position: i,
                second: words[j].clone(),
                second_position: j,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderProbeResult {
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Predicts which of two words came first from their concatenated
/// representations. The presentation order is flipped at random per pair
/// and a seeded `test_fraction` of the pairs is held out.
pub fn word_order_probe(pairs: &[WordPair], test_fraction: f64, cfg: &MlpConfig) -> Result<OrderProbeResult, ProbeError> {
    if let Some((index, p)) = pairs.iter().enumerate().find(|(_, p)| p.first_position == p.second_position) {
        return Err(ProbeError::IdenticalPositions {
            index,
            position: p.first_position,
        });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ProbeError::Config(format!("test_fraction {test_fraction} is not in (0, 1)")));
    }
    if pairs.len() < 2 {
        return Err(ProbeError::Config("need at least 2 word pairs".into()));
    }
    let mut rng = rng_for(cfg.seed, &[0x0bde]);
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, b, pa, pb) = if rng.random::<bool>() {
            (&p.first, &p.second, p.first_position, p.second_position)
        } else {
            (&p.second, &p.first, p.second_position, p.first_position)
        };
        if a.len() != b.len() {
            return Err(ProbeError::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        xs.push(DVector::from_iterator(a.len() * 2, a.iter().chain(b.iter()).copied()));
        ys.push(usize::from(pa < pb));
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut rng);
    let n_test = ((pairs.len() as f64 * test_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let (test, train) = idx.split_at(n_test);
    let take = |rows: &[usize]| -> (Vec<DVector<f64>>, Vec<usize>) { (rows.iter().map(|&i| xs[i].clone()).collect(), rows.iter().map(|&i| ys[i]).collect()) };
    let (xt, yt) = take(train);
    let (xe, ye) = take(test);
    let mlp = train_mlp(&xt, &yt, 2, cfg)?;
    Ok(OrderProbeResult {
        accuracy: mlp.accuracy(&xe, &ye),
        n_train: xt.len(),
        n_test: xe.len(),
    })
}

/// Configuration of a bundle of synthetic tasks with known structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedProbeConfig {
    pub n_tasks: usize,
    pub n_classes: usize,
    pub examples_per_split: [usize; 3],
    pub dim: usize,
    /// Distance of each class mean from the origin, in noise standard
    /// deviations.
    pub separation: f64,
    pub seed: u64,
}

impl Default for PlantedProbeConfig {
    fn default() -> Self {
        PlantedProbeConfig {
            n_tasks: 3,
            n_classes: 2,
            examples_per_split: [400, 100, 200],
            dim: 32,
            separation: 4.0,
            seed: 0,
        }
    }
}

/// Synthetic tasks with per-layer embeddings. Task `t` carries its label
/// in layer `Layer::ALL[t % 5]` only; every other layer is label-free
/// noise.
#[derive(Debug, Clone)]
pub struct PlantedProbeSuite {
    pub tasks: Vec<ProbeTask>,
    pub planted: Vec<Layer>,
    /// `embeddings[t][layer][i]` for example `i` of task `t`.
    pub embeddings: Vec<BTreeMap<Layer, Vec<DVector<f64>>>>,
}

pub fn planted_suite(cfg: &PlantedProbeConfig) -> PlantedProbeSuite {
    let mut tasks = Vec::new();
    let mut planted = Vec::new();
    let mut embeddings = Vec::new();
    for t in 0..cfg.n_tasks {
        let layer = Layer::ALL[t % Layer::ALL.len()];
        let mut rng = rng_for(cfg.seed, &[t as u64]);
        let means: Vec<DVector<f64>> = (0..cfg.n_classes)
            .map(|_| {
                let v = DVector::from_fn(cfg.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = v.norm().max(f64::MIN_POSITIVE);
                v * (cfg.separation / norm)
            })
            .collect();
        let mut examples = Vec::new();
        let mut per_layer: BTreeMap<Layer, Vec<DVector<f64>>> = Layer::ALL.iter().map(|&l| (l, Vec::new())).collect();
        for (split, &n) in [SplitName::Train, SplitName::Dev, SplitName::Test].iter().zip(&cfg.examples_per_split) {
            for i in 0..n {
                let label = rng.random_range(0..cfg.n_classes);
                examples.push(ProbeExample {
                    tokens: vec![format!("s{t}x{i}")],
                    label,
                    split: *split,
                });
                for (&l, list) in per_layer.iter_mut() {
                    let mut v = DVector::from_fn(cfg.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                    if l == layer {
                        v += &means[label];
                    }
                    list.push(v);
                }
            }
        }
        tasks.push(ProbeTask {
            name: format!("planted-{}-{}", t + 1, layer.as_str()),
            kind: if t % 2 == 0 { ProbeKind::Syntactic } else { ProbeKind::Semantic },
            n_classes: cfg.n_classes,
            examples,
        });
        planted.push(layer);
        embeddings.push(per_layer);
    }
    PlantedProbeSuite { tasks, planted, embeddings }
}

/// A copy of `task` with labels permuted across examples (splits kept).
pub fn shuffle_labels(task: &ProbeTask, seed: u64) -> ProbeTask {
    let mut labels: Vec<usize> = task.examples.iter().map(|e| e.label).collect();
    labels.shuffle(&mut rng_for(seed, &[0x5f]));
    let mut out = task.clone();
    for (e, l) in out.examples.iter_mut().zip(labels) {
        e.label = l;
    }
    out.name = format!("{}-shuffled", task.name);
    out
}
