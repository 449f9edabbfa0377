use std::collections::HashMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::model::{LanguageModel, ModelConfig, ModelWeights};
use super::network::{window_pass, BatchState, Step, Window};
use super::vocab::{CharVocab, WordVocab, EOS_TOKEN, UNK_TOKEN};
use super::LmError;
use crate::seeding::rng_for;

/// Lowercases and strips leading/trailing punctuation. The reserved
/// tokens pass through unchanged.
pub fn normalize_token(raw: &str) -> String {
    if raw == EOS_TOKEN || raw == UNK_TOKEN {
        return raw.to_string();
    }
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Tokenized training text. Each document starts with `</s>` and every
/// line (sentence) is followed by `</s>`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingCorpus {
    pub documents: Vec<Vec<String>>,
}

impl TrainingCorpus {
    /// One sentence per line; blank lines separate documents.
    pub fn parse(text: &str) -> Self {
        let mut documents = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for line in text.lines() {
            let tokens: Vec<String> = line
                .split_whitespace()
                .map(normalize_token)
                .filter(|t| !t.is_empty())
                .collect();
            if line.trim().is_empty() {
                if !current.is_empty() {
                    documents.push(std::mem::take(&mut current));
                }
                continue;
            }
            if tokens.is_empty() {
                continue;
            }
            if current.is_empty() {
                current.push(EOS_TOKEN.to_string());
            }
            current.extend(tokens);
            current.push(EOS_TOKEN.to_string());
        }
        if !current.is_empty() {
            documents.push(current);
        }
        TrainingCorpus { documents }
    }

    pub fn from_sentences<S: AsRef<str>>(sentences: &[S]) -> Self {
        let text: Vec<&str> = sentences.iter().map(AsRef::as_ref).collect();
        Self::parse(&text.join("\n"))
    }

    pub fn n_tokens(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_tokens() < 2
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(String::as_str)
    }

    /// Character vocabulary over the non-reserved tokens.
    pub fn char_vocab(&self) -> CharVocab {
        CharVocab::from_words(self.tokens().filter(|t| *t != EOS_TOKEN && *t != UNK_TOKEN))
    }

    pub fn word_vocab(&self) -> WordVocab {
        WordVocab::from_tokens(self.tokens())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayUnit {
    Epoch,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sequence_length: usize,
    pub initial_lr: f64,
    /// lr(t) = initial_lr / (1 + decay_rate · t)
    pub decay_rate: f64,
    pub decay_unit: DecayUnit,
    pub seed: u64,
    pub gradient_clip: f64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 50,
            sequence_length: 20,
            initial_lr: 0.8,
            decay_rate: 0.5,
            decay_unit: DecayUnit::Epoch,
            seed: 0,
            gradient_clip: 5.0,
            init_scale: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::TrainConfig(m.to_string()));
        if self.batch_size == 0 || self.sequence_length == 0 {
            return bad("batch_size and sequence_length must be positive");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.initial_lr) || !positive(self.gradient_clip) || !positive(self.init_scale) {
            return bad("initial_lr, gradient_clip and init_scale must be positive");
        }
        if !(self.decay_rate.is_finite() && self.decay_rate >= 0.0) {
            return bad("decay_rate must be non-negative");
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        self.initial_lr / (1.0 + self.decay_rate * step as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean per-token cross-entropy (nats) of each epoch, accumulated
    /// before each update.
    pub loss_curve: Vec<f64>,
    pub batches_per_epoch: usize,
    pub streams: usize,
}

/// The corpus laid out as `streams` contiguous chunks of one token stream.
struct Layout {
    ids: Vec<usize>,
    surfaces: Vec<String>,
    /// Position starts a document (state resets before it).
    doc_start: Vec<bool>,
    streams: usize,
    chunk: usize,
}

impl Layout {
    fn new(corpus: &TrainingCorpus, words: &WordVocab, batch_size: usize) -> Self {
        let mut ids = Vec::new();
        let mut surfaces = Vec::new();
        let mut doc_start = Vec::new();
        for doc in &corpus.documents {
            for (i, t) in doc.iter().enumerate() {
                ids.push(words.id(t));
                surfaces.push(t.clone());
                doc_start.push(i == 0);
            }
        }
        let inputs = ids.len() - 1;
        let streams = batch_size.min(inputs).max(1);
        Layout {
            ids,
            surfaces,
            doc_start,
            streams,
            chunk: inputs / streams,
        }
    }

    fn windows(&self, len: usize) -> impl Iterator<Item = Window<'_>> + '_ {
        (0..self.chunk).step_by(len).map(move |start| {
            let end = (start + len).min(self.chunk);
            let mut index: HashMap<&str, usize> = HashMap::new();
            let mut surfaces = Vec::new();
            let steps = (start..end)
                .map(|t| {
                    let mut step = Step {
                        word: Vec::with_capacity(self.streams),
                        reset: Vec::with_capacity(self.streams),
                        target: Vec::with_capacity(self.streams),
                    };
                    for b in 0..self.streams {
                        let p = b * self.chunk + t;
                        let s = self.surfaces[p].as_str();
                        let next = *index.entry(s).or_insert_with(|| {
                            surfaces.push(s);
                            surfaces.len() - 1
                        });
                        step.word.push(next);
                        step.reset.push(self.doc_start[p]);
                        // No target across a document boundary.
                        step.target.push((!self.doc_start[p + 1]).then_some(self.ids[p + 1]));
                    }
                    step
                })
                .collect();
            Window { surfaces, steps }
        })
    }
}

fn clip_gradient(grads: &mut ModelWeights, max_norm: f64) {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Builds vocabularies from `corpus`, initializes a model from
/// `tcfg.seed` and trains it.
pub fn train(config: ModelConfig, tcfg: &TrainConfig, corpus: &TrainingCorpus) -> Result<(LanguageModel, TrainReport), LmError> {
    tcfg.validate()?;
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let model = LanguageModel::initialized(config, corpus.char_vocab(), corpus.word_vocab(), tcfg.seed, tcfg.init_scale)?;
    train_model(model, tcfg, corpus, |_, _| {})
}

/// Continues training `model` on `corpus`. `on_epoch(epoch, loss)` is
/// called after every epoch.
pub fn train_model(
    mut model: LanguageModel,
    tcfg: &TrainConfig,
    corpus: &TrainingCorpus,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(LanguageModel, TrainReport), LmError> {
    tcfg.validate()?;
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let layout = Layout::new(corpus, &model.words, tcfg.batch_size);
    let batches_per_epoch = layout.chunk.div_ceil(tcfg.sequence_length);
    let mut loss_curve = Vec::with_capacity(tcfg.epochs);
    let mut global_batch = 0;
    for epoch in 0..tcfg.epochs {
        let mut state = BatchState::zeros(&model.config, layout.streams);
        let (mut nll, mut count) = (0.0, 0usize);
        for (batch, window) in layout.windows(tcfg.sequence_length).enumerate() {
            let n = window.counted_targets();
            let mut grads = ModelWeights::zeros(&model.config);
            let loss = window_pass(&model, &window, &mut state, Some((&mut grads, n.max(1) as f64)));
            if !loss.is_finite() || !grads.is_finite() {
                return Err(LmError::Divergence {
                    epoch: epoch + 1,
                    batch: batch + 1,
                    loss: loss / n.max(1) as f64,
                });
            }
            nll += loss;
            count += n;
            if n > 0 {
                clip_gradient(&mut grads, tcfg.gradient_clip);
                let step = match tcfg.decay_unit {
                    DecayUnit::Epoch => epoch,
                    DecayUnit::Batch => global_batch,
                };
                model.weights.sgd_step(&grads, tcfg.learning_rate(step));
            }
            global_batch += 1;
        }
        let mean = nll / count.max(1) as f64;
        loss_curve.push(mean);
        on_epoch(epoch + 1, mean);
    }
    Ok((
        model,
        TrainReport {
            loss_curve,
            batches_per_epoch,
            streams: layout.streams,
        },
    ))
}

/// Rows of equal-length input/target token sequences, each row one stream
/// starting from a zero state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub inputs: Vec<Vec<String>>,
    pub targets: Vec<Vec<String>>,
}

impl TokenBatch {
    fn window<'a>(&'a self, model: &LanguageModel) -> Result<Window<'a>, LmError> {
        let b = self.inputs.len();
        let t = self.inputs.first().map_or(0, Vec::len);
        if b == 0 || t == 0 {
            return Err(LmError::EmptySequence);
        }
        if self.targets.len() != b {
            return Err(LmError::LengthMismatch {
                inputs: b,
                targets: self.targets.len(),
            });
        }
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            if x.len() != t || y.len() != t {
                return Err(LmError::LengthMismatch {
                    inputs: x.len(),
                    targets: y.len(),
                });
            }
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut surfaces = Vec::new();
        let steps = (0..t)
            .map(|step| Step {
                word: self
                    .inputs
                    .iter()
                    .map(|row| {
                        let s = row[step].as_str();
                        *index.entry(s).or_insert_with(|| {
                            surfaces.push(s);
                            surfaces.len() - 1
                        })
                    })
                    .collect(),
                reset: vec![false; b],
                target: self
                    .targets
                    .iter()
                    .map(|row| Some(model.words.id(&normalize_token(&row[step]))))
                    .collect(),
            })
            .collect();
        Ok(Window { surfaces, steps })
    }
}

/// Mean cross-entropy of `batch` and its gradient.
pub fn loss_and_gradient(model: &LanguageModel, batch: &TokenBatch) -> Result<(f64, ModelWeights), LmError> {
    let window = batch.window(model)?;
    let n = window.counted_targets() as f64;
    let mut grads = ModelWeights::zeros(&model.config);
    let mut state = BatchState::zeros(&model.config, batch.inputs.len());
    let nll = window_pass(model, &window, &mut state, Some((&mut grads, n)));
    Ok((nll / n, grads))
}

fn loss_only(model: &LanguageModel, window: &Window<'_>, streams: usize) -> f64 {
    let mut state = BatchState::zeros(&model.config, streams);
    window_pass(model, window, &mut state, None) / window.counted_targets() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// (block, index, analytic, numeric) of the worst parameter.
    pub worst: Option<(String, usize, f64, f64)>,
    pub blocks_checked: Vec<String>,
}

/// Compares analytic gradients with central differences (step `h`) on at
/// least `n_samples` parameters, drawn from every block in proportion to
/// its size (at least one each). Relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off in
/// the differences of an O(1) loss (about 1e-11) from dominating on
/// near-zero gradients.
pub fn gradient_check(model: &LanguageModel, batch: &TokenBatch, n_samples: usize, h: f64, seed: u64) -> Result<GradCheckReport, LmError> {
    let (_, grads) = loss_and_gradient(model, batch)?;
    let window = batch.window(model)?;
    let streams = batch.inputs.len();
    let total = grads.n_params();
    let grad_blocks = grads.blocks();

    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut rng = rng_for(seed, &[0x6c]);
    for (k, (_, block)) in grad_blocks.iter().enumerate() {
        let want = ((n_samples as f64 * block.len() as f64 / total as f64).ceil() as usize).clamp(1, block.len());
        picks.extend(sample(&mut rng, block.len(), want).into_iter().map(|i| (k, i)));
    }

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_checked: picks.len(),
        worst: None,
        blocks_checked: grad_blocks.iter().map(|(n, _)| n.clone()).collect(),
    };
    for (k, i) in picks {
        let original = probe.weights.blocks()[k].1[i];
        probe.weights.blocks_mut()[k].1[i] = original + h;
        let plus = loss_only(&probe, &window, streams);
        probe.weights.blocks_mut()[k].1[i] = original - h;
        let minus = loss_only(&probe, &window, streams);
        probe.weights.blocks_mut()[k].1[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grad_blocks[k].1[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((grad_blocks[k].0.clone(), i, analytic, numeric));
        }
    }
    Ok(report)
}
