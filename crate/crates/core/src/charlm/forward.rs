use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::model::{LanguageModel, LSTM_LAYERS};
use super::network::{char_forward, log_softmax_columns, lstm_forward, output_logits, LstmState};
use super::train::{normalize_token, TrainingCorpus};
use super::{Layer, LayerActivations, LmError};
use crate::stimuli::{Condition, Corpus, StimulusSentence};

/// Result of feeding one word through the model.
#[derive(Debug, Clone, PartialEq)]
pub struct WordStep {
    pub activations: LayerActivations,
    /// Natural-log next-word distribution over the word vocabulary.
    pub log_probs: DVector<f64>,
    pub state: LstmState,
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn vector(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Feeds `surface` (normalized to the training tokenization) with the
/// recurrent `state` and returns all activations, the next-word
/// distribution and the advanced state.
pub fn forward_word(model: &LanguageModel, state: &LstmState, surface: &str) -> Result<WordStep, LmError> {
    let cfg = &model.config;
    let w = &model.weights;
    if state.h.len() != LSTM_LAYERS || state.h.iter().chain(&state.c).any(|v| v.len() != cfg.lstm_hidden_dim) {
        return Err(LmError::ShapeMismatch(format!("state does not match hidden size {}", cfg.lstm_hidden_dim)));
    }
    let token = normalize_token(surface);
    let chars = char_forward(cfg, w, &model.chars, &[token.as_str()]);
    let mut input = chars.output.clone();
    let mut next = LstmState::zeros(cfg);
    let mut hidden = Vec::with_capacity(LSTM_LAYERS);
    for (l, layer) in w.lstm.iter().enumerate() {
        let (h, c, _) = lstm_forward(layer, input, column(&state.h[l]), column(&state.c[l]));
        next.h[l] = vector(&h);
        next.c[l] = vector(&c);
        hidden.push(next.h[l].clone());
        input = h;
    }
    let log_probs = vector(&log_softmax_columns(&output_logits(w, &input)));
    let mut hidden = hidden.into_iter();
    let activations = LayerActivations {
        embedding: vector(&chars.embedding),
        conv: vector(&chars.conv),
        lstm1: hidden.next().unwrap(),
        lstm2: hidden.next().unwrap(),
        lstm3: hidden.next().unwrap(),
    };
    for layer in Layer::ALL {
        if activations.get(layer).iter().any(|v| !v.is_finite()) {
            return Err(LmError::NonFinite { layer, word: surface.to_string() });
        }
    }
    if log_probs.iter().any(|v| v.is_nan()) {
        return Err(LmError::NonFinite {
            layer: Layer::Lstm3,
            word: surface.to_string(),
        });
    }
    Ok(WordStep {
        activations,
        log_probs,
        state: next,
    })
}

/// Activations of the content words of `sentence`, run from a zero state.
/// Function words are fed for context but not returned.
pub fn extract_representations(model: &LanguageModel, sentence: &StimulusSentence) -> Result<Vec<LayerActivations>, LmError> {
    let mut state = LstmState::zeros(&model.config);
    let mut out = Vec::with_capacity(sentence.words.len());
    for word in &sentence.words {
        let step = forward_word(model, &state, &word.surface)?;
        state = step.state;
        if !word.is_function_word() {
            out.push(step.activations);
        }
    }
    Ok(out)
}

/// [`extract_representations`] over a whole corpus, in parallel.
pub fn extract_all(model: &LanguageModel, corpus: &Corpus) -> Result<BTreeMap<(Condition, u32), Vec<LayerActivations>>, LmError> {
    let keys: Vec<_> = corpus.sentences.keys().copied().collect();
    let reps: Result<Vec<_>, _> = keys
        .par_iter()
        .map(|k| extract_representations(model, &corpus.sentences[k]))
        .collect();
    Ok(keys.into_iter().zip(reps?).collect())
}

/// Summed negative log-likelihood and number of positions.
pub(crate) fn sequence_nll<S: AsRef<str>>(model: &LanguageModel, inputs: &[S], targets: &[S]) -> Result<(f64, usize), LmError> {
    if inputs.len() != targets.len() {
        return Err(LmError::LengthMismatch {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    let mut state = LstmState::zeros(&model.config);
    let mut nll = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let step = forward_word(model, &state, x.as_ref())?;
        nll -= step.log_probs[model.words.id(&normalize_token(y.as_ref()))];
        state = step.state;
    }
    Ok((nll, inputs.len()))
}

/// exp of the mean negative log-likelihood of `targets[t]` given
/// `inputs[..=t]`, starting from a zero state. Inputs and targets may come
/// from different streams (e.g. pseudo-word inputs scored against the
/// original sentence's next words).
pub fn perplexity<S: AsRef<str>>(model: &LanguageModel, inputs: &[S], targets: &[S]) -> Result<f64, LmError> {
    if inputs.is_empty() {
        return Err(LmError::EmptySequence);
    }
    let (nll, n) = sequence_nll(model, inputs, targets)?;
    Ok((nll / n as f64).exp())
}

/// Perplexity of a training-format corpus, each document from a zero state.
pub fn corpus_perplexity(model: &LanguageModel, corpus: &TrainingCorpus) -> Result<f64, LmError> {
    let per_doc: Result<Vec<_>, _> = corpus
        .documents
        .par_iter()
        .filter(|d| d.len() >= 2)
        .map(|d| sequence_nll(model, &d[..d.len() - 1], &d[1..]))
        .collect();
    let (nll, n) = per_doc?.into_iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    if n == 0 {
        return Err(LmError::EmptySequence);
    }
    Ok((nll / n as f64).exp())
}
