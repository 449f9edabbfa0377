//! Character-aware neural language model.
//!
//! Words are spelled out as character ids, embedded, convolved with filters
//! of several widths, max-pooled over time and passed through highway
//! layers before three stacked LSTMs predict the next word. Everything is
//! computed in `f64`.

mod checkpoint;
mod forward;
mod model;
mod network;
mod train;
pub mod vocab;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{corpus_perplexity, extract_all, extract_representations, forward_word, perplexity, WordStep};
pub use model::{ConvBank, HighwayLayer, LanguageModel, LstmLayer, ModelConfig, ModelWeights, LSTM_LAYERS};
pub use network::{BatchState, LstmState};
pub use train::{
    gradient_check, loss_and_gradient, train, train_model, DecayUnit, GradCheckReport, TokenBatch, TrainConfig, TrainReport,
    TrainingCorpus,
};
pub use vocab::{CharVocab, WordVocab};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite activation in layer {layer} for word {word:?}")]
    NonFinite { layer: Layer, word: String },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("inputs ({inputs}) and targets ({targets}) differ in length")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
}

/// The five representation families read out of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Embedding,
    Conv,
    #[serde(rename = "LSTM1")]
    Lstm1,
    #[serde(rename = "LSTM2")]
    Lstm2,
    #[serde(rename = "LSTM3")]
    Lstm3,
}

impl Layer {
    pub const ALL: [Layer; 5] = [Layer::Embedding, Layer::Conv, Layer::Lstm1, Layer::Lstm2, Layer::Lstm3];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Embedding => "Embedding",
            Layer::Conv => "Conv",
            Layer::Lstm1 => "LSTM1",
            Layer::Lstm2 => "LSTM2",
            Layer::Lstm3 => "LSTM3",
        }
    }

    /// Short column label used in probing tables.
    pub fn short(self) -> &'static str {
        match self {
            Layer::Embedding => "Emb",
            other => other.as_str(),
        }
    }

    /// Output dimension of this family under `cfg`.
    pub fn dim(self, cfg: &ModelConfig) -> usize {
        match self {
            Layer::Embedding => cfg.embedding_dim(),
            Layer::Conv => cfg.conv_dim(),
            _ => cfg.lstm_hidden_dim,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "embedding" | "emb" => Ok(Layer::Embedding),
            "conv" => Ok(Layer::Conv),
            "lstm1" => Ok(Layer::Lstm1),
            "lstm2" => Ok(Layer::Lstm2),
            "lstm3" => Ok(Layer::Lstm3),
            _ => Err(format!("unknown layer {s:?} (expected Embedding, Conv, LSTM1, LSTM2 or LSTM3)")),
        }
    }
}

/// Activations of all five families at one word position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub embedding: DVector<f64>,
    pub conv: DVector<f64>,
    pub lstm1: DVector<f64>,
    pub lstm2: DVector<f64>,
    pub lstm3: DVector<f64>,
}

impl LayerActivations {
    pub fn get(&self, layer: Layer) -> &DVector<f64> {
        match layer {
            Layer::Embedding => &self.embedding,
            Layer::Conv => &self.conv,
            Layer::Lstm1 => &self.lstm1,
            Layer::Lstm2 => &self.lstm2,
            Layer::Lstm3 => &self.lstm3,
        }
    }

    pub fn is_finite(&self) -> bool {
        Layer::ALL.iter().all(|&l| self.get(l).iter().all(|v| v.is_finite()))
    }
}
