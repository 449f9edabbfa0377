use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{CharVocab, WordVocab, PAD};
use super::LmError;
use crate::seeding::rng_for;

pub const LSTM_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub char_embed_dim: usize,
    pub max_word_len: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: Vec<usize>,
    pub highway_layers: usize,
    pub lstm_hidden_dim: usize,
    pub lstm_layers: usize,
    pub word_vocab_size: usize,
    pub char_vocab_size: usize,
}

impl ModelConfig {
    /// Small character-aware configuration: 15-dim character embeddings,
    /// widths 1..=6 with 25·w filters each, one highway layer, 300 hidden
    /// units in each of the three LSTM layers.
    pub fn small(char_vocab_size: usize, word_vocab_size: usize) -> Self {
        ModelConfig {
            char_embed_dim: 15,
            max_word_len: 21,
            filter_widths: (1..=6).collect(),
            filters_per_width: (1..=6).map(|w| 25 * w).collect(),
            highway_layers: 1,
            lstm_hidden_dim: 300,
            lstm_layers: LSTM_LAYERS,
            word_vocab_size,
            char_vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::Config(m.to_string()));
        if self.lstm_layers != LSTM_LAYERS {
            return bad("lstm_layers must be 3");
        }
        if self.filter_widths.len() != self.filters_per_width.len() || self.filter_widths.is_empty() {
            return bad("filter_widths and filters_per_width must be non-empty and of equal length");
        }
        if self.char_embed_dim == 0
            || self.lstm_hidden_dim == 0
            || self.word_vocab_size == 0
            || self.char_vocab_size == 0
            || self.filter_widths.contains(&0)
            || self.filters_per_width.contains(&0)
        {
            return bad("all dimensions must be positive");
        }
        if self.max_word_len < 3 {
            return bad("max_word_len must leave room for BOW, one character and EOW");
        }
        if self.filter_widths.iter().any(|&w| w > self.max_word_len) {
            return bad("a filter is wider than max_word_len");
        }
        Ok(())
    }

    /// Length of the concatenated max-pooled convolution outputs.
    pub fn conv_dim(&self) -> usize {
        self.filters_per_width.iter().sum()
    }

    /// Length of the zero-padded concatenated character embeddings.
    pub fn embedding_dim(&self) -> usize {
        self.char_embed_dim * self.max_word_len
    }

    pub fn n_params(&self) -> usize {
        let e = self.char_embed_dim;
        let d = self.conv_dim();
        let h = self.lstm_hidden_dim;
        let conv: usize = self
            .filter_widths
            .iter()
            .zip(&self.filters_per_width)
            .map(|(&w, &n)| n * w * e + n)
            .sum();
        let lstm: usize = (0..LSTM_LAYERS)
            .map(|l| {
                let input = if l == 0 { d } else { h };
                4 * h * (input + h + 1)
            })
            .sum();
        self.char_vocab_size * e + conv + self.highway_layers * 2 * (d * d + d) + lstm + self.word_vocab_size * (h + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    pub width: usize,
    /// filters × (width · char_embed_dim)
    pub kernel: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighwayLayer {
    pub gate_w: DMatrix<f64>,
    pub gate_b: DVector<f64>,
    pub proj_w: DMatrix<f64>,
    pub proj_b: DVector<f64>,
}

/// Gate rows are stacked input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_input: DMatrix<f64>,
    pub w_recurrent: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    /// char_vocab × char_embed_dim; the padding row is held at zero.
    pub char_embedding: DMatrix<f64>,
    pub conv: Vec<ConvBank>,
    pub highway: Vec<HighwayLayer>,
    pub lstm: Vec<LstmLayer>,
    /// word_vocab × hidden
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
}

impl ModelWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let e = cfg.char_embed_dim;
        let d = cfg.conv_dim();
        let h = cfg.lstm_hidden_dim;
        ModelWeights {
            char_embedding: DMatrix::zeros(cfg.char_vocab_size, e),
            conv: cfg
                .filter_widths
                .iter()
                .zip(&cfg.filters_per_width)
                .map(|(&w, &n)| ConvBank {
                    width: w,
                    kernel: DMatrix::zeros(n, w * e),
                    bias: DVector::zeros(n),
                })
                .collect(),
            highway: (0..cfg.highway_layers)
                .map(|_| HighwayLayer {
                    gate_w: DMatrix::zeros(d, d),
                    gate_b: DVector::zeros(d),
                    proj_w: DMatrix::zeros(d, d),
                    proj_b: DVector::zeros(d),
                })
                .collect(),
            lstm: (0..LSTM_LAYERS)
                .map(|l| LstmLayer {
                    w_input: DMatrix::zeros(4 * h, if l == 0 { d } else { h }),
                    w_recurrent: DMatrix::zeros(4 * h, h),
                    bias: DVector::zeros(4 * h),
                })
                .collect(),
            out_w: DMatrix::zeros(cfg.word_vocab_size, h),
            out_b: DVector::zeros(cfg.word_vocab_size),
        }
    }

    /// Uniform(−scale, scale) initialization; highway gate biases start at
    /// −2 so that layers initially carry their input through.
    pub fn init(cfg: &ModelConfig, seed: u64, scale: f64) -> Self {
        let mut w = Self::zeros(cfg);
        let mut rng = rng_for(seed, &[0x1417]);
        for (_, block) in w.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
        w.char_embedding.row_mut(PAD).fill(0.0);
        for hw in &mut w.highway {
            hw.gate_b.fill(-2.0);
        }
        w
    }

    /// Every parameter block, in checkpoint order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("char_embedding".into(), self.char_embedding.as_slice())];
        for (k, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{k}.kernel"), c.kernel.as_slice()));
            out.push((format!("conv{k}.bias"), c.bias.as_slice()));
        }
        for (k, hw) in self.highway.iter().enumerate() {
            out.push((format!("highway{k}.gate_w"), hw.gate_w.as_slice()));
            out.push((format!("highway{k}.gate_b"), hw.gate_b.as_slice()));
            out.push((format!("highway{k}.proj_w"), hw.proj_w.as_slice()));
            out.push((format!("highway{k}.proj_b"), hw.proj_b.as_slice()));
        }
        for (k, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{}.w_input", k + 1), l.w_input.as_slice()));
            out.push((format!("lstm{}.w_recurrent", k + 1), l.w_recurrent.as_slice()));
            out.push((format!("lstm{}.bias", k + 1), l.bias.as_slice()));
        }
        out.push(("out_w".into(), self.out_w.as_slice()));
        out.push(("out_b".into(), self.out_b.as_slice()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![("char_embedding".into(), self.char_embedding.as_mut_slice())];
        for (k, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{k}.kernel"), c.kernel.as_mut_slice()));
            out.push((format!("conv{k}.bias"), c.bias.as_mut_slice()));
        }
        for (k, hw) in self.highway.iter_mut().enumerate() {
            out.push((format!("highway{k}.gate_w"), hw.gate_w.as_mut_slice()));
            out.push((format!("highway{k}.gate_b"), hw.gate_b.as_mut_slice()));
            out.push((format!("highway{k}.proj_w"), hw.proj_w.as_mut_slice()));
            out.push((format!("highway{k}.proj_b"), hw.proj_b.as_mut_slice()));
        }
        for (k, l) in self.lstm.iter_mut().enumerate() {
            out.push((format!("lstm{}.w_input", k + 1), l.w_input.as_mut_slice()));
            out.push((format!("lstm{}.w_recurrent", k + 1), l.w_recurrent.as_mut_slice()));
            out.push((format!("lstm{}.bias", k + 1), l.bias.as_mut_slice()));
        }
        out.push(("out_w".into(), self.out_w.as_mut_slice()));
        out.push(("out_b".into(), self.out_b.as_mut_slice()));
        out
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks().iter().flat_map(|(_, b)| b.iter()).map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self -= lr * grad`
    pub fn sgd_step(&mut self, grad: &ModelWeights, lr: f64) {
        for ((_, w), (_, g)) in self.blocks_mut().into_iter().zip(grad.blocks()) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
    }
}

/// Weights together with the configuration and vocabularies they were
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub chars: CharVocab,
    pub words: WordVocab,
    pub weights: ModelWeights,
}

impl LanguageModel {
    pub fn new(config: ModelConfig, chars: CharVocab, words: WordVocab, weights: ModelWeights) -> Result<Self, LmError> {
        config.validate()?;
        if config.char_vocab_size != chars.len() || config.word_vocab_size != words.len() {
            return Err(LmError::VocabMismatch(format!(
                "config expects {} chars / {} words, vocabularies have {} / {}",
                config.char_vocab_size,
                config.word_vocab_size,
                chars.len(),
                words.len()
            )));
        }
        if weights.n_params() != config.n_params() {
            return Err(LmError::ShapeMismatch(format!(
                "weights hold {} parameters, config implies {}",
                weights.n_params(),
                config.n_params()
            )));
        }
        Ok(LanguageModel {
            config,
            chars,
            words,
            weights,
        })
    }

    /// Randomly initialized model; `config`'s vocabulary sizes are taken
    /// from the vocabularies.
    pub fn initialized(mut config: ModelConfig, chars: CharVocab, words: WordVocab, seed: u64, scale: f64) -> Result<Self, LmError> {
        config.char_vocab_size = chars.len();
        config.word_vocab_size = words.len();
        config.validate()?;
        let weights = ModelWeights::init(&config, seed, scale);
        Self::new(config, chars, words, weights)
    }
}
