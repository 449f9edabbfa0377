//! Decoding character-level LSTM language-model representations from EEG.
//!
//! The crate is organised bottom-up:
//!
//! - [`stimuli`]: the three-condition stimulus corpus (sentence, jabberwocky,
//!   word-list) and its templates.
//! - [`eeg`]: epochs, subject averaging, word windows and feature vectors.
//! - [`charlm`]: the character-aware CNN/highway/3-layer LSTM language model.
//! - [`decoder`]: ridge decoding with nested λ selection and Monte-Carlo
//!   cross-validation over the analysis cases.
//! - [`stats`]: the 2-vs-2 test, MSE, permutation nulls, p-values and FDR.
//! - [`probing`]: MLP probes over sentence embeddings and the word-order probe.
//! - [`synth`]: synthetic EEG with planted linear mappings.
//! - [`report`]: result tables, plot series and published reference tables.

pub mod charlm;
pub mod decoder;
pub mod eeg;
pub mod probing;
pub mod report;
pub mod seeding;
pub mod stats;
pub mod stimuli;
pub mod synth;

pub use charlm::{Layer, LayerActivations};
pub use stimuli::Condition;
