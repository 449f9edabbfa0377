//! Checkpoint layout: one line of JSON metadata terminated by `\n`, then
//! every parameter block of [`ModelWeights::blocks`] in order as
//! little-endian `f64` (matrices column-major).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LanguageModel, ModelConfig, ModelWeights};
use super::vocab::{CharVocab, WordVocab};
use super::LmError;

pub const CHECKPOINT_FORMAT: &str = "eegdecode-charlm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    char_vocab: String,
    word_vocab: Vec<String>,
    char_vocab_sha256: String,
    word_vocab_sha256: String,
    blocks: Vec<(String, usize)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LmError + '_ {
    move |source| LmError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(model: &LanguageModel, path: &Path) -> Result<(), LmError> {
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        char_vocab: model.chars.chars().iter().collect(),
        word_vocab: model.words.words().to_vec(),
        char_vocab_sha256: model.chars.sha256(),
        word_vocab_sha256: model.words.sha256(),
        blocks: model.weights.blocks().iter().map(|(n, b)| (n.clone(), b.len())).collect(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| LmError::Corrupt(e.to_string()))?;
    bytes.push(b'\n');
    bytes.reserve(8 * model.weights.n_params());
    for (_, block) in model.weights.blocks() {
        for v in block {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<LanguageModel, LmError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| LmError::Corrupt("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split]).map_err(|e| LmError::Corrupt(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(LmError::Corrupt(format!("unknown format {:?}", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(LmError::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let cfg = header.config;
    cfg.validate()?;

    let data = &bytes[split + 1..];
    if data.len() % 8 != 0 {
        return Err(LmError::Corrupt(format!("weight section of {} bytes is not a whole number of f64", data.len())));
    }
    if data.len() / 8 != cfg.n_params() {
        return Err(LmError::ShapeMismatch(format!(
            "file holds {} parameters, header config implies {}",
            data.len() / 8,
            cfg.n_params()
        )));
    }
    let mut weights = ModelWeights::zeros(&cfg);
    let layout: Vec<(String, usize)> = weights.blocks().iter().map(|(n, b)| (n.clone(), b.len())).collect();
    if layout != header.blocks {
        return Err(LmError::ShapeMismatch("block layout differs from the one implied by the config".into()));
    }

    let chars = CharVocab::from_chars(header.char_vocab.chars());
    let words = WordVocab::from_list(header.word_vocab).ok_or_else(|| LmError::Corrupt("invalid word vocabulary".into()))?;
    if chars.sha256() != header.char_vocab_sha256 || words.sha256() != header.word_vocab_sha256 {
        return Err(LmError::Corrupt("vocabulary hash does not match stored vocabulary".into()));
    }

    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for (_, block) in weights.blocks_mut() {
        for (dst, src) in block.iter_mut().zip(&mut values) {
            *dst = src;
        }
    }
    if !weights.is_finite() {
        return Err(LmError::Corrupt("non-finite weight".into()));
    }
    LanguageModel::new(cfg, chars, words, weights)
}

/// Loads and checks that the checkpoint was built with `chars` (and
/// `words`, when given).
pub fn load_checkpoint_expecting(path: &Path, chars: &CharVocab, words: Option<&WordVocab>) -> Result<LanguageModel, LmError> {
    let model = load_checkpoint(path)?;
    if model.chars.sha256() != chars.sha256() {
        return Err(LmError::VocabMismatch(format!("{} was trained with a different character vocabulary", path.display())));
    }
    if let Some(w) = words {
        if model.words.sha256() != w.sha256() {
            return Err(LmError::VocabMismatch(format!("{} was trained with a different word vocabulary", path.display())));
        }
    }
    Ok(model)
}
