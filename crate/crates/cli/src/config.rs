//! TOML run configuration. Relative paths resolve against the directory
//! of the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use eegdecode::charlm::{ModelConfig, TrainConfig};
use eegdecode::decoder::{AnalysisCase, McConfig};
use eegdecode::probing::{MlpConfig, PlantedProbeConfig};
use eegdecode::stats::{Granularity, MIN_PERMUTATIONS};
use eegdecode::synth::SynthConfig;
use eegdecode::Layer;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Stimulus JSON lines; generated from `[stimuli]` when absent.
    pub corpus: Option<PathBuf>,
    /// Language-model training text, one sentence per line.
    pub lm_corpus: Option<PathBuf>,
    /// Directory holding `manifest.json` and the epoch files.
    pub epochs: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    pub probe_tasks: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimuliSection {
    pub n_sentences: u32,
    pub seed: u64,
    pub slot_ms: f64,
}

impl Default for StimuliSection {
    fn default() -> Self {
        StimuliSection {
            n_sentences: 80,
            seed: 0,
            slot_ms: 500.0,
        }
    }
}

/// Architecture; vocabulary sizes come from the training text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub char_embed_dim: usize,
    pub max_word_len: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: Vec<usize>,
    pub highway_layers: usize,
    pub lstm_hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = ModelConfig::small(0, 0);
        ModelSection {
            char_embed_dim: s.char_embed_dim,
            max_word_len: s.max_word_len,
            filter_widths: s.filter_widths,
            filters_per_width: s.filters_per_width,
            highway_layers: s.highway_layers,
            lstm_hidden_dim: s.lstm_hidden_dim,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            char_embed_dim: self.char_embed_dim,
            max_word_len: self.max_word_len,
            filter_widths: self.filter_widths.clone(),
            filters_per_width: self.filters_per_width.clone(),
            highway_layers: self.highway_layers,
            lstm_hidden_dim: self.lstm_hidden_dim,
            ..ModelConfig::small(0, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Post-onset EEG window per word.
    pub window_ms: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection { window_ms: 400.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationSection {
    pub n_perms: usize,
    /// Runs with fewer permutations are rejected.
    pub min_permutations: usize,
    /// Monte-Carlo trials per permuted refit. The reported score averages
    /// all `decoder.n_trials`; p-values compare the mean over these first
    /// trials, whose splits the null shares. Capped at `decoder.n_trials`.
    pub null_trials: usize,
    pub granularity: Granularity,
}

impl Default for PermutationSection {
    fn default() -> Self {
        PermutationSection {
            n_perms: MIN_PERMUTATIONS,
            min_permutations: MIN_PERMUTATIONS,
            null_trials: 20,
            granularity: Granularity::Sentence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub mlp: MlpConfig,
    /// Use the bundled planted tasks instead of `paths.probe_tasks`.
    pub synthetic: bool,
    pub planted: PlantedProbeConfig,
    /// Also run the word-order probe on the Sentence stimuli.
    pub word_order: bool,
    pub pairs_per_sentence: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            mlp: MlpConfig::default(),
            synthetic: false,
            planted: PlantedProbeConfig::default(),
            word_order: false,
            pairs_per_sentence: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub alpha: f64,
    pub threads: usize,
    pub layers: Vec<Layer>,
    /// `A1`, `A2.1`, ...
    pub cases: Vec<String>,
    pub paths: Paths,
    pub stimuli: StimuliSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub features: FeatureSection,
    pub decoder: McConfig,
    pub permutation: PermutationSection,
    pub synth: SynthConfig,
    pub probe: ProbeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            alpha: 0.05,
            threads: 0,
            layers: Layer::ALL.to_vec(),
            cases: vec!["A1".into(), "A2".into(), "A3".into()],
            paths: Paths {
                epochs: "epochs".into(),
                checkpoint: "model.ckpt".into(),
                output: "results".into(),
                ..Paths::default()
            },
            stimuli: StimuliSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            features: FeatureSection::default(),
            decoder: McConfig::default(),
            permutation: PermutationSection::default(),
            synth: SynthConfig::default(),
            probe: ProbeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.resolve(base);
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).with_context(|| format!("in {}", path.display()))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        paths.corpus.iter_mut().for_each(fix);
        paths.lm_corpus.iter_mut().for_each(fix);
        fix(&mut paths.epochs);
        fix(&mut paths.checkpoint);
        fix(&mut paths.output);
        paths.probe_tasks.iter_mut().for_each(fix);
    }

    /// Sets the seed of every randomized stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.stimuli.seed = seed;
        self.train.seed = seed;
        self.decoder.seed = seed;
        self.synth.seed = seed;
        self.probe.mlp.seed = seed;
        self.probe.planted.seed = seed;
    }

    pub fn selected_cases(&self) -> Result<Vec<AnalysisCase>> {
        let mut out = Vec::new();
        for s in &self.cases {
            for c in AnalysisCase::parse_selection(s).map_err(anyhow::Error::msg)? {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha {} is not in (0, 1)", self.alpha);
        }
        if self.layers.is_empty() {
            bail!("no layers selected");
        }
        self.selected_cases()?;
        let mut model = self.model.to_config();
        model.char_vocab_size = 1;
        model.word_vocab_size = 1;
        model.validate().map_err(|e| anyhow::anyhow!("model: {e}"))?;
        self.train.validate().map_err(|e| anyhow::anyhow!("train: {e}"))?;
        self.decoder.validate().map_err(|e| anyhow::anyhow!("decoder: {e}"))?;
        self.synth.validate().map_err(|e| anyhow::anyhow!("synth: {e}"))?;
        self.probe.mlp.validate().map_err(|e| anyhow::anyhow!("probe: {e}"))?;
        if self.permutation.null_trials == 0 {
            bail!("permutation.null_trials must be at least 1");
        }
        if self.permutation.n_perms > 0 && self.permutation.n_perms < self.permutation.min_permutations {
            bail!(
                "permutation.n_perms {} is below permutation.min_permutations {}",
                self.permutation.n_perms,
                self.permutation.min_permutations
            );
        }
        if self.features.window_ms.is_nan() || self.features.window_ms <= 0.0 {
            bail!("features.window_ms must be positive");
        }
        if self.stimuli.n_sentences == 0 {
            bail!("stimuli.n_sentences must be positive");
        }
        Ok(())
    }
}

pub fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}
