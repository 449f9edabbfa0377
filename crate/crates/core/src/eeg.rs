//! EEG epochs and word-level featurization.
//!
//! An epoch is a channels × samples recording for one (subject, sentence).
//! Decoding only ever sees subject-averaged epochs; from those, the first
//! `window_ms` after each content-word onset is cut out and flattened
//! channel-major into one feature vector (64 × 200 = 12800 at 500 Hz and
//! 400 ms).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stimuli::{content_words, Condition, Corpus};

#[derive(Debug, Error)]
pub enum EegError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed epoch file: {message}")]
    Format { path: String, message: String },
    #[error("{path}: shape mismatch: {message}")]
    ShapeMismatch { path: String, message: String },
    #[error("{path}: non-finite sample at channel {channel}, sample {sample}")]
    NonFinite { path: String, channel: usize, sample: usize },
    #[error("sentence {sentence_id} ({condition}): epochs to average have different shapes")]
    InconsistentGroup { sentence_id: u32, condition: Condition },
    #[error("window of {window_samples} samples at sample {start} overruns epoch of {samples} samples")]
    WindowOverrun { start: usize, window_samples: usize, samples: usize },
    #[error("{window_ms} ms at {rate_hz} Hz is not a whole number of samples")]
    FractionalWindow { window_ms: f64, rate_hz: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no averaged epoch for sentence {sentence_id} ({condition})")]
    MissingEpoch { sentence_id: u32, condition: Condition },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubjectId {
    Subject(u32),
    Averaged,
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectId::Subject(s) => write!(f, "{s}"),
            SubjectId::Averaged => f.write_str("avg"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegEpoch {
    pub subject: SubjectId,
    pub sentence_id: u32,
    pub condition: Condition,
    pub sampling_rate_hz: u32,
    /// channels × samples, microvolts.
    pub data: DMatrix<f64>,
}

impl EegEpoch {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    /// The epoch in the CSV file format.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# channels={} rate_hz={} subject={} sentence={} condition={}\n",
            self.channels(),
            self.sampling_rate_hz,
            self.subject,
            self.sentence_id,
            self.condition
        );
        for c in 0..self.channels() {
            let row: Vec<String> = (0..self.samples()).map(|s| format!("{:?}", self.data[(c, s)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EegError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| EegError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Parses one epoch file. `path` is only used in error messages.
pub fn parse_epoch(text: &str, path: &str) -> Result<EegEpoch, EegError> {
    let format = |message: String| EegError::Format {
        path: path.to_string(),
        message,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| format("missing '#' header line".into()))?;
    let mut fields = BTreeMap::new();
    for tok in header.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format(format!("header token '{tok}' is not key=value")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| format(format!("header lacks '{k}'")));
    let num = |k: &str| -> Result<u32, EegError> {
        get(k)?.parse().map_err(|_| format(format!("header field '{k}' is not an integer")))
    };
    let channels = num("channels")? as usize;
    let rate = num("rate_hz")?;
    let sentence_id = num("sentence")?;
    let subject = match get("subject")? {
        "avg" | "AVERAGED" => SubjectId::Averaged,
        s => SubjectId::Subject(s.parse().map_err(|_| format(format!("bad subject '{s}'")))?),
    };
    let condition: Condition = get("condition")?.parse().map_err(format)?;
    if channels == 0 || rate == 0 {
        return Err(format("channels and rate_hz must be positive".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(channels);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format(format!("row {}: {e}", rows.len())))?;
        rows.push(row);
    }
    if rows.len() != channels {
        return Err(EegError::ShapeMismatch {
            path: path.into(),
            message: format!("header says {channels} channels, file has {} rows", rows.len()),
        });
    }
    let samples = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != samples) {
        return Err(EegError::ShapeMismatch {
            path: path.into(),
            message: format!("row {bad} has {} samples, row 0 has {samples}", rows[bad].len()),
        });
    }
    for (c, r) in rows.iter().enumerate() {
        if let Some(s) = r.iter().position(|v| !v.is_finite()) {
            return Err(EegError::NonFinite {
                path: path.into(),
                channel: c,
                sample: s,
            });
        }
    }
    Ok(EegEpoch {
        subject,
        sentence_id,
        condition,
        sampling_rate_hz: rate,
        data: DMatrix::from_fn(channels, samples, |c, s| rows[c][s]),
    })
}

/// Loads every epoch listed in a JSON manifest (an array of paths, relative
/// paths resolved against the manifest's directory). All epochs must agree
/// on channel count and sampling rate.
pub fn load_epochs(manifest_path: impl AsRef<Path>) -> Result<Vec<EegEpoch>, EegError> {
    let manifest_path = manifest_path.as_ref();
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| EegError::Io { path: p, source }
    };
    let text = fs::read_to_string(manifest_path).map_err(io(manifest_path))?;
    let files: Vec<PathBuf> = serde_json::from_str(&text).map_err(|e| EegError::Format {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<EegEpoch> = Vec::with_capacity(files.len());
    for f in files {
        let full = if f.is_absolute() { f } else { base.join(f) };
        let text = fs::read_to_string(&full).map_err(io(&full))?;
        let name = full.display().to_string();
        let epoch = parse_epoch(&text, &name)?;
        if let Some(first) = out.first() {
            if epoch.channels() != first.channels() || epoch.sampling_rate_hz != first.sampling_rate_hz {
                return Err(EegError::ShapeMismatch {
                    path: name,
                    message: format!(
                        "{} channels at {} Hz, expected {} channels at {} Hz",
                        epoch.channels(),
                        epoch.sampling_rate_hz,
                        first.channels(),
                        first.sampling_rate_hz
                    ),
                });
            }
        }
        out.push(epoch);
    }
    Ok(out)
}

/// Writes epochs plus a manifest listing them (relative file names).
pub fn save_epochs(dir: impl AsRef<Path>, epochs: &[EegEpoch]) -> Result<PathBuf, EegError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| EegError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut names = Vec::with_capacity(epochs.len());
    for e in epochs {
        let name = format!("{}_s{:03}_subj{}.csv", e.condition, e.sentence_id, e.subject);
        e.save(dir.join(&name))?;
        names.push(name);
    }
    let manifest = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&names).expect("manifest serialization");
    fs::write(&manifest, json + "\n").map_err(|source| EegError::Io {
        path: manifest.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

/// Compensated (Neumaier) running sum.
#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// One averaged epoch per (condition, sentence), sample-wise mean over
/// subjects. Output is ordered by (condition, sentence id).
pub fn average_subjects(epochs: &[EegEpoch]) -> Result<Vec<EegEpoch>, EegError> {
    let mut groups: BTreeMap<(Condition, u32), Vec<&EegEpoch>> = BTreeMap::new();
    for e in epochs {
        groups.entry((e.condition, e.sentence_id)).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|((condition, sentence_id), group)| {
            let first = group[0];
            let shape = first.data.shape();
            if group
                .iter()
                .any(|e| e.data.shape() != shape || e.sampling_rate_hz != first.sampling_rate_hz)
            {
                return Err(EegError::InconsistentGroup { sentence_id, condition });
            }
            let n = group.len() as f64;
            let data = DMatrix::from_fn(shape.0, shape.1, |c, s| {
                let mut acc = Neumaier::default();
                for e in &group {
                    acc.add(e.data[(c, s)]);
                }
                acc.value() / n
            });
            Ok(EegEpoch {
                subject: SubjectId::Averaged,
                sentence_id,
                condition,
                sampling_rate_hz: first.sampling_rate_hz,
                data,
            })
        })
        .collect()
}

/// Number of samples in `window_ms` at `rate_hz`; must be whole.
pub fn window_samples(window_ms: f64, rate_hz: u32) -> Result<usize, EegError> {
    let exact = window_ms * f64::from(rate_hz) / 1000.0;
    let n = exact.round();
    if (exact - n).abs() > 1e-9 || n < 1.0 {
        return Err(EegError::FractionalWindow { window_ms, rate_hz });
    }
    Ok(n as usize)
}

/// Sample index of an onset, rounded to the nearest sample.
pub fn onset_sample(onset_ms: f64, rate_hz: u32) -> usize {
    (onset_ms * f64::from(rate_hz) / 1000.0).round().max(0.0) as usize
}

/// The channels × window slice starting at the word onset.
pub fn extract_word_window(epoch: &EegEpoch, onset_ms: f64, window_ms: f64) -> Result<DMatrix<f64>, EegError> {
    let n = window_samples(window_ms, epoch.sampling_rate_hz)?;
    let start = onset_sample(onset_ms, epoch.sampling_rate_hz);
    if start + n > epoch.samples() {
        return Err(EegError::WindowOverrun {
            start,
            window_samples: n,
            samples: epoch.samples(),
        });
    }
    Ok(epoch.data.columns(start, n).into_owned())
}

/// Row-major flattening: all of channel 0's samples, then channel 1's, ...
pub fn flatten_features(window: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = window.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        out.extend(window.row(r).iter());
    }
    out
}

/// Inverse of [`flatten_features`].
pub fn unflatten_features(vector: &[f64], channels: usize) -> Result<DMatrix<f64>, EegError> {
    if channels == 0 || !vector.len().is_multiple_of(channels) {
        return Err(EegError::DimensionMismatch {
            expected: channels,
            got: vector.len(),
        });
    }
    Ok(DMatrix::from_row_slice(channels, vector.len() / channels, vector))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordFeature {
    pub sentence_id: u32,
    pub condition: Condition,
    /// Index into the sentence's content words.
    pub word_index: usize,
    pub vector: Vec<f64>,
}

/// Features for every content word of every stimulus in `condition`, taken
/// from the averaged epochs. Ordered by (sentence id, word index).
pub fn word_features(
    averaged: &[EegEpoch],
    corpus: &Corpus,
    condition: Condition,
    window_ms: f64,
) -> Result<Vec<WordFeature>, EegError> {
    let by_sentence: BTreeMap<u32, &EegEpoch> = averaged
        .iter()
        .filter(|e| e.condition == condition)
        .map(|e| (e.sentence_id, e))
        .collect();
    let mut out = Vec::new();
    for s in corpus.by_condition(condition) {
        let epoch = by_sentence.get(&s.id).ok_or(EegError::MissingEpoch {
            sentence_id: s.id,
            condition,
        })?;
        for (k, w) in content_words(s).iter().enumerate() {
            let window = extract_word_window(epoch, w.onset_ms, window_ms)?;
            out.push(WordFeature {
                sentence_id: s.id,
                condition,
                word_index: k,
                vector: flatten_features(&window),
            });
        }
    }
    Ok(out)
}

/// Per-dimension location and scale estimated on training rows.
///
/// Dimensions whose spread is numerically zero have `scale == 0` and are
/// mapped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Column statistics of an n × D matrix (population standard deviation).
    pub fn fit(x: &DMatrix<f64>) -> Self {
        Self::fit_rows(x, &(0..x.nrows()).collect::<Vec<_>>())
    }

    /// Column statistics over the selected rows only.
    pub fn fit_rows(x: &DMatrix<f64>, rows: &[usize]) -> Self {
        let n = rows.len().max(1) as f64;
        let (mean, scale) = x
            .column_iter()
            .map(|col| {
                let m = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
                let var = rows.iter().map(|&r| (col[r] - m).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                let sd = if sd <= 1e-12 * (1.0 + m.abs()) { 0.0 } else { sd };
                (m, sd)
            })
            .unzip();
        Standardization { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes the selected rows of `x` into a new matrix.
    pub fn apply_rows(&self, x: &DMatrix<f64>, rows: &[usize]) -> Result<DMatrix<f64>, EegError> {
        if x.ncols() != self.dim() {
            return Err(EegError::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(rows.len(), x.ncols(), |i, j| {
            let s = self.scale[j];
            if s == 0.0 {
                0.0
            } else {
                (x[(rows[i], j)] - self.mean[j]) / s
            }
        }))
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, EegError> {
        self.apply_rows(x, &(0..x.nrows()).collect::<Vec<_>>())
    }
}

/// Stacks feature vectors into an n × D matrix.
pub fn feature_matrix(features: &[WordFeature]) -> Result<DMatrix<f64>, EegError> {
    let d = features.first().map_or(0, |f| f.vector.len());
    if let Some(bad) = features.iter().find(|f| f.vector.len() != d) {
        return Err(EegError::DimensionMismatch {
            expected: d,
            got: bad.vector.len(),
        });
    }
    Ok(DMatrix::from_fn(features.len(), d, |i, j| features[i].vector[j]))
}

/// Z-scores word features, estimating statistics from `features` unless
/// `stats` is supplied (the test-fold case).
pub fn standardize(
    features: &[WordFeature],
    stats: Option<&Standardization>,
) -> Result<(Vec<WordFeature>, Standardization), EegError> {
    let x = feature_matrix(features)?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => Standardization::fit(&x),
    };
    let z = stats.apply(&x)?;
    let out = features
        .iter()
        .enumerate()
        .map(|(i, f)| WordFeature {
            vector: z.row(i).iter().copied().collect(),
            ..f.clone()
        })
        .collect();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(subject: u32, value: f64, channels: usize, samples: usize) -> EegEpoch {
        EegEpoch {
            subject: SubjectId::Subject(subject),
            sentence_id: 1,
            condition: Condition::Sentence,
            sampling_rate_hz: 500,
            data: DMatrix::from_element(channels, samples, value),
        }
    }

    #[test]
    fn averaging_constants() {
        let avg = average_subjects(&[epoch(1, 1.0, 2, 4), epoch(2, 3.0, 2, 4)]).unwrap();
        assert_eq!(avg.len(), 1);
        assert_eq!(avg[0].subject, SubjectId::Averaged);
        assert!(avg[0].data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn averaging_single_subject_is_identity() {
        let mut e = epoch(4, 0.0, 3, 5);
        e.data = DMatrix::from_fn(3, 5, |c, s| (c * 10 + s) as f64 * 0.37);
        let avg = average_subjects(std::slice::from_ref(&e)).unwrap();
        assert_eq!(avg[0].data, e.data);
    }

    #[test]
    fn averaging_rejects_mixed_shapes() {
        let r = average_subjects(&[epoch(1, 1.0, 2, 4), epoch(2, 3.0, 3, 4)]);
        assert!(matches!(r, Err(EegError::InconsistentGroup { sentence_id: 1, .. })));
    }

    #[test]
    fn window_positions() {
        let mut e = epoch(1, 0.0, 2, 1000);
        e.data = DMatrix::from_fn(2, 1000, |c, s| (c * 1000 + s) as f64);
        let w = extract_word_window(&e, 0.0, 400.0).unwrap();
        assert_eq!(w.shape(), (2, 200));
        assert_eq!(w[(0, 0)], 0.0);
        assert_eq!(w[(0, 199)], 199.0);
        let w = extract_word_window(&e, 1000.0, 400.0).unwrap();
        assert_eq!(w[(0, 0)], 500.0);
        assert_eq!(w[(1, 199)], 1699.0);
        // 1 ms before the end of a 2000 ms epoch
        assert!(matches!(
            extract_word_window(&e, 1999.0, 400.0),
            Err(EegError::WindowOverrun { .. })
        ));
    }

    #[test]
    fn fractional_window_rejected() {
        assert!(matches!(window_samples(1.0, 500), Err(EegError::FractionalWindow { .. })));
        assert_eq!(window_samples(400.0, 500).unwrap(), 200);
    }

    #[test]
    fn flatten_layout_and_roundtrip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = flatten_features(&m);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unflatten_features(&v, 2).unwrap(), m);
        let big = DMatrix::<f64>::zeros(64, 200);
        assert_eq!(flatten_features(&big).len(), 12800);
    }

    #[test]
    fn standardize_edge_cases() {
        let feats: Vec<WordFeature> = (0..6)
            .map(|i| WordFeature {
                sentence_id: i,
                condition: Condition::Sentence,
                word_index: 0,
                vector: vec![i as f64 * 2.5 + 1.0, 7.0, ((i * 7) % 5) as f64],
            })
            .collect();
        let (z, stats) = standardize(&feats, None).unwrap();
        assert_eq!(stats.scale[1], 0.0);
        for d in 0..3 {
            let m: f64 = z.iter().map(|f| f.vector[d]).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-10);
        }
        assert!(z.iter().all(|f| f.vector[1] == 0.0));
        let (zz, _) = standardize(&z, None).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            for (x, y) in a.vector.iter().zip(&b.vector) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        let bad = Standardization {
            mean: vec![0.0; 2],
            scale: vec![1.0; 2],
        };
        assert!(matches!(standardize(&feats, Some(&bad)), Err(EegError::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let mut e = epoch(3, 0.0, 3, 7);
        e.data = DMatrix::from_fn(3, 7, |c, s| ((c * 7 + s) as f64).sin() * 1e-3 + 1.0 / 3.0);
        let back = parse_epoch(&e.to_csv(), "mem").unwrap();
        assert_eq!(back, e);
        let mut avg = e.clone();
        avg.subject = SubjectId::Averaged;
        assert_eq!(parse_epoch(&avg.to_csv(), "mem").unwrap(), avg);
    }

    #[test]
    fn parse_rejects_non_finite_and_bad_rows() {
        let text = "# channels=2 rate_hz=500 subject=1 sentence=1 condition=sentence\n1,2\n3,NaN\n";
        assert!(matches!(parse_epoch(text, "f"), Err(EegError::NonFinite { channel: 1, sample: 1, .. })));
        let text = "# channels=3 rate_hz=500 subject=1 sentence=1 condition=sentence\n1,2\n3,4\n";
        assert!(matches!(parse_epoch(text, "f"), Err(EegError::ShapeMismatch { .. })));
    }
}
