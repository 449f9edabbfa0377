//! Stimulus corpus: sentences, their jabberwocky and word-list variants, and
//! the POS templates tying them together.
//!
//! Sentence and jabberwocky stimuli follow `[Adj N V N Conj Det Adj N V N]`.
//! Word-lists reorder the sentence's words into one of two syntactically
//! infeasible templates. Determiners and conjunctions are never turned into
//! pseudo-words, so they are dropped from every condition before analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::rng_for;

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed stimulus record{}: {message}", fmt_id(*id))]
    Parse {
        line: usize,
        id: Option<u32>,
        message: String,
    },
    #[error("sentence {id} ({condition}): {reason}")]
    Validation {
        id: u32,
        condition: Condition,
        reason: String,
    },
    #[error("sentence {id}: word-list template {template:?} is infeasible for its POS multiset")]
    TemplateInfeasible { id: u32, template: WordListTemplate },
    #[error("'{surface}' is a function word; determiners and conjunctions are kept intact")]
    FunctionWord { surface: String },
}

fn fmt_id(id: Option<u32>) -> String {
    id.map(|i| format!(" (id {i})")).unwrap_or_default()
}

/// Experimental condition of a stimulus (and of the EEG recorded for it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Sentence,
    Jabberwocky,
    WordList,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Sentence, Condition::Jabberwocky, Condition::WordList];

    /// Lowercase name used in files.
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Sentence => "sentence",
            Condition::Jabberwocky => "jabberwocky",
            Condition::WordList => "wordlist",
        }
    }

    /// Abbreviation used in tables and plot legends.
    pub fn short(self) -> &'static str {
        match self {
            Condition::Sentence => "Sen",
            Condition::Jabberwocky => "Jab",
            Condition::WordList => "WL",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sentence" | "sen" => Ok(Condition::Sentence),
            "jabberwocky" | "jab" => Ok(Condition::Jabberwocky),
            "wordlist" | "wl" => Ok(Condition::WordList),
            other => Err(format!("unknown condition '{other}'")),
        }
    }
}

/// Closed part-of-speech tagset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pos {
    Adj,
    N,
    V,
    Conj,
    Det,
}

impl Pos {
    pub fn is_function(self) -> bool {
        matches!(self, Pos::Conj | Pos::Det)
    }
}

use Pos::{Adj, Conj, Det, N, V};

pub const SENTENCE_TEMPLATE: [Pos; 10] = [Adj, N, V, N, Conj, Det, Adj, N, V, N];
pub const WORDLIST_TEMPLATE_A: [Pos; 10] = [V, V, Adj, Adj, Det, Conj, N, N, N, N];
pub const WORDLIST_TEMPLATE_B: [Pos; 10] = [N, N, N, N, Det, Conj, V, V, Adj, Adj];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordListTemplate {
    A,
    B,
}

impl WordListTemplate {
    pub fn pattern(self) -> &'static [Pos; 10] {
        match self {
            WordListTemplate::A => &WORDLIST_TEMPLATE_A,
            WordListTemplate::B => &WORDLIST_TEMPLATE_B,
        }
    }

    /// Template used when none is requested: A for even ids, B for odd.
    pub fn for_id(id: u32) -> Self {
        if id.is_multiple_of(2) {
            WordListTemplate::A
        } else {
            WordListTemplate::B
        }
    }
}

/// Which characters a surface form may contain.
#[derive(Debug, Clone, Default)]
pub enum Alphabet {
    /// Any Unicode alphabetic character.
    #[default]
    Unicode,
    Chars(BTreeSet<char>),
}

impl Alphabet {
    pub fn admits(&self, surface: &str) -> bool {
        !surface.is_empty()
            && match self {
                Alphabet::Unicode => surface.chars().all(char::is_alphabetic),
                Alphabet::Chars(set) => surface.chars().all(|c| set.contains(&c)),
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub surface: String,
    pub pos: Pos,
    /// Milliseconds from the start of the sentence audio.
    pub onset_ms: f64,
}

impl Word {
    pub fn new(surface: impl Into<String>, pos: Pos, onset_ms: f64) -> Self {
        Word {
            surface: surface.into(),
            pos,
            onset_ms,
        }
    }

    pub fn is_function_word(&self) -> bool {
        self.pos.is_function()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSentence {
    pub id: u32,
    pub condition: Condition,
    pub words: Vec<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<u32>,
    /// For word-lists: `permutation[i]` is the index in the source sentence
    /// of word `i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

impl StimulusSentence {
    pub fn pos_sequence(&self) -> Vec<Pos> {
        self.words.iter().map(|w| w.pos).collect()
    }

    /// The id of the sentence this one was derived from (itself for
    /// sentence-condition stimuli).
    pub fn source(&self) -> u32 {
        self.source_id.unwrap_or(self.id)
    }

    pub fn text(&self) -> String {
        self.words
            .iter()
            .map(|w| w.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The words that enter analysis: function words removed, order kept.
pub fn content_words(s: &StimulusSentence) -> Vec<Word> {
    s.words
        .iter()
        .filter(|w| !w.is_function_word())
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sentences: BTreeMap<(Condition, u32), StimulusSentence>,
}

impl Corpus {
    /// Builds a corpus and checks templates and cross-condition alignment.
    pub fn from_sentences(
        sentences: impl IntoIterator<Item = StimulusSentence>,
        alphabet: &Alphabet,
    ) -> Result<Self, StimuliError> {
        let mut map = BTreeMap::new();
        for s in sentences {
            let key = (s.condition, s.id);
            if map.insert(key, s).is_some() {
                return Err(StimuliError::Validation {
                    id: key.1,
                    condition: key.0,
                    reason: "duplicate (condition, id)".into(),
                });
            }
        }
        let corpus = Corpus { sentences: map };
        corpus.validate(alphabet)?;
        Ok(corpus)
    }

    /// Number of sentence-condition stimuli.
    pub fn n_per_condition(&self) -> usize {
        self.by_condition(Condition::Sentence).count()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, condition: Condition, id: u32) -> Option<&StimulusSentence> {
        self.sentences.get(&(condition, id))
    }

    pub fn by_condition(&self, condition: Condition) -> impl Iterator<Item = &StimulusSentence> {
        self.sentences
            .range((condition, 0)..=(condition, u32::MAX))
            .map(|(_, s)| s)
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<(), StimuliError> {
        for s in self.sentences.values() {
            let fail = |reason: String| StimuliError::Validation {
                id: s.id,
                condition: s.condition,
                reason,
            };
            for w in &s.words {
                if !alphabet.admits(&w.surface) {
                    return Err(fail(format!("surface '{}' has characters outside the alphabet", w.surface)));
                }
                if !(w.onset_ms.is_finite() && w.onset_ms >= 0.0) {
                    return Err(fail(format!("word '{}' has invalid onset {}", w.surface, w.onset_ms)));
                }
            }
            let pos = s.pos_sequence();
            match s.condition {
                Condition::Sentence => {
                    if pos != SENTENCE_TEMPLATE {
                        return Err(fail(format!("POS sequence {pos:?} does not match the sentence template")));
                    }
                }
                Condition::Jabberwocky | Condition::WordList => {
                    if self.get(Condition::Sentence, s.id).is_none() {
                        return Err(fail("no sentence-condition counterpart with the same id".into()));
                    }
                    let src = self
                        .get(Condition::Sentence, s.source())
                        .ok_or_else(|| fail(format!("source sentence {} not found", s.source())))?;
                    if s.condition == Condition::Jabberwocky {
                        if s.words.len() != src.words.len() {
                            return Err(fail(format!(
                                "has {} words but its source has {}",
                                s.words.len(),
                                src.words.len()
                            )));
                        }
                        if pos != src.pos_sequence() {
                            return Err(fail("POS sequence differs from its source".into()));
                        }
                    } else {
                        validate_wordlist(s, src).map_err(fail)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn validate_wordlist(s: &StimulusSentence, src: &StimulusSentence) -> Result<(), String> {
    let pos = s.pos_sequence();
    if pos != WORDLIST_TEMPLATE_A && pos != WORDLIST_TEMPLATE_B {
        return Err(format!("POS sequence {pos:?} matches neither word-list template"));
    }
    let mut a: Vec<&str> = s.words.iter().map(|w| w.surface.as_str()).collect();
    let mut b: Vec<&str> = src.words.iter().map(|w| w.surface.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err("surfaces are not a rearrangement of the source's".into());
    }
    if let Some(perm) = &s.permutation {
        if perm.len() != s.words.len() {
            return Err("permutation length differs from word count".into());
        }
        let mut seen = vec![false; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= seen.len() || seen[p] {
                return Err("permutation is not a bijection".into());
            }
            seen[p] = true;
            if s.words[i].surface != src.words[p].surface {
                return Err(format!("permutation maps word {i} to a different source surface"));
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u32,
    condition: Condition,
    #[serde(default)]
    source_id: Option<u32>,
    #[serde(default)]
    permutation: Option<Vec<usize>>,
    words: Vec<Word>,
}

/// Parses JSON-lines stimulus text. Blank lines are skipped.
pub fn parse_corpus(text: &str, alphabet: &Alphabet) -> Result<Corpus, StimuliError> {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| StimuliError::Parse {
            line: i + 1,
            id: serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id")?.as_u64())
                .map(|v| v as u32),
            message: e.to_string(),
        })?;
        sentences.push(StimulusSentence {
            id: rec.id,
            condition: rec.condition,
            words: rec.words,
            source_id: rec.source_id,
            permutation: rec.permutation,
        });
    }
    Corpus::from_sentences(sentences, alphabet)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, StimuliError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| StimuliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, &Alphabet::default())
}

/// Serializes a corpus in the JSON-lines stimulus format, ordered by
/// (condition, id).
pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in corpus.sentences.values() {
        out.push_str(&serde_json::to_string(s).expect("stimulus serialization"));
        out.push('\n');
    }
    out
}

/// Reorders a sentence into a word-list following `template`.
///
/// Slots are filled class by class; which of several same-POS words lands
/// in which slot is a seeded shuffle. Word `i` of the result keeps the onset
/// of slot `i` in the source.
pub fn make_wordlist(
    s: &StimulusSentence,
    seed: u64,
    template: WordListTemplate,
) -> Result<StimulusSentence, StimuliError> {
    if s.condition != Condition::Sentence {
        return Err(StimuliError::Validation {
            id: s.id,
            condition: s.condition,
            reason: "word-lists are derived from sentence-condition stimuli".into(),
        });
    }
    let pattern = template.pattern();
    let mut have = s.pos_sequence();
    let mut want = pattern.to_vec();
    have.sort_unstable();
    want.sort_unstable();
    if have != want {
        return Err(StimuliError::TemplateInfeasible { id: s.id, template });
    }

    let mut rng = rng_for(seed, &[u64::from(s.id)]);
    let mut pools: BTreeMap<Pos, Vec<usize>> = BTreeMap::new();
    for (i, w) in s.words.iter().enumerate() {
        pools.entry(w.pos).or_default().push(i);
    }
    for pool in pools.values_mut() {
        pool.shuffle(&mut rng);
    }
    let mut permutation = Vec::with_capacity(pattern.len());
    let mut words = Vec::with_capacity(pattern.len());
    for (slot, pos) in pattern.iter().enumerate() {
        let src = pools.get_mut(pos).and_then(Vec::pop).expect("multiset checked");
        permutation.push(src);
        let mut w = s.words[src].clone();
        w.onset_ms = s.words[slot].onset_ms;
        words.push(w);
    }
    Ok(StimulusSentence {
        id: s.id,
        condition: Condition::WordList,
        words,
        source_id: Some(s.id),
        permutation: Some(permutation),
    })
}

const VOWELS: &[u8] = b"aeiou";
const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwxyz";

fn letter_class(c: char) -> Option<&'static [u8]> {
    let lc = c.to_ascii_lowercase();
    if !lc.is_ascii_lowercase() {
        None
    } else if VOWELS.contains(&(lc as u8)) {
        Some(VOWELS)
    } else {
        Some(CONSONANTS)
    }
}

/// Pseudo-word surrogate: keeps length, POS and the final two letters, and
/// replaces every other ASCII letter by a different letter of the same class
/// (vowel or consonant), preserving case. Non-ASCII letters are kept.
///
/// Words shorter than three letters keep only what is left after
/// substituting at least one position, and that substitution may draw the
/// original letter.
pub fn pseudoword_transform(w: &Word, seed: u64) -> Result<Word, StimuliError> {
    if w.is_function_word() {
        return Err(StimuliError::FunctionWord {
            surface: w.surface.clone(),
        });
    }
    let chars: Vec<char> = w.surface.chars().collect();
    let n = chars.len();
    let keep_suffix = 2.min(n.saturating_sub(1));
    let must_differ = n >= 3;
    let mut rng = rng_for(seed, &[]);
    let out: String = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if i >= n - keep_suffix {
                return c;
            }
            let Some(class) = letter_class(c) else {
                return c;
            };
            let lc = c.to_ascii_lowercase() as u8;
            let pick = loop {
                let cand = class[rng.random_range(0..class.len())];
                if !must_differ || cand != lc {
                    break cand as char;
                }
            };
            if c.is_ascii_uppercase() {
                pick.to_ascii_uppercase()
            } else {
                pick
            }
        })
        .collect();
    Ok(Word {
        surface: out,
        pos: w.pos,
        onset_ms: w.onset_ms,
    })
}

/// The jabberwocky counterpart of a sentence: content words become
/// pseudo-words, function words and timing stay as they are.
pub fn make_jabberwocky(s: &StimulusSentence, seed: u64) -> Result<StimulusSentence, StimuliError> {
    let words = s
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if w.is_function_word() {
                Ok(w.clone())
            } else {
                pseudoword_transform(w, crate::seeding::derive_seed(seed, &[u64::from(s.id), i as u64]))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StimulusSentence {
        id: s.id,
        condition: Condition::Jabberwocky,
        words,
        source_id: Some(s.id),
        permutation: None,
    })
}

/// Word pools for generating template sentences.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub adjectives: Vec<String>,
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub determiners: Vec<String>,
    pub conjunctions: Vec<String>,
}

impl Lexicon {
    /// A small bundled Dutch lexicon (plural nouns and verbs, inflected
    /// adjectives) in the style of the stimulus set.
    pub fn dutch() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Lexicon {
            adjectives: v(&[
                "lange", "lieve", "kleine", "grote", "oude", "jonge", "mooie", "sterke", "stille", "warme",
                "koude", "snelle", "trage", "blije", "boze", "slimme", "dure", "zware", "lichte", "donkere",
            ]),
            nouns: v(&[
                "mannen", "huisjes", "honden", "planken", "vrouwen", "katten", "boeken", "tafels", "stoelen",
                "bomen", "kinderen", "vogels", "bloemen", "schepen", "fietsen", "koeien", "paarden", "muren",
                "deuren", "appels",
            ]),
            verbs: v(&[
                "bouwen", "brengen", "dragen", "zoeken", "vinden", "maken", "kopen", "lezen", "schilderen",
                "tekenen", "breken", "halen", "vangen", "duwen", "trekken", "wassen", "verven", "bewaren",
                "sturen", "tillen",
            ]),
            determiners: v(&["de"]),
            conjunctions: v(&["en"]),
        }
    }

    fn pool(&self, pos: Pos) -> &[String] {
        match pos {
            Adj => &self.adjectives,
            N => &self.nouns,
            V => &self.verbs,
            Det => &self.determiners,
            Conj => &self.conjunctions,
        }
    }
}

/// Generates a full three-condition corpus of `n` template sentences
/// (ids `1..=n`). Word `k` of every stimulus starts at `k * slot_ms`.
pub fn generate_corpus(n: u32, seed: u64, lexicon: &Lexicon, slot_ms: f64) -> Result<Corpus, StimuliError> {
    let mut out = Vec::with_capacity(3 * n as usize);
    for id in 1..=n {
        let mut rng = rng_for(seed, &[0, u64::from(id)]);
        let words = SENTENCE_TEMPLATE
            .iter()
            .enumerate()
            .map(|(k, &pos)| {
                let pool = lexicon.pool(pos);
                Word::new(pool[rng.random_range(0..pool.len())].clone(), pos, k as f64 * slot_ms)
            })
            .collect();
        let s = StimulusSentence {
            id,
            condition: Condition::Sentence,
            words,
            source_id: None,
            permutation: None,
        };
        let jab = make_jabberwocky(&s, crate::seeding::derive_seed(seed, &[1]))?;
        let wl = make_wordlist(&s, crate::seeding::derive_seed(seed, &[2]), WordListTemplate::for_id(id))?;
        out.extend([s, jab, wl]);
    }
    Corpus::from_sentences(out, &Alphabet::default())
}
