//! Character and word vocabularies.

use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

pub const PAD: usize = 0;
pub const BOW: usize = 1;
pub const EOW: usize = 2;
pub const UNK_CHAR: usize = 3;
const RESERVED_CHARS: usize = 4;

pub const UNK_WORD: usize = 0;
pub const EOS_WORD: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

/// Characters seen in training plus four reserved ids (padding, word
/// start, word end, unknown character).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + RESERVED_CHARS)).collect();
        CharVocab { chars, index }
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(words.into_iter().flat_map(str::chars))
    }

    pub fn len(&self) -> usize {
        self.chars.len() + RESERVED_CHARS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_CHAR)
    }

    /// `[BOW] chars.. [EOW]` padded with `PAD` to `max_word_len`. Long words
    /// are cut so that `EOW` still fits. Unknown characters map to
    /// `UNK_CHAR`.
    pub fn encode_word(&self, surface: &str, max_word_len: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(max_word_len);
        ids.push(BOW);
        ids.extend(surface.chars().take(max_word_len.saturating_sub(2)).map(|c| self.id(c)));
        ids.push(EOW);
        ids.resize(max_word_len, PAD);
        ids
    }

    pub fn sha256(&self) -> String {
        let s: String = self.chars.iter().collect();
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}

/// Output vocabulary. Id 0 is `<unk>`, id 1 is `</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordVocab {
    /// Builds from tokens in first-seen order after the two reserved
    /// entries.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
        let mut index: HashMap<String, usize> = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        for t in tokens {
            if !index.contains_key(t) {
                index.insert(t.to_string(), words.len());
                words.push(t.to_string());
            }
        }
        WordVocab { words, index }
    }

    /// Rebuilds a vocabulary from a stored word list (must start with the
    /// reserved entries).
    pub fn from_list(words: Vec<String>) -> Option<Self> {
        if words.len() < 2 || words[UNK_WORD] != UNK_TOKEN || words[EOS_WORD] != EOS_TOKEN {
            return None;
        }
        let index: HashMap<String, usize> = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        (index.len() == words.len()).then_some(WordVocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_WORD)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.words.join("\n").as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_word_is_padded() {
        let v = CharVocab::from_chars("de".chars());
        let (d, e) = (v.id('d'), v.id('e'));
        assert_eq!(v.encode_word("de", 8), vec![BOW, d, e, EOW, PAD, PAD, PAD, PAD]);
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let v = CharVocab::from_chars("abc".chars());
        let ids = v.encode_word("wonzen", 10);
        assert_eq!(ids[0], BOW);
        assert!(ids[1..7].iter().all(|&i| i == UNK_CHAR));
        assert_eq!(ids[7], EOW);
    }

    #[test]
    fn long_word_keeps_eow() {
        let v = CharVocab::from_chars("abcdefghij".chars());
        let ids = v.encode_word("abcdefghij", 6);
        assert_eq!(ids.len(), 6);
        assert_eq!(ids[0], BOW);
        assert_eq!(ids[5], EOW);
        assert_eq!(ids[1], v.id('a'));
        assert_eq!(ids[4], v.id('d'));
    }

    #[test]
    fn word_vocab_reserved_ids() {
        let v = WordVocab::from_tokens(["a", "b", "a"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("zzz"), UNK_WORD);
        assert_eq!(v.id(EOS_TOKEN), EOS_WORD);
        assert_eq!(WordVocab::from_list(v.words().to_vec()).unwrap(), v);
    }
}
