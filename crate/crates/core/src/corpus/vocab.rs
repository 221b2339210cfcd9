use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Word/id mapping with `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<usize>,
}

/// Builds a vocabulary from raw text lines, keeping words seen at least
/// `min_freq` times. Ids are assigned by descending frequency, then
/// lexicographically.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], min_freq: usize) -> Result<Vocab> {
    if lines.is_empty() {
        return Err(Error::Invalid("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            *freq.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> =
        freq.into_iter().filter(|(w, c)| *c >= min_freq && w != PAD_TOKEN && w != UNK_TOKEN).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_words(kept))
}

impl Vocab {
    fn from_words(kept: Vec<(String, usize)>) -> Self {
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, 0];
        for (w, c) in kept {
            words.push(w);
            counts.push(c);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index, counts }
    }

    /// Vocabulary over an explicit word list (all with count zero).
    pub fn from_word_list<S: AsRef<str>>(words: &[S]) -> Self {
        let mut seen = std::collections::HashSet::new();
        let kept = words
            .iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| w != PAD_TOKEN && w != UNK_TOKEN && seen.insert(w.clone()))
            .map(|w| (w, 0))
            .collect();
        Self::from_words(kept)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Training-corpus frequency of `id`.
    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    /// Token ids for `text`, truncated or padded with `PAD` to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(text).iter().take(max_len).map(|t| self.id(t)).collect();
        ids.resize(max_len, PAD);
        ids
    }

    /// Words for `ids`, skipping padding.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().filter(|&&i| i != PAD).map(|&i| self.word(i)).collect()
    }

    /// Hex SHA-256 over the id-ordered word list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
