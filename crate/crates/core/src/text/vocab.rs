use std::collections::HashMap;
use std::fmt::Write as _;

use super::TextError;

/// Token id assigned to anything outside the vocabulary.
pub const UNKNOWN_ID: u32 = u32::MAX;

/// Token → id mapping. Ids are dense in `0..len()` and ordered by descending
/// frequency, ties broken lexicographically, so a vocabulary built from the
/// same stream is always identical.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
    min_count: u64,
}

impl Vocabulary {
    pub fn build<I, S>(tokens: I, min_count: u64) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count == 0 {
            return Err(TextError::InvalidConfig("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_entries(entries, min_count))
    }

    fn from_entries(entries: Vec<(String, u64)>, min_count: u64) -> Self {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (tok, f)) in entries.into_iter().enumerate() {
            index.insert(tok.clone(), i as u32);
            tokens.push(tok);
            freqs.push(f);
        }
        Vocabulary {
            tokens,
            freqs,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Id of `token`, or [`UNKNOWN_ID`].
    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, id: u32) -> Option<u64> {
        self.freqs.get(id as usize).copied()
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.freqs
    }

    /// Maps tokens to ids, dropping unknown ones.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .filter_map(|t| self.index.get(t.as_ref()).copied())
            .collect()
    }

    /// `token<TAB>frequency` per line; the id is the line number.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, f) in self.tokens.iter().zip(&self.freqs) {
            let _ = writeln!(out, "{t}\t{f}");
        }
        out
    }

    pub fn from_text(text: &str, min_count: u64) -> Result<Self, TextError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, freq) = line
                .rsplit_once('\t')
                .ok_or_else(|| TextError::Format(format!("line {}: expected token<TAB>frequency", i + 1)))?;
            let freq: u64 = freq
                .parse()
                .map_err(|_| TextError::Format(format!("line {}: bad frequency `{freq}`", i + 1)))?;
            entries.push((tok.to_string(), freq));
        }
        let vocab = Self::from_entries(entries, min_count);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(TextError::Format("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_count_threshold() {
        let v = Vocabulary::build(["a", "a", "b"], 2).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.lookup("a"), 0);
        assert_eq!(v.lookup("b"), UNKNOWN_ID);
        assert_eq!(v.lookup("zzz"), UNKNOWN_ID);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = Vocabulary::build(["a", "a", "b", "c"], 1).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.token(0), Some("a"));
        assert_eq!(v.frequency(0), Some(2));
    }

    #[test]
    fn empty_stream() {
        let v = Vocabulary::build(Vec::<String>::new(), 1).unwrap();
        assert!(v.is_empty());
        assert!(Vocabulary::build(["a"], 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::build(["x", "y", "y", "z", "z", "z"], 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text(), 1).unwrap();
        assert_eq!(v, back);
    }
}
