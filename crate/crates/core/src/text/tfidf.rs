//! Raw-count TF-IDF with `idf(t) = ln(N / df(t))` and no smoothing.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::similarity::SparseVector;
use super::TextError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TfIdfModel {
    n_docs: u64,
    terms: Vec<String>,
    df: Vec<u64>,
    index: HashMap<String, u32>,
}

impl TfIdfModel {
    /// Counts each token at most once per document. Terms are numbered in
    /// lexicographic order.
    pub fn fit<D, S>(docs: &[D]) -> Result<Self, TextError>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        if docs.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut df: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.as_ref().iter().map(|t| t.as_ref()).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = df.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
        entries.sort();
        Ok(Self::from_entries(docs.len() as u64, entries))
    }

    fn from_entries(n_docs: u64, entries: Vec<(String, u64)>) -> Self {
        let mut model = TfIdfModel {
            n_docs,
            ..Default::default()
        };
        for (i, (t, c)) in entries.into_iter().enumerate() {
            model.index.insert(t.clone(), i as u32);
            model.terms.push(t);
            model.df.push(c);
        }
        model
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn term_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn df(&self, token: &str) -> Option<u64> {
        self.term_id(token).map(|i| self.df[i as usize])
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.term_id(token).map(|i| self.idf_by_id(i))
    }

    fn idf_by_id(&self, id: u32) -> f64 {
        (self.n_docs as f64 / self.df[id as usize] as f64).ln()
    }

    /// `tf(t) * idf(t)` with raw counts; unseen tokens contribute nothing.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        let mut tf: HashMap<u32, u64> = HashMap::new();
        for t in tokens {
            if let Some(id) = self.term_id(t.as_ref()) {
                *tf.entry(id).or_default() += 1;
            }
        }
        SparseVector::from_pairs(
            tf.into_iter()
                .map(|(id, c)| (id, c as f64 * self.idf_by_id(id)))
                .collect(),
        )
    }

    /// Weight of `token` in a vector produced by [`TfIdfModel::vectorize`].
    pub fn weight(&self, v: &SparseVector, token: &str) -> f64 {
        self.term_id(token).map(|id| v.get(id)).unwrap_or(0.0)
    }

    /// First line `N<TAB>count`, then `token<TAB>df` in term-id order.
    pub fn to_text(&self) -> String {
        let mut out = format!("N\t{}\n", self.n_docs);
        for (t, c) in self.terms.iter().zip(&self.df) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TextError::Format("missing N header".into()))?;
        let n_docs: u64 = header
            .strip_prefix("N\t")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| TextError::Format(format!("bad header `{header}`")))?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parsed = line
                .rsplit_once('\t')
                .and_then(|(t, c)| c.parse::<u64>().ok().map(|c| (t.to_string(), c)));
            match parsed {
                Some((t, c)) if c >= 1 && c <= n_docs => entries.push((t, c)),
                _ => return Err(TextError::Format(format!("line {}: bad df entry", i + 2))),
            }
        }
        let model = Self::from_entries(n_docs, entries);
        if model.index.len() != model.terms.len() {
            return Err(TextError::Format("duplicate term".into()));
        }
        Ok(model)
    }
}
