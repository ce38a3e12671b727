//! Tokenization and the two text representations used by the pipeline:
//! dense paragraph vectors and sparse TF-IDF vectors.

mod pvdm;
mod similarity;
mod tfidf;
mod tokenize;
mod vocab;

pub use pvdm::{train_pvdm, PvdmConfig, PvdmModel, TrainMode};
pub use similarity::{cosine, SparseVector};
pub use tfidf::TfIdfModel;
pub use tokenize::{tokenize, Tokenizer, UnicodeTokenizer};
pub use vocab::{Vocabulary, UNKNOWN_ID};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TextError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no training windows: every document is shorter than the context window")]
    NoTrainingWindows,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty query")]
    EmptyQuery,
    #[error("no known tokens")]
    NoKnownTokens,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed data: {0}")]
    Format(String),
}
