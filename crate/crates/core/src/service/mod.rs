//! End-to-end orchestration: the offline stages that turn a raw corpus into
//! a bundle, the bundle itself, answering utterances and chat sessions.

mod bundle;
mod config;
mod engine;
mod session;
mod train;

pub use bundle::{
    bundle_files, load_corpus, load_knowledge_base, load_models, read_manifest, save_corpus, save_models,
    verify_checksums, write_manifest, BundleManifest, CORPUS_FILE, MANIFEST, RANKER_FILE, REPLY_DIR, TFIDF_FILE,
    TITLE_DIR,
};
pub use config::{parse_key_values, ConfigError, PipelineConfig};
pub use engine::{
    reply_doc_id, AnswerOptions, ChatResponse, EngineBundle, KnowledgeBase, Retrieved, RetrievedPost, Trace,
    TraceCandidate,
};
pub use session::{now_millis, Session, SessionStore, Turn};
pub use train::{
    assemble_episodes, build_bundle, build_index, evaluate, ingest, parse_heldout, post_tokens, train_bundle_ranker,
    train_embeddings, BuildConfig, EmbeddingConfig, EvalReport, HeldoutPair, Ingested, RankerTraining, RecallAt,
};

use crate::matching::MatchError;
use crate::persist::PersistError;
use crate::ranker::RankerError;
use crate::retrieval::RetrievalError;
use crate::text::TextError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid query: the utterance has no tokens")]
    InvalidQuery,
    #[error("the corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent bundle: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}
