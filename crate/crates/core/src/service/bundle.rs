//! On-disk bundle layout. Every stage of the offline pipeline writes its own
//! files into one directory and refreshes `manifest`, which records the
//! dimensions, configuration and a SHA-256 checksum of every file present.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::engine::{EngineBundle, KnowledgeBase};
use super::PipelineConfig;
use crate::ingest::{parse_corpus_str, write_corpus, Corpus, CorpusStats};
use crate::persist::{self, PersistError};
use crate::ranker::{RankerParams, RankerShape};
use crate::retrieval::DenseIndex;
use crate::text::{PvdmModel, TfIdfModel};

pub const MANIFEST: &str = "manifest";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TFIDF_FILE: &str = "tfidf.txt";
pub const RANKER_FILE: &str = "ranker.bin";
pub const TITLE_DIR: &str = "title";
pub const REPLY_DIR: &str = "reply";
const INDEX_FILES: [&str; 2] = ["index.bin", "post_ids.txt"];
const MODEL_FILES: [&str; 6] = [
    "vocab.txt",
    "vectors.bin",
    "words.bin",
    "output.bin",
    "doc_ids.txt",
    "manifest",
];
const FORMAT_VERSION: u32 = 1;

/// Bundle-level manifest. Fields of stages that have not run yet are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: u32,
    pub corpus_posts: usize,
    pub corpus_replies: usize,
    #[serde(default)]
    pub stats: Option<CorpusStats>,
    #[serde(default)]
    pub title_dim: Option<usize>,
    #[serde(default)]
    pub reply_dim: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ranker: Option<RankerShape>,
    pub pipeline: PipelineConfig,
    /// Relative path to hex SHA-256.
    pub files: BTreeMap<String, String>,
}

impl BundleManifest {
    pub fn new(corpus: &Corpus) -> Self {
        BundleManifest {
            format: FORMAT_VERSION,
            corpus_posts: corpus.len(),
            corpus_replies: corpus.reply_count(),
            stats: None,
            title_dim: None,
            reply_dim: None,
            seed: None,
            ranker: None,
            pipeline: PipelineConfig::default(),
            files: BTreeMap::new(),
        }
    }

    /// `(title, reply)` embedding sizes, once embeddings exist.
    pub fn model_dims(&self) -> Option<(usize, usize)> {
        Some((self.title_dim?, self.reply_dim?))
    }
}

/// Every file a complete bundle contains, relative to its root.
pub fn bundle_files() -> Vec<String> {
    let mut files = vec![CORPUS_FILE.to_string(), TFIDF_FILE.to_string(), RANKER_FILE.to_string()];
    for dir in [TITLE_DIR, REPLY_DIR] {
        files.extend(MODEL_FILES.iter().map(|f| format!("{dir}/{f}")));
    }
    files.extend(INDEX_FILES.iter().map(|f| f.to_string()));
    files
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Prefixes the file name of an error raised inside a subdirectory.
fn in_subdir(dir: &str, err: PersistError) -> PersistError {
    match err {
        PersistError::Io { file, source } => PersistError::Io {
            file: format!("{dir}/{file}"),
            source,
        },
        PersistError::Corrupt { file, reason } => PersistError::Corrupt {
            file: format!("{dir}/{file}"),
            reason,
        },
        PersistError::Checksum { file } => PersistError::Checksum {
            file: format!("{dir}/{file}"),
        },
        other => other,
    }
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest, PersistError> {
    let manifest: BundleManifest = serde_json::from_slice(&persist::read_file(dir, MANIFEST)?)
        .map_err(|e| PersistError::corrupt(MANIFEST, e.to_string()))?;
    if manifest.format != FORMAT_VERSION {
        return Err(PersistError::corrupt(
            MANIFEST,
            format!("unsupported format version {}", manifest.format),
        ));
    }
    Ok(manifest)
}

/// Recomputes checksums for every bundle file present and writes the
/// manifest.
pub fn write_manifest(dir: &Path, manifest: &mut BundleManifest) -> Result<(), PersistError> {
    manifest.files.clear();
    for file in bundle_files() {
        if dir.join(&file).is_file() {
            manifest
                .files
                .insert(file.clone(), sha256_hex(&persist::read_file(dir, &file)?));
        }
    }
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    persist::write_file(dir, MANIFEST, &json)
}

/// Compares every recorded checksum with the file on disk.
pub fn verify_checksums(dir: &Path, manifest: &BundleManifest) -> Result<(), PersistError> {
    for (file, expected) in &manifest.files {
        if &sha256_hex(&persist::read_file(dir, file)?) != expected {
            return Err(PersistError::Checksum { file: file.clone() });
        }
    }
    Ok(())
}

fn require_recorded(manifest: &BundleManifest, files: &[String]) -> Result<(), PersistError> {
    match files.iter().find(|f| !manifest.files.contains_key(*f)) {
        Some(f) => Err(PersistError::Inconsistent(format!("manifest does not list `{f}`"))),
        None => Ok(()),
    }
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<(), PersistError> {
    let mut out = Vec::new();
    write_corpus(corpus.posts(), &mut out).map_err(|source| PersistError::Io {
        file: CORPUS_FILE.to_string(),
        source,
    })?;
    persist::write_file(dir, CORPUS_FILE, &out)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, PersistError> {
    let (posts, errors) = parse_corpus_str(&persist::read_text(dir, CORPUS_FILE)?);
    if let Some(e) = errors.first() {
        return Err(PersistError::corrupt(CORPUS_FILE, e.to_string()));
    }
    Corpus::new(posts).map_err(|id| PersistError::corrupt(CORPUS_FILE, format!("duplicate post id `{id}`")))
}

pub fn save_models(dir: &Path, title: &PvdmModel, reply: &PvdmModel, tfidf: &TfIdfModel) -> Result<(), PersistError> {
    title.save(&dir.join(TITLE_DIR)).map_err(|e| in_subdir(TITLE_DIR, e))?;
    reply.save(&dir.join(REPLY_DIR)).map_err(|e| in_subdir(REPLY_DIR, e))?;
    persist::write_file(dir, TFIDF_FILE, tfidf.to_text().as_bytes())
}

pub fn load_models(dir: &Path) -> Result<(PvdmModel, PvdmModel, TfIdfModel), PersistError> {
    let title = PvdmModel::load(&dir.join(TITLE_DIR)).map_err(|e| in_subdir(TITLE_DIR, e))?;
    let reply = PvdmModel::load(&dir.join(REPLY_DIR)).map_err(|e| in_subdir(REPLY_DIR, e))?;
    let tfidf = TfIdfModel::from_text(&persist::read_text(dir, TFIDF_FILE)?)
        .map_err(|e| PersistError::corrupt(TFIDF_FILE, e.to_string()))?;
    Ok((title, reply, tfidf))
}

/// Loads the corpus, embedding models and index written by the first three
/// offline stages.
pub fn load_knowledge_base(dir: &Path) -> Result<KnowledgeBase, PersistError> {
    let manifest = read_manifest(dir)?;
    let corpus = load_corpus(dir)?;
    let (title, reply, tfidf) = load_models(dir)?;
    let index = DenseIndex::load(dir)?;
    let mut files: Vec<String> = bundle_files();
    files.retain(|f| f != RANKER_FILE);
    require_recorded(&manifest, &files)?;
    verify_checksums(dir, &manifest)?;
    check_dims(&manifest, &title, &reply, None)?;
    KnowledgeBase::new(corpus, title, reply, tfidf, index).map_err(|e| PersistError::Inconsistent(e.to_string()))
}

fn check_dims(
    manifest: &BundleManifest,
    title: &PvdmModel,
    reply: &PvdmModel,
    ranker: Option<&RankerParams>,
) -> Result<(), PersistError> {
    if manifest.model_dims() != Some((title.dim(), reply.dim())) {
        return Err(PersistError::Inconsistent(format!(
            "manifest dims {:?} differ from the models ({}, {})",
            manifest.model_dims(),
            title.dim(),
            reply.dim()
        )));
    }
    if let Some(r) = ranker {
        if manifest.ranker != Some(r.shape) {
            return Err(PersistError::Inconsistent(format!(
                "manifest ranker shape {:?} differs from {RANKER_FILE} {:?}",
                manifest.ranker, r.shape
            )));
        }
    }
    Ok(())
}

impl EngineBundle {
    /// Writes every artifact and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<BundleManifest, PersistError> {
        let kb = self.knowledge_base();
        save_corpus(dir, kb.corpus())?;
        save_models(dir, kb.title_model(), kb.reply_model(), kb.tfidf())?;
        kb.index().save(dir)?;
        self.ranker().save(dir)?;
        let mut manifest = match read_manifest(dir) {
            Ok(m) => BundleManifest {
                corpus_posts: kb.corpus().len(),
                corpus_replies: kb.corpus().reply_count(),
                ..m
            },
            Err(_) => BundleManifest::new(kb.corpus()),
        };
        manifest.title_dim = Some(kb.title_model().dim());
        manifest.reply_dim = Some(kb.reply_model().dim());
        manifest.seed = Some(kb.title_model().config().seed);
        manifest.ranker = Some(self.ranker().shape);
        manifest.pipeline = *self.config();
        write_manifest(dir, &mut manifest)?;
        Ok(manifest)
    }

    /// Loads and cross-checks a complete bundle. Errors name the offending
    /// file where there is one.
    pub fn load(dir: &Path) -> Result<Self, PersistError> {
        let manifest = read_manifest(dir)?;
        let kb = load_knowledge_base(dir)?;
        let ranker = RankerParams::load(dir)?;
        require_recorded(&manifest, &[RANKER_FILE.to_string()])?;
        check_dims(&manifest, kb.title_model(), kb.reply_model(), Some(&ranker))?;
        EngineBundle::new(kb, ranker, manifest.pipeline).map_err(|e| PersistError::Inconsistent(e.to_string()))
    }
}
