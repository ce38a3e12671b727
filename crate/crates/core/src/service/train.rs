//! Offline stages: ingestion, embedding training, indexing, ranker episode
//! assembly and evaluation.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::engine::{reply_doc_id, AnswerOptions, EngineBundle, KnowledgeBase};
use super::{PipelineConfig, ServiceError};
use crate::ingest::{clean_posts, parse_corpus, Corpus, CorpusStats, NoiseFilter, ParseError};
use crate::matching::{CandidateSet, MatchField};
use crate::persist::Matrix;
use crate::ranker::{train_ranker, Activation, RankerShape, TargetMode, TrainConfig, TrainedRanker, TrainingEpisode};
use crate::retrieval::DenseIndex;
use crate::text::{train_pvdm, PvdmConfig, PvdmModel, TfIdfModel, Tokenizer, UnicodeTokenizer};

/// Result of reading and cleaning a raw corpus stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub corpus: Corpus,
    pub stats: CorpusStats,
    /// Malformed lines; they are skipped and do not count as posts.
    pub errors: Vec<ParseError>,
}

pub fn ingest<R: BufRead>(reader: R, noise: &NoiseFilter) -> Result<Ingested, ServiceError> {
    let (posts, errors) = parse_corpus(reader);
    let (kept, stats) = clean_posts(posts, noise);
    let corpus = Corpus::new(kept).map_err(|id| ServiceError::InvalidConfig(format!("duplicate post id `{id}`")))?;
    Ok(Ingested { corpus, stats, errors })
}

/// Tokens of the post text that TF-IDF matching compares against.
pub fn post_tokens(corpus: &Corpus, field: MatchField) -> Vec<Vec<String>> {
    corpus
        .posts()
        .iter()
        .map(|p| {
            let mut t = UnicodeTokenizer.tokenize(&p.title);
            if field == MatchField::TitleBody {
                t.extend(UnicodeTokenizer.tokenize(&p.body));
            }
            t
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub title: PvdmConfig,
    pub reply: PvdmConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            title: PvdmConfig::titles(),
            reply: PvdmConfig::replies(),
        }
    }
}

/// Trains the title model (one document per post title), the reply model
/// (one document per reply, id `post_id#index`) and fits TF-IDF over the
/// matched post field.
pub fn train_embeddings(
    corpus: &Corpus,
    config: &EmbeddingConfig,
    field: MatchField,
) -> Result<(PvdmModel, PvdmModel, TfIdfModel), ServiceError> {
    if corpus.is_empty() {
        return Err(ServiceError::EmptyCorpus);
    }
    let titles: Vec<(String, Vec<String>)> = corpus
        .posts()
        .iter()
        .map(|p| (p.post_id.clone(), UnicodeTokenizer.tokenize(&p.title)))
        .collect();
    let replies: Vec<(String, Vec<String>)> = corpus
        .posts()
        .iter()
        .flat_map(|p| {
            p.replies
                .iter()
                .enumerate()
                .map(|(i, r)| (reply_doc_id(&p.post_id, i), UnicodeTokenizer.tokenize(&r.text)))
        })
        .collect();
    let title_model = train_pvdm(&titles, &config.title)?;
    let reply_model = train_pvdm(&replies, &config.reply)?;
    let tfidf = TfIdfModel::fit(&post_tokens(corpus, field))?;
    Ok((title_model, reply_model, tfidf))
}

/// Indexes every corpus post by its trained title vector, in corpus order.
pub fn build_index(corpus: &Corpus, title_model: &PvdmModel) -> Result<DenseIndex, ServiceError> {
    let dim = title_model.dim();
    let by_id: HashMap<&str, usize> = title_model
        .doc_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows = Matrix::zeros(corpus.len(), dim);
    for (i, post) in corpus.posts().iter().enumerate() {
        let row = *by_id
            .get(post.post_id.as_str())
            .ok_or_else(|| ServiceError::Inconsistent(format!("post `{}` has no title vector", post.post_id)))?;
        rows.row_mut(i).copy_from_slice(title_model.doc_vector(row));
    }
    let ids = corpus.posts().iter().map(|p| p.post_id.clone()).collect();
    Ok(DenseIndex::build(&rows, ids)?)
}

/// Builds ranker training episodes by running stages one and two with each
/// post title as the query and the post's trained title vector as `q`.
///
/// * `OneHot`: one episode per (post, reply) pair. The other replies of the
///   same post are removed from the candidates and the true reply is added
///   if matching did not surface it (replacing the last candidate at the
///   cap).
/// * `Likes`: one episode per post with the candidates as matched and
///   targets from their net scores.
///
/// Sets with fewer than two candidates carry no signal and are skipped.
pub fn assemble_episodes(
    kb: &KnowledgeBase,
    pipeline: &PipelineConfig,
    mode: TargetMode,
) -> Result<Vec<TrainingEpisode>, ServiceError> {
    let mut episodes = Vec::new();
    for post in kb.corpus().posts() {
        let q = kb
            .title_vector(&post.post_id)
            .ok_or_else(|| ServiceError::Inconsistent(format!("post `{}` has no title vector", post.post_id)))?
            .to_vec();
        let base = kb.retrieve_with_vector(&post.title, q, pipeline)?.set;
        match mode {
            TargetMode::Likes => {
                if base.len() >= 2 {
                    episodes.push(TrainingEpisode::from_candidates(&base, mode)?);
                }
            }
            TargetMode::OneHot => {
                for reply_index in 0..post.replies.len() {
                    let set = one_hot_set(kb, &base, &post.post_id, reply_index, pipeline.matching.cap)?;
                    if set.len() >= 2 {
                        episodes.push(TrainingEpisode::from_candidates(&set, mode)?);
                    }
                }
            }
        }
    }
    Ok(episodes)
}

fn one_hot_set(
    kb: &KnowledgeBase,
    base: &CandidateSet,
    post_id: &str,
    reply_index: usize,
    cap: usize,
) -> Result<CandidateSet, ServiceError> {
    let mut set = base.clone();
    set.candidates
        .retain(|c| c.post_id != post_id || c.reply_index == reply_index);
    let pos = match set
        .candidates
        .iter()
        .position(|c| c.post_id == post_id && c.reply_index == reply_index)
    {
        Some(p) => p,
        None => {
            let reply = kb
                .corpus()
                .reply(post_id, reply_index)
                .ok_or_else(|| ServiceError::Inconsistent(format!("missing reply {post_id}#{reply_index}")))?;
            let vec = crate::matching::ReplyVectors::reply_vector(kb, post_id, reply_index)
                .ok_or_else(|| ServiceError::Inconsistent(format!("missing reply vector {post_id}#{reply_index}")))?;
            let candidate = crate::matching::Candidate {
                response_text: reply.text.clone(),
                reply_vec: vec.to_vec(),
                post_id: post_id.to_string(),
                reply_index,
                net_score: reply.net_score(),
                match_score: 1.0,
            };
            if set.candidates.len() >= cap {
                set.candidates.truncate(cap - 1);
            }
            set.candidates.push(candidate);
            set.candidates.len() - 1
        }
    };
    set.true_reply_index = Some(pos);
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerTraining {
    pub features: usize,
    pub activation: Activation,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for RankerTraining {
    fn default() -> Self {
        RankerTraining {
            features: RankerShape::default().m,
            activation: Activation::Relu,
            train: TrainConfig::default(),
        }
    }
}

/// Assembles episodes and trains a ranker sized for the knowledge base.
pub fn train_bundle_ranker(
    kb: &KnowledgeBase,
    pipeline: &PipelineConfig,
    config: &RankerTraining,
) -> Result<TrainedRanker, ServiceError> {
    let episodes = assemble_episodes(kb, pipeline, config.train.target_mode)?;
    if episodes.is_empty() {
        return Err(ServiceError::InvalidConfig(
            "no training episodes: every candidate set has fewer than two replies".into(),
        ));
    }
    log::info!("training ranker on {} episodes", episodes.len());
    let shape = RankerShape {
        m: config.features,
        d_q: kb.title_model().dim(),
        d_r: kb.reply_model().dim(),
        activation: config.activation,
    };
    Ok(train_ranker(&episodes, shape, &config.train)?)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildConfig {
    pub embeddings: EmbeddingConfig,
    pub ranker: RankerTraining,
    pub pipeline: PipelineConfig,
}

/// All offline stages in memory.
pub fn build_bundle(corpus: Corpus, config: &BuildConfig) -> Result<(EngineBundle, TrainedRanker), ServiceError> {
    let (title, reply, tfidf) = train_embeddings(&corpus, &config.embeddings, config.pipeline.matching.field)?;
    let index = build_index(&corpus, &title)?;
    let kb = KnowledgeBase::new(corpus, title, reply, tfidf, index)?;
    let trained = train_bundle_ranker(&kb, &config.pipeline, &config.ranker)?;
    let bundle = EngineBundle::new(kb, trained.params.clone(), config.pipeline)?;
    Ok((bundle, trained))
}

/// A held-out query with the reply considered correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutPair {
    pub query: String,
    pub response: String,
}

/// One JSON object per line: `{"query": ..., "response": ...}`.
pub fn parse_heldout(text: &str) -> Result<Vec<HeldoutPair>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ParseError {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    pub k: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    /// Queries the pipeline could not answer; they count as misses.
    pub failed: usize,
    pub recall: Vec<RecallAt>,
}

/// recall@k: the fraction of queries whose expected reply is among the `k`
/// most probable candidates (ties keep candidate order).
pub fn evaluate(bundle: &EngineBundle, heldout: &[HeldoutPair], ks: &[usize]) -> EvalReport {
    let mut hits = vec![0usize; ks.len()];
    let mut failed = 0;
    for pair in heldout {
        let response = match bundle.answer(&pair.query, &AnswerOptions::argmax()) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("eval query {:?} failed: {e}", pair.query);
                failed += 1;
                continue;
            }
        };
        let mut ranked: Vec<_> = response.trace.candidates.iter().collect();
        ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        let rank = ranked.iter().position(|c| c.text == pair.response);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if matches!(rank, Some(r) if r < k) {
                *h += 1;
            }
        }
    }
    let n = heldout.len();
    EvalReport {
        queries: n,
        failed,
        recall: ks
            .iter()
            .zip(hits)
            .map(|(&k, h)| RecallAt {
                k,
                recall: if n == 0 { 0.0 } else { h as f64 / n as f64 },
            })
            .collect(),
    }
}
