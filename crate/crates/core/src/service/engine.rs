use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, ServiceError};
use crate::ingest::Corpus;
use crate::matching::{match_candidates, CandidateSet, MatchContext, ReplyVectors};
use crate::ranker::{candidate_scores, response_distribution, select_response, RankerParams, SelectionPolicy};
use crate::retrieval::{DenseIndex, Hit, VectorIndex};
use crate::text::{PvdmModel, TextError, TfIdfModel, Tokenizer, UnicodeTokenizer};

/// Document id of a reply inside the reply embedding model.
pub fn reply_doc_id(post_id: &str, reply_index: usize) -> String {
    format!("{post_id}#{reply_index}")
}

/// Everything the first two stages need: the cleaned corpus, both
/// embedding models, TF-IDF statistics and the title index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    corpus: Corpus,
    title_model: PvdmModel,
    reply_model: PvdmModel,
    tfidf: TfIdfModel,
    index: DenseIndex,
    /// Row of every reply in the reply model, per post in forum order.
    reply_rows: HashMap<String, Vec<usize>>,
    title_rows: HashMap<String, usize>,
}

/// Output of retrieval and matching for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub hits: Vec<Hit>,
    pub set: CandidateSet,
    /// The utterance had no token known to the title model, so matching ran
    /// over the whole corpus with a zero query vector.
    pub fallback: bool,
}

impl KnowledgeBase {
    pub fn new(
        corpus: Corpus,
        title_model: PvdmModel,
        reply_model: PvdmModel,
        tfidf: TfIdfModel,
        index: DenseIndex,
    ) -> Result<Self, ServiceError> {
        if corpus.is_empty() {
            return Err(ServiceError::EmptyCorpus);
        }
        if index.dim() != title_model.dim() {
            return Err(ServiceError::Inconsistent(format!(
                "index rows have dim {} but the title model has dim {}",
                index.dim(),
                title_model.dim()
            )));
        }
        if let Some(id) = index.post_ids().iter().find(|id| corpus.get(id).is_none()) {
            return Err(ServiceError::Inconsistent(format!(
                "indexed post `{id}` is not in the corpus"
            )));
        }
        let rows: HashMap<&str, usize> = reply_model
            .doc_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut reply_rows = HashMap::with_capacity(corpus.len());
        for post in corpus.posts() {
            let mut post_rows = Vec::with_capacity(post.replies.len());
            for i in 0..post.replies.len() {
                let id = reply_doc_id(&post.post_id, i);
                let row = rows.get(id.as_str()).ok_or_else(|| {
                    ServiceError::Inconsistent(format!("reply `{id}` has no vector in the reply model"))
                })?;
                post_rows.push(*row);
            }
            reply_rows.insert(post.post_id.clone(), post_rows);
        }
        let title_rows = title_model
            .doc_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(KnowledgeBase {
            corpus,
            title_model,
            reply_model,
            tfidf,
            index,
            reply_rows,
            title_rows,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn title_model(&self) -> &PvdmModel {
        &self.title_model
    }

    pub fn reply_model(&self) -> &PvdmModel {
        &self.reply_model
    }

    pub fn tfidf(&self) -> &TfIdfModel {
        &self.tfidf
    }

    pub fn index(&self) -> &DenseIndex {
        &self.index
    }

    /// Trained title vector of a corpus post.
    pub fn title_vector(&self, post_id: &str) -> Option<&[f32]> {
        let row = *self.title_rows.get(post_id)?;
        Some(self.title_model.doc_vector(row))
    }

    /// Embeds the utterance with the title model (fixed inference seed).
    /// `Ok(None)` means no token is known to the model.
    pub fn embed_query(&self, tokens: &[String]) -> Result<Option<Vec<f32>>, ServiceError> {
        if tokens.is_empty() {
            return Err(ServiceError::InvalidQuery);
        }
        match self.title_model.infer(tokens) {
            Ok(v) => Ok(Some(v)),
            Err(TextError::NoKnownTokens) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Stages one and two for an utterance.
    pub fn retrieve(&self, utterance: &str, config: &PipelineConfig) -> Result<Retrieved, ServiceError> {
        let tokens = UnicodeTokenizer.tokenize(utterance);
        match self.embed_query(&tokens)? {
            Some(q) => self.retrieve_with_vector(utterance, q, config),
            None => {
                let all: Vec<Hit> = self
                    .corpus
                    .posts()
                    .iter()
                    .enumerate()
                    .map(|(position, p)| Hit {
                        position,
                        post_id: p.post_id.clone(),
                        similarity: 0.0,
                    })
                    .collect();
                let q = vec![0.0; self.title_model.dim()];
                let set = match_candidates(&self.match_context(), utterance, &q, &all, &config.matching)?;
                Ok(Retrieved {
                    hits: Vec::new(),
                    set,
                    fallback: true,
                })
            }
        }
    }

    /// Stages one and two with a precomputed query vector.
    pub fn retrieve_with_vector(
        &self,
        utterance: &str,
        query_vec: Vec<f32>,
        config: &PipelineConfig,
    ) -> Result<Retrieved, ServiceError> {
        let hits = self.index.search(&query_vec, config.k1)?;
        let set = match_candidates(&self.match_context(), utterance, &query_vec, &hits, &config.matching)?;
        Ok(Retrieved {
            hits,
            set,
            fallback: false,
        })
    }

    fn match_context(&self) -> MatchContext<'_> {
        MatchContext {
            corpus: &self.corpus,
            tfidf: &self.tfidf,
            tokenizer: &UnicodeTokenizer,
            reply_vectors: self,
        }
    }
}

impl ReplyVectors for KnowledgeBase {
    fn reply_vector(&self, post_id: &str, reply_index: usize) -> Option<&[f32]> {
        let row = *self.reply_rows.get(post_id)?.get(reply_index)?;
        Some(self.reply_model.doc_vector(row))
    }
}

/// Per-request overrides of the bundle's selection settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnswerOptions {
    pub policy: Option<SelectionPolicy>,
    pub temperature: Option<f64>,
    /// Sampling seed; drawn at random when absent and reported in the trace.
    pub seed: Option<u64>,
}

impl AnswerOptions {
    pub fn argmax() -> Self {
        AnswerOptions {
            policy: Some(SelectionPolicy::Argmax),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPost {
    pub post_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCandidate {
    pub post_id: String,
    pub reply_index: usize,
    pub match_score: f64,
    pub probability: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub retrieved: Vec<RetrievedPost>,
    pub candidates: Vec<TraceCandidate>,
    pub selected_index: usize,
    pub policy: SelectionPolicy,
    pub temperature: f64,
    pub seed: u64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub response_text: String,
    pub trace: Trace,
}

/// A complete, consistent set of artifacts that can answer utterances.
/// Immutable once built; share it behind an `Arc` across requests.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineBundle {
    kb: KnowledgeBase,
    ranker: RankerParams,
    config: PipelineConfig,
}

impl EngineBundle {
    /// Checks that the ranker fits the embedding models. Ranker parameters
    /// are rounded to their stored precision so that a saved bundle answers
    /// exactly like the one in memory.
    pub fn new(kb: KnowledgeBase, ranker: RankerParams, config: PipelineConfig) -> Result<Self, ServiceError> {
        ranker.validate()?;
        config.validate().map_err(ServiceError::InvalidConfig)?;
        let (d_q, d_r) = (kb.title_model.dim(), kb.reply_model.dim());
        if ranker.shape.d_q != d_q || ranker.shape.d_r != d_r {
            return Err(ServiceError::Inconsistent(format!(
                "ranker expects {}x{} but the embedding models are {d_q}x{d_r}",
                ranker.shape.d_q, ranker.shape.d_r
            )));
        }
        Ok(EngineBundle {
            kb,
            ranker: ranker.to_storage_precision(),
            config,
        })
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn corpus(&self) -> &Corpus {
        &self.kb.corpus
    }

    pub fn ranker(&self) -> &RankerParams {
        &self.ranker
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs the full pipeline for one utterance.
    pub fn answer(&self, utterance: &str, options: &AnswerOptions) -> Result<ChatResponse, ServiceError> {
        let policy = options.policy.unwrap_or(self.config.policy);
        let temperature = options.temperature.unwrap_or(self.config.temperature);
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(ServiceError::InvalidConfig("temperature must be > 0".into()));
        }
        let seed = options.seed.unwrap_or_else(rand::random);

        let retrieved = self.kb.retrieve(utterance, &self.config)?;
        let set = &retrieved.set;
        let g = candidate_scores(&set.query_vec, &set.reply_vectors(), &self.ranker)?;
        let p = response_distribution(&g)?;
        let selected_index = select_response(&p, policy, temperature, seed)?;

        let candidates = set
            .candidates
            .iter()
            .zip(&p)
            .map(|(c, &probability)| TraceCandidate {
                post_id: c.post_id.clone(),
                reply_index: c.reply_index,
                match_score: c.match_score,
                probability,
                text: c.response_text.clone(),
            })
            .collect();
        let retrieved_posts = retrieved
            .hits
            .iter()
            .map(|h| RetrievedPost {
                post_id: h.post_id.clone(),
                similarity: h.similarity,
            })
            .collect();
        Ok(ChatResponse {
            response_text: set.candidates[selected_index].response_text.clone(),
            trace: Trace {
                retrieved: retrieved_posts,
                candidates,
                selected_index,
                policy,
                temperature,
                seed,
                fallback: retrieved.fallback,
            },
        })
    }
}
