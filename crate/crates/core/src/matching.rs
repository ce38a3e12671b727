//! Stage two: TF-IDF re-scoring of the retrieved posts and pooling of their
//! replies into the candidate set.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ingest::Corpus;
use crate::retrieval::Hit;
use crate::text::{TfIdfModel, Tokenizer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("no retrieved posts to match against")]
    EmptyRetrieval,
    #[error("k2 and cap must be at least 1")]
    InvalidConfig,
    #[error("post `{0}` is not in the corpus")]
    UnknownPost(String),
    #[error("no reply vector for `{post_id}` reply {reply_index}")]
    MissingReplyVector { post_id: String, reply_index: usize },
    #[error("retrieved posts have no replies")]
    NoCandidates,
}

/// Which post text the query is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchField {
    #[default]
    Title,
    TitleBody,
}

impl std::str::FromStr for MatchField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "title" => Ok(MatchField::Title),
            "title_body" => Ok(MatchField::TitleBody),
            other => Err(format!("unknown match field `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Posts kept after re-scoring.
    pub k2: usize,
    /// Maximum number of pooled candidates.
    pub cap: usize,
    #[serde(default)]
    pub field: MatchField,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            k2: 10,
            cap: 10,
            field: MatchField::Title,
        }
    }
}

/// Lookup of the dense vector of a corpus reply.
pub trait ReplyVectors {
    fn reply_vector(&self, post_id: &str, reply_index: usize) -> Option<&[f32]>;
}

impl ReplyVectors for HashMap<(String, usize), Vec<f32>> {
    fn reply_vector(&self, post_id: &str, reply_index: usize) -> Option<&[f32]> {
        self.get(&(post_id.to_string(), reply_index)).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub response_text: String,
    pub reply_vec: Vec<f32>,
    pub post_id: String,
    pub reply_index: usize,
    pub net_score: i64,
    /// TF-IDF cosine between the query and the reply's post.
    pub match_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query_text: String,
    pub query_vec: Vec<f32>,
    pub candidates: Vec<Candidate>,
    /// Position of the known-good reply; only set for training episodes.
    pub true_reply_index: Option<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn reply_vectors(&self) -> Vec<&[f32]> {
        self.candidates.iter().map(|c| c.reply_vec.as_slice()).collect()
    }
}

pub struct MatchContext<'a> {
    pub corpus: &'a Corpus,
    pub tfidf: &'a TfIdfModel,
    pub tokenizer: &'a dyn Tokenizer,
    pub reply_vectors: &'a dyn ReplyVectors,
}

impl MatchContext<'_> {
    fn post_text(&self, post: &crate::ingest::Post, field: MatchField) -> Vec<String> {
        match field {
            MatchField::Title => self.tokenizer.tokenize(&post.title),
            MatchField::TitleBody => {
                let mut t = self.tokenizer.tokenize(&post.title);
                t.extend(self.tokenizer.tokenize(&post.body));
                t
            }
        }
    }

    /// TF-IDF cosine of the query against every retrieved post, in
    /// retrieval order.
    pub fn score_posts(
        &self,
        query_tokens: &[String],
        retrieved: &[Hit],
        field: MatchField,
    ) -> Result<Vec<f64>, MatchError> {
        let q = self.tfidf.vectorize(query_tokens);
        retrieved
            .iter()
            .map(|hit| {
                let post = self
                    .corpus
                    .get(&hit.post_id)
                    .ok_or_else(|| MatchError::UnknownPost(hit.post_id.clone()))?;
                Ok(q.cosine(&self.tfidf.vectorize(&self.post_text(post, field))))
            })
            .collect()
    }
}

/// Keeps the `k2` retrieved posts that best match `query_text` under TF-IDF
/// and pools their replies, best post first and replies in forum order,
/// truncated to `cap`. Equal scores keep the retrieval order, so a query
/// sharing no terms with any post falls back to the dense ranking.
pub fn match_candidates(
    ctx: &MatchContext<'_>,
    query_text: &str,
    query_vec: &[f32],
    retrieved: &[Hit],
    config: &MatchConfig,
) -> Result<CandidateSet, MatchError> {
    if retrieved.is_empty() {
        return Err(MatchError::EmptyRetrieval);
    }
    if config.k2 == 0 || config.cap == 0 {
        return Err(MatchError::InvalidConfig);
    }
    let tokens = ctx.tokenizer.tokenize(query_text);
    let scores = ctx.score_posts(&tokens, retrieved, config.field)?;

    let mut ranked: Vec<usize> = (0..retrieved.len()).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    ranked.truncate(config.k2);

    let mut candidates = Vec::with_capacity(config.cap);
    'posts: for &r in &ranked {
        let post_id = &retrieved[r].post_id;
        let post = ctx
            .corpus
            .get(post_id)
            .ok_or_else(|| MatchError::UnknownPost(post_id.clone()))?;
        for (reply_index, reply) in post.replies.iter().enumerate() {
            if candidates.len() == config.cap {
                break 'posts;
            }
            let vec =
                ctx.reply_vectors
                    .reply_vector(post_id, reply_index)
                    .ok_or_else(|| MatchError::MissingReplyVector {
                        post_id: post_id.clone(),
                        reply_index,
                    })?;
            candidates.push(Candidate {
                response_text: reply.text.clone(),
                reply_vec: vec.to_vec(),
                post_id: post_id.clone(),
                reply_index,
                net_score: reply.net_score(),
                match_score: scores[r],
            });
        }
    }
    if candidates.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    Ok(CandidateSet {
        query_text: query_text.to_string(),
        query_vec: query_vec.to_vec(),
        candidates,
        true_reply_index: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Post, Reply};
    use crate::text::{tokenize, UnicodeTokenizer};

    struct Fixture {
        corpus: Corpus,
        tfidf: TfIdfModel,
        vectors: HashMap<(String, usize), Vec<f32>>,
    }

    impl Fixture {
        fn ctx(&self) -> MatchContext<'_> {
            MatchContext {
                corpus: &self.corpus,
                tfidf: &self.tfidf,
                tokenizer: &UnicodeTokenizer,
                reply_vectors: &self.vectors,
            }
        }
    }

    fn fixture(replies_per_post: &[usize]) -> Fixture {
        let titles = ["love advice", "date advice", "love letter"];
        let posts: Vec<Post> = titles
            .iter()
            .zip(replies_per_post)
            .enumerate()
            .map(|(i, (t, &n))| Post {
                post_id: format!("p{}", i + 1),
                title: t.to_string(),
                body: "body".into(),
                source: String::new(),
                replies: (0..n)
                    .map(|j| Reply::with_votes(format!("reply {} of p{}", j, i + 1), j as u64, 0))
                    .collect(),
            })
            .collect();
        let mut vectors = HashMap::new();
        for p in &posts {
            for j in 0..p.replies.len() {
                vectors.insert((p.post_id.clone(), j), vec![j as f32, 1.0]);
            }
        }
        let tfidf = TfIdfModel::fit(&posts.iter().map(|p| tokenize(&p.title)).collect::<Vec<_>>()).unwrap();
        Fixture {
            corpus: Corpus::new(posts).unwrap(),
            tfidf,
            vectors,
        }
    }

    fn hits(ids: &[&str]) -> Vec<Hit> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| Hit {
                position: i,
                post_id: id.to_string(),
                similarity: 1.0 - i as f64 * 0.1,
            })
            .collect()
    }

    #[test]
    fn rescoring_picks_best_two_posts() {
        let f = fixture(&[1, 1, 2]);
        let ctx = f.ctx();
        // Hand values, N = 3: idf(love) = idf(advice) = ln 1.5, idf(letter) = ln 3.
        // "love letter" vs p1 "love advice": ln1.5^2 / (sqrt(ln1.5^2 + ln3^2) * sqrt(2) ln1.5)
        let (l15, l3) = (1.5f64.ln(), 3f64.ln());
        let c1 = l15 * l15 / ((l15 * l15 + l3 * l3).sqrt() * 2f64.sqrt() * l15);
        let scores = ctx
            .score_posts(&tokenize("love letter"), &hits(&["p1", "p2", "p3"]), MatchField::Title)
            .unwrap();
        assert!((scores[0] - c1).abs() < 1e-12);
        assert!((scores[0] - 0.2448).abs() < 1e-3);
        assert_eq!(scores[1], 0.0);
        assert!((scores[2] - 1.0).abs() < 1e-12);

        let cfg = MatchConfig {
            k2: 2,
            cap: 10,
            ..Default::default()
        };
        let set = match_candidates(&ctx, "love letter", &[0.0; 2], &hits(&["p1", "p2", "p3"]), &cfg).unwrap();
        let origin: Vec<_> = set
            .candidates
            .iter()
            .map(|c| (c.post_id.as_str(), c.reply_index))
            .collect();
        assert_eq!(origin, [("p3", 0), ("p3", 1), ("p1", 0)]);
        assert!(set.candidates.windows(2).all(|w| w[0].match_score >= w[1].match_score));
        assert_eq!(set.candidates[1].net_score, 1);
        assert_eq!(set.candidates[1].reply_vec, vec![1.0, 1.0]);
    }

    #[test]
    fn cap_truncates() {
        let f = fixture(&[2, 1, 1]);
        let cfg = MatchConfig {
            k2: 2,
            cap: 2,
            ..Default::default()
        };
        let set = match_candidates(&f.ctx(), "love", &[], &hits(&["p1", "p3"]), &cfg).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.candidates.iter().all(|c| c.post_id == "p1"));
    }

    #[test]
    fn no_overlap_keeps_dense_order() {
        let f = fixture(&[1, 1, 1]);
        let cfg = MatchConfig::default();
        let set = match_candidates(&f.ctx(), "quantum physics", &[], &hits(&["p2", "p3", "p1"]), &cfg).unwrap();
        let order: Vec<_> = set.candidates.iter().map(|c| c.post_id.as_str()).collect();
        assert_eq!(order, ["p2", "p3", "p1"]);
        assert!(set.candidates.iter().all(|c| c.match_score == 0.0));
    }

    #[test]
    fn errors() {
        let f = fixture(&[1, 1, 1]);
        let cfg = MatchConfig::default();
        assert_eq!(
            match_candidates(&f.ctx(), "love", &[], &[], &cfg),
            Err(MatchError::EmptyRetrieval)
        );
        assert!(matches!(
            match_candidates(&f.ctx(), "love", &[], &hits(&["nope"]), &cfg),
            Err(MatchError::UnknownPost(_))
        ));
        let zero = MatchConfig { cap: 0, ..cfg };
        assert_eq!(
            match_candidates(&f.ctx(), "love", &[], &hits(&["p1"]), &zero),
            Err(MatchError::InvalidConfig)
        );
    }

    #[test]
    fn title_body_field() {
        let mut f = fixture(&[1, 1, 1]);
        let mut posts = f.corpus.posts().to_vec();
        posts[1].body = "letter".into();
        f.corpus = Corpus::new(posts).unwrap();
        let scores = f
            .ctx()
            .score_posts(&tokenize("letter"), &hits(&["p2"]), MatchField::TitleBody)
            .unwrap();
        assert!(scores[0] > 0.0);
        assert_eq!("title_body".parse::<MatchField>().unwrap(), MatchField::TitleBody);
    }
}
