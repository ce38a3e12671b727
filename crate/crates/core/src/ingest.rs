//! Forum dump ingestion: parsing line-delimited post records, cleaning them,
//! and flattening the survivors into query/response pairs.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::sync::OnceLock;

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub text: String,
    #[serde(default)]
    pub likes: u64,
    #[serde(default)]
    pub dislikes: u64,
}

impl Reply {
    pub fn new(text: impl Into<String>) -> Self {
        Reply {
            text: text.into(),
            likes: 0,
            dislikes: 0,
        }
    }

    pub fn with_votes(text: impl Into<String>, likes: u64, dislikes: u64) -> Self {
        Reply {
            text: text.into(),
            likes,
            dislikes,
        }
    }

    /// Likes minus dislikes, unclamped.
    pub fn net_score(&self) -> i64 {
        self.likes as i64 - self.dislikes as i64
    }
}

/// A forum thread: the title and body form the question side, replies the
/// answer side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    pub replies: Vec<Reply>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrPair {
    pub query_text: String,
    pub response_text: String,
    pub post_id: String,
    pub reply_index: usize,
    pub net_score: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub posts_in: usize,
    pub posts_kept: usize,
    pub posts_dropped_no_reply: usize,
    pub posts_dropped_no_body: usize,
    pub posts_dropped_noise: usize,
    pub replies_kept: usize,
}

impl CorpusStats {
    pub fn dropped(&self) -> usize {
        self.posts_dropped_no_reply + self.posts_dropped_no_body + self.posts_dropped_noise
    }

    pub fn is_balanced(&self) -> bool {
        self.posts_in == self.posts_kept + self.dropped()
    }

    /// Field-wise sum, for merging stats from partitioned streams.
    pub fn merge(&self, other: &CorpusStats) -> CorpusStats {
        CorpusStats {
            posts_in: self.posts_in + other.posts_in,
            posts_kept: self.posts_kept + other.posts_kept,
            posts_dropped_no_reply: self.posts_dropped_no_reply + other.posts_dropped_no_reply,
            posts_dropped_no_body: self.posts_dropped_no_body + other.posts_dropped_no_body,
            posts_dropped_noise: self.posts_dropped_noise + other.posts_dropped_noise,
            replies_kept: self.replies_kept + other.replies_kept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub reason: String,
}

#[derive(Deserialize)]
struct RawPost {
    post_id: String,
    title: String,
    body: String,
    #[serde(default)]
    source: Option<String>,
    replies: Vec<Reply>,
}

/// Parses one record per line. Blank lines are skipped without error.
pub fn parse_corpus<R: BufRead>(reader: R) -> (Vec<Post>, Vec<ParseError>) {
    let mut posts = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                errors.push(ParseError {
                    line: line_no,
                    reason: format!("unreadable line: {e}"),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawPost>(&line) {
            Ok(raw) => {
                if !seen.insert(raw.post_id.clone()) {
                    errors.push(ParseError {
                        line: line_no,
                        reason: format!("duplicate post_id `{}`", raw.post_id),
                    });
                    continue;
                }
                posts.push(Post {
                    post_id: raw.post_id,
                    title: raw.title,
                    body: raw.body,
                    source: raw.source.unwrap_or_default(),
                    replies: raw.replies,
                });
            }
            Err(e) => errors.push(ParseError {
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    (posts, errors)
}

pub fn parse_corpus_str(text: &str) -> (Vec<Post>, Vec<ParseError>) {
    parse_corpus(text.as_bytes())
}

/// Serializes posts back into the line-delimited record format.
pub fn write_corpus<W: std::io::Write>(posts: &[Post], mut out: W) -> std::io::Result<()> {
    for post in posts {
        serde_json::to_writer(&mut out, post)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Advertisement / spam detector. Patterns are regular expressions matched
/// case-insensitively against the title and the body.
#[derive(Debug, Clone)]
pub struct NoiseFilter {
    set: Option<RegexSet>,
}

impl NoiseFilter {
    pub fn empty() -> Self {
        NoiseFilter { set: None }
    }

    pub fn new<I, S>(patterns: I) -> Result<Self, regex::Error>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let patterns: Vec<String> = patterns
            .into_iter()
            .map(|p| p.as_ref().trim().to_string())
            .filter(|p| !p.is_empty())
            .map(|p| format!("(?i){p}"))
            .collect();
        if patterns.is_empty() {
            return Ok(Self::empty());
        }
        Ok(NoiseFilter {
            set: Some(RegexSet::new(patterns)?),
        })
    }

    /// One pattern per line; lines starting with `#` are comments.
    pub fn from_lines(text: &str) -> Result<Self, regex::Error> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn is_noise(&self, text: &str) -> bool {
        self.set.as_ref().is_some_and(|s| s.is_match(text))
    }
}

impl Default for NoiseFilter {
    fn default() -> Self {
        Self::empty()
    }
}

fn markup_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<[^>]*>|https?://\S+|www\.\S+|&[a-z]+;|&#\d+;").unwrap())
}

/// True when nothing readable is left once tags, entities and URLs are gone.
/// Photo-only posts typically reduce to this.
pub fn is_blank_text(text: &str) -> bool {
    markup_re().replace_all(text, " ").trim().is_empty()
}

enum Verdict {
    Keep(Post),
    NoBody,
    NoReply,
    Noise,
}

fn judge(mut post: Post, noise: &NoiseFilter) -> Verdict {
    // An untitled post has no question side; it shares the "no main text"
    // bucket since the stats carry no separate counter for it.
    if post.title.trim().is_empty() || is_blank_text(&post.body) {
        return Verdict::NoBody;
    }
    post.replies.retain(|r| !r.text.trim().is_empty());
    if post.replies.is_empty() {
        return Verdict::NoReply;
    }
    if noise.is_noise(&post.title) || noise.is_noise(&post.body) {
        return Verdict::Noise;
    }
    Verdict::Keep(post)
}

/// Drops posts without a title, main text or replies, and posts flagged by
/// the noise filter. Replies with empty text are removed first, so a post
/// whose replies are all blank counts as having no replies.
pub fn clean_posts(posts: Vec<Post>, noise: &NoiseFilter) -> (Vec<Post>, CorpusStats) {
    let mut stats = CorpusStats {
        posts_in: posts.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(posts.len());
    for post in posts {
        match judge(post, noise) {
            Verdict::Keep(p) => {
                stats.posts_kept += 1;
                stats.replies_kept += p.replies.len();
                kept.push(p);
            }
            Verdict::NoBody => stats.posts_dropped_no_body += 1,
            Verdict::NoReply => stats.posts_dropped_no_reply += 1,
            Verdict::Noise => stats.posts_dropped_noise += 1,
        }
    }
    (kept, stats)
}

pub fn build_qr_pairs(posts: &[Post]) -> Vec<QrPair> {
    posts
        .iter()
        .flat_map(|post| {
            post.replies.iter().enumerate().map(move |(reply_index, reply)| QrPair {
                query_text: post.title.clone(),
                response_text: reply.text.clone(),
                post_id: post.post_id.clone(),
                reply_index,
                net_score: reply.net_score(),
            })
        })
        .collect()
}

/// Cleaned posts with lookup by id: the knowledge base the engine answers
/// from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    posts: Vec<Post>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Fails with the first duplicated post id.
    pub fn new(posts: Vec<Post>) -> Result<Self, String> {
        let mut by_id = HashMap::with_capacity(posts.len());
        for (i, p) in posts.iter().enumerate() {
            if by_id.insert(p.post_id.clone(), i).is_some() {
                return Err(p.post_id.clone());
            }
        }
        Ok(Corpus { posts, by_id })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn reply_count(&self) -> usize {
        self.posts.iter().map(|p| p.replies.len()).sum()
    }

    pub fn get(&self, post_id: &str) -> Option<&Post> {
        self.by_id.get(post_id).map(|&i| &self.posts[i])
    }

    pub fn position(&self, post_id: &str) -> Option<usize> {
        self.by_id.get(post_id).copied()
    }

    pub fn reply(&self, post_id: &str, reply_index: usize) -> Option<&Reply> {
        self.get(post_id).and_then(|p| p.replies.get(reply_index))
    }

    pub fn qr_pairs(&self) -> Vec<QrPair> {
        build_qr_pairs(&self.posts)
    }
}
