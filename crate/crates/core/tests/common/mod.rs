//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two disjoint topic vocabularies. Documents `0..n/2` draw from topic A,
/// the rest from topic B, with a Zipf-like skew inside each topic.
pub fn two_topic_corpus(
    n_docs: usize,
    doc_len: usize,
    vocab_per_topic: usize,
    seed: u64,
) -> Vec<(String, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..vocab_per_topic).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let total: f64 = weights.iter().sum();
    (0..n_docs)
        .map(|i| {
            let topic = if i < n_docs / 2 { "a" } else { "b" };
            let toks = (0..doc_len)
                .map(|_| {
                    let mut u = rng.gen::<f64>() * total;
                    let mut w = 0;
                    while w + 1 < vocab_per_topic && u >= weights[w] {
                        u -= weights[w];
                        w += 1;
                    }
                    format!("{topic}{w}")
                })
                .collect();
            (format!("doc{i}"), toks)
        })
        .collect()
}

pub fn topic_of(i: usize, n_docs: usize) -> usize {
    usize::from(i >= n_docs / 2)
}

use coachbot_core::ranker::{one_hot_targets, TrainingEpisode};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Planted-signal episodes: each true reply vector is a fixed linear
/// projection of its query vector plus small noise; distractors are
/// projections of unrelated random query vectors. The true reply sits at a
/// random position among `cand` candidates.
pub fn planted_episodes(
    n: usize,
    cand: usize,
    d_q: usize,
    d_r: usize,
    noise: f64,
    amp: f64,
    seed: u64,
) -> Vec<TrainingEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d_q as f64).sqrt();
    let proj: Vec<Vec<f64>> = (0..d_r)
        .map(|_| (0..d_q).map(|_| gaussian(&mut rng) * scale).collect())
        .collect();
    let project = |x: &[f64], rng: &mut ChaCha8Rng| -> Vec<f32> {
        proj.iter()
            .map(|row| {
                (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + noise * amp * gaussian(rng) * scale) as f32
            })
            .collect()
    };
    (0..n)
        .map(|_| {
            let q: Vec<f64> = unit(&mut rng, d_q).into_iter().map(|x| x * amp).collect();
            let truth = rng.gen_range(0..cand);
            let replies = (0..cand)
                .map(|i| {
                    if i == truth {
                        project(&q, &mut rng)
                    } else {
                        let other: Vec<f64> = unit(&mut rng, d_q).into_iter().map(|x| x * amp).collect();
                        project(&other, &mut rng)
                    }
                })
                .collect();
            TrainingEpisode::new(
                q.iter().map(|&x| x as f32).collect(),
                replies,
                one_hot_targets(cand, truth).unwrap(),
            )
            .unwrap()
        })
        .collect()
}

/// Fraction of episodes whose highest-probability candidate is the target.
pub fn recall_at_1(episodes: &[TrainingEpisode], params: &coachbot_core::ranker::RankerParams) -> f64 {
    use coachbot_core::ranker::{candidate_scores, response_distribution, select_response, SelectionPolicy};
    let hits = episodes
        .iter()
        .filter(|ep| {
            let g = candidate_scores(&ep.query_vec, &ep.reply_vecs, params).unwrap();
            let p = response_distribution(&g).unwrap();
            let pick = select_response(&p, SelectionPolicy::Argmax, 1.0, 0).unwrap();
            ep.targets[pick] == 1.0
        })
        .count();
    hits as f64 / episodes.len() as f64
}

pub const DESK_CORPUS: &str = include_str!("../data/desk_corpus.jsonl");

/// Small models so the desk fixture trains in well under a second.
pub fn desk_build_config() -> coachbot_core::service::BuildConfig {
    use coachbot_core::ranker::{Activation, TargetMode, TrainConfig};
    use coachbot_core::service::{BuildConfig, EmbeddingConfig, PipelineConfig, RankerTraining};
    use coachbot_core::text::PvdmConfig;

    let pvdm = |dim| PvdmConfig {
        window: 2,
        epochs: 40,
        seed: 5,
        ..PvdmConfig::default().with_dim(dim)
    };
    BuildConfig {
        embeddings: EmbeddingConfig {
            title: pvdm(32),
            reply: pvdm(16),
        },
        ranker: RankerTraining {
            features: 4,
            activation: Activation::Relu,
            train: TrainConfig {
                epochs: 10,
                target_mode: TargetMode::OneHot,
                ..TrainConfig::default()
            },
        },
        pipeline: PipelineConfig {
            k1: 20,
            ..PipelineConfig::default()
        },
    }
}

pub fn desk_corpus() -> coachbot_core::ingest::Corpus {
    use coachbot_core::ingest::NoiseFilter;
    coachbot_core::service::ingest(DESK_CORPUS.as_bytes(), &NoiseFilter::empty())
        .expect("desk corpus ingests")
        .corpus
}

pub fn desk_bundle() -> coachbot_core::service::EngineBundle {
    coachbot_core::service::build_bundle(desk_corpus(), &desk_build_config())
        .expect("desk bundle builds")
        .0
}

/// Probe utterances: every post title, plus paraphrases and unseen text.
pub fn desk_probes(n: usize) -> Vec<String> {
    let corpus = desk_corpus();
    let extra = [
        "how do i ask someone out",
        "my boyfriend ignores me",
        "we argue about money all the time",
        "first date tips please",
        "i miss my ex so much",
        "is dating a coworker a bad idea",
        "zzzz qqqq",
        "help",
        "what gift for anniversary",
        "my partner is always jealous",
    ];
    corpus
        .posts()
        .iter()
        .map(|p| p.title.clone())
        .chain(extra.iter().map(|s| s.to_string()))
        .cycle()
        .take(n)
        .collect()
}
