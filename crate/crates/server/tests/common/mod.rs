//! A small bundle built from the core crate's hand-written desk corpus.
#![allow(dead_code)]

use coachbot_core::ingest::NoiseFilter;
use coachbot_core::ranker::{Activation, TargetMode, TrainConfig};
use coachbot_core::service::{
    build_bundle, ingest, BuildConfig, EmbeddingConfig, EngineBundle, PipelineConfig, RankerTraining,
};
use coachbot_core::text::PvdmConfig;

pub const DESK_CORPUS: &str = include_str!("../../../core/tests/data/desk_corpus.jsonl");

pub fn desk_bundle() -> EngineBundle {
    let pvdm = |dim| PvdmConfig {
        window: 2,
        epochs: 40,
        seed: 5,
        ..PvdmConfig::default().with_dim(dim)
    };
    let config = BuildConfig {
        embeddings: EmbeddingConfig {
            title: pvdm(32),
            reply: pvdm(16),
        },
        ranker: RankerTraining {
            features: 4,
            activation: Activation::Relu,
            train: TrainConfig {
                epochs: 5,
                target_mode: TargetMode::OneHot,
                ..TrainConfig::default()
            },
        },
        pipeline: PipelineConfig {
            k1: 20,
            ..PipelineConfig::default()
        },
    };
    let corpus = ingest(DESK_CORPUS.as_bytes(), &NoiseFilter::empty())
        .expect("desk corpus ingests")
        .corpus;
    build_bundle(corpus, &config).expect("desk bundle builds").0
}
