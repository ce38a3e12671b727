//! Retrieval-based short-text-conversation engine.
//!
//! A forum corpus of posts and scored replies becomes the knowledge base.
//! For a user utterance the engine
//!
//! 1. retrieves the posts whose title vectors are closest to the utterance
//!    ([`retrieval`]),
//! 2. re-scores those posts with TF-IDF and pools their replies into a
//!    candidate set ([`matching`]),
//! 3. scores every candidate with a bilinear ranker, turns the scores into a
//!    distribution and picks a reply ([`ranker`]).
//!
//! [`service`] wires the stages together, persists trained bundles and keeps
//! chat sessions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ingest;
pub mod matching;
pub mod persist;
pub mod ranker;
pub mod retrieval;
pub mod service;
pub mod text;
