mod common;

use std::collections::HashSet;
use std::sync::OnceLock;

use coachbot_core::persist::PersistError;
use coachbot_core::ranker::{SelectionPolicy, TargetMode};
use coachbot_core::service::{
    assemble_episodes, evaluate, read_manifest, AnswerOptions, EngineBundle, HeldoutPair, ServiceError, SessionStore,
    RANKER_FILE,
};

fn bundle() -> &'static EngineBundle {
    static BUNDLE: OnceLock<EngineBundle> = OnceLock::new();
    BUNDLE.get_or_init(common::desk_bundle)
}

fn corpus_replies(bundle: &EngineBundle) -> HashSet<String> {
    bundle
        .corpus()
        .posts()
        .iter()
        .flat_map(|p| p.replies.iter().map(|r| r.text.clone()))
        .collect()
}

#[test]
fn answers_come_from_the_corpus() {
    let b = bundle();
    let replies = corpus_replies(b);
    for q in common::desk_probes(50) {
        let r = b.answer(&q, &AnswerOptions::argmax()).unwrap();
        assert!(replies.contains(&r.response_text), "{q:?} -> {:?}", r.response_text);
    }
}

#[test]
fn trace_is_complete() {
    let b = bundle();
    for (i, q) in common::desk_probes(20).iter().enumerate() {
        let opts = AnswerOptions {
            policy: Some(SelectionPolicy::Sample),
            temperature: Some(0.7),
            seed: Some(i as u64),
        };
        let r = b.answer(q, &opts).unwrap();
        let t = &r.trace;
        assert!(!t.candidates.is_empty() && t.candidates.len() <= b.config().matching.cap);
        assert!(t.selected_index < t.candidates.len());
        assert_eq!(r.response_text, t.candidates[t.selected_index].text);
        let total: f64 = t.candidates.iter().map(|c| c.probability).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(t.seed, i as u64);
        assert_eq!(t.policy, SelectionPolicy::Sample);
        assert!(t.retrieved.len() <= b.config().k1);
    }
}

#[test]
fn argmax_is_deterministic() {
    let b = bundle();
    for q in common::desk_probes(20) {
        let a = b.answer(&q, &AnswerOptions::argmax()).unwrap();
        let c = b.answer(&q, &AnswerOptions::argmax()).unwrap();
        assert_eq!(a.response_text, c.response_text);
        assert_eq!(a.trace.candidates, c.trace.candidates);
        assert_eq!(a.trace.selected_index, c.trace.selected_index);
    }
}

#[test]
fn seeded_sampling_is_reproducible() {
    let b = bundle();
    let opts = AnswerOptions {
        policy: Some(SelectionPolicy::Sample),
        temperature: None,
        seed: Some(99),
    };
    let q = "my partner is always jealous";
    assert_eq!(b.answer(q, &opts).unwrap(), b.answer(q, &opts).unwrap());
}

#[test]
fn empty_utterances_are_invalid() {
    for q in ["", "   ", "?!...", "\n\t"] {
        assert!(matches!(
            bundle().answer(q, &AnswerOptions::argmax()),
            Err(ServiceError::InvalidQuery)
        ));
    }
}

#[test]
fn unknown_words_fall_back_to_tfidf() {
    let b = bundle();
    let r = b.answer("zzzz qqqq", &AnswerOptions::argmax()).unwrap();
    assert!(r.trace.fallback);
    assert!(r.trace.retrieved.is_empty());
    assert!(corpus_replies(b).contains(&r.response_text));

    let r = b.answer("how do I propose", &AnswerOptions::argmax()).unwrap();
    assert!(!r.trace.fallback);
    assert!(!r.trace.retrieved.is_empty());
}

#[test]
fn save_load_answers_identically() {
    let b = bundle();
    let dir = tempfile::tempdir().unwrap();
    let manifest = b.save(dir.path()).unwrap();
    assert_eq!(manifest.corpus_posts, 40);
    assert_eq!(manifest.model_dims(), Some((32, 16)));
    let loaded = EngineBundle::load(dir.path()).unwrap();
    assert_eq!(&loaded, b);
    for (i, q) in common::desk_probes(20).iter().enumerate() {
        for opts in [
            AnswerOptions {
                seed: Some(3),
                ..AnswerOptions::argmax()
            },
            AnswerOptions {
                policy: Some(SelectionPolicy::Sample),
                temperature: Some(1.5),
                seed: Some(i as u64),
            },
        ] {
            assert_eq!(b.answer(q, &opts).unwrap(), loaded.answer(q, &opts).unwrap());
        }
    }
}

#[test]
fn truncated_vectors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    bundle().save(dir.path()).unwrap();
    let path = dir.path().join("title/vectors.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let err = EngineBundle::load(dir.path()).unwrap_err();
    assert!(err.file().unwrap().ends_with("vectors.bin"), "{err}");
    assert!(err.to_string().contains("truncated"));
}

#[test]
fn missing_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    bundle().save(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(RANKER_FILE)).unwrap();
    let err = EngineBundle::load(dir.path()).unwrap_err();
    assert_eq!(err.file(), Some(RANKER_FILE));
}

#[test]
fn tampered_file_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    bundle().save(dir.path()).unwrap();
    let path = dir.path().join("corpus.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("calendar", "schedule", 1)).unwrap();
    match EngineBundle::load(dir.path()).unwrap_err() {
        PersistError::Checksum { file } => assert_eq!(file, "corpus.jsonl"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn manifest_ranker_dims_must_match() {
    let dir = tempfile::tempdir().unwrap();
    bundle().save(dir.path()).unwrap();
    let mut manifest = read_manifest(dir.path()).unwrap();
    manifest.ranker.as_mut().unwrap().d_q = 64;
    std::fs::write(dir.path().join("manifest"), serde_json::to_vec(&manifest).unwrap()).unwrap();
    assert!(matches!(
        EngineBundle::load(dir.path()).unwrap_err(),
        PersistError::Inconsistent(_)
    ));
}

#[test]
fn one_hot_episodes_mark_the_true_reply() {
    let b = bundle();
    let episodes = assemble_episodes(b.knowledge_base(), b.config(), TargetMode::OneHot).unwrap();
    assert_eq!(episodes.len(), b.corpus().reply_count());
    for e in &episodes {
        assert!(e.reply_vecs.len() >= 2 && e.reply_vecs.len() <= b.config().matching.cap);
        assert_eq!(e.targets.iter().filter(|&&t| t == 1.0).count(), 1);
        assert_eq!(e.targets.iter().sum::<f64>(), 1.0);
    }
    let likes = assemble_episodes(b.knowledge_base(), b.config(), TargetMode::Likes).unwrap();
    assert_eq!(likes.len(), b.corpus().len());
}

#[test]
fn recall_counts_expected_replies() {
    let b = bundle();
    let heldout: Vec<HeldoutPair> = b
        .corpus()
        .posts()
        .iter()
        .map(|p| HeldoutPair {
            query: p.title.clone(),
            response: p.replies[0].text.clone(),
        })
        .chain(std::iter::once(HeldoutPair {
            query: "".into(),
            response: "nothing".into(),
        }))
        .collect();
    let report = evaluate(b, &heldout, &[1, 5, 10]);
    assert_eq!(report.queries, 41);
    assert_eq!(report.failed, 1);
    let r: Vec<f64> = report.recall.iter().map(|r| r.recall).collect();
    assert!(r[0] <= r[1] && r[1] <= r[2]);
    // A post's own title matches it exactly, so its replies are candidates.
    assert!(r[2] >= 0.9, "{r:?}");
}

#[test]
fn session_history_tracks_successful_answers() {
    let b = bundle();
    let store = SessionStore::new();
    let mut ok = 0;
    for q in ["how do i ask someone out", "", "first date tips please", "  "] {
        if let Ok(r) = b.answer(q, &AnswerOptions::argmax()) {
            store.record("s1", q, &r.response_text);
            ok += 1;
        }
    }
    assert_eq!(store.get("s1").unwrap().history.len(), ok);
    assert_eq!(ok, 2);
}
