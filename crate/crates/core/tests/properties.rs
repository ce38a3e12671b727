use coachbot_core::ingest::{build_qr_pairs, clean_posts, NoiseFilter, Post, Reply};
use coachbot_core::ranker::{
    candidate_scores, likes_targets, response_distribution, Activation, RankerParams, RankerShape,
};
use coachbot_core::text::TfIdfModel;
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        Just("   ".to_string()),
        Just("<img src=a.png>".to_string()),
        Just("BUY NOW".to_string()),
        "[a-z ]{1,20}",
    ]
}

fn post() -> impl Strategy<Value = Post> {
    (
        text(),
        text(),
        prop::collection::vec((text(), 0u64..10, 0u64..10), 0..4),
    )
        .prop_map(|(title, body, replies)| Post {
            post_id: String::new(),
            title,
            body,
            source: String::new(),
            replies: replies
                .into_iter()
                .map(|(t, l, d)| Reply::with_votes(t, l, d))
                .collect(),
        })
}

fn posts() -> impl Strategy<Value = Vec<Post>> {
    prop::collection::vec(post(), 0..30).prop_map(|mut ps| {
        for (i, p) in ps.iter_mut().enumerate() {
            p.post_id = format!("p{i}");
        }
        ps
    })
}

fn noise() -> NoiseFilter {
    NoiseFilter::new(["buy now"]).unwrap()
}

proptest! {
    #[test]
    fn cleaning_conserves_posts(ps in posts()) {
        let n = ps.len();
        let (kept, stats) = clean_posts(ps, &noise());
        prop_assert_eq!(stats.posts_in, n);
        prop_assert!(stats.is_balanced());
        prop_assert_eq!(stats.posts_kept, kept.len());
        prop_assert_eq!(stats.replies_kept, kept.iter().map(|p| p.replies.len()).sum::<usize>());
        prop_assert_eq!(build_qr_pairs(&kept).len(), stats.replies_kept);
    }

    #[test]
    fn cleaning_is_idempotent(ps in posts()) {
        let (once, _) = clean_posts(ps, &noise());
        let (twice, stats) = clean_posts(once.clone(), &noise());
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(stats.dropped(), 0);
    }

    #[test]
    fn softmax_is_a_distribution(g in prop::collection::vec(-700.0f64..700.0, 1..20)) {
        let p = response_distribution(&g).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn likes_targets_are_a_distribution(net in prop::collection::vec(-1000i64..1000, 1..20)) {
        let t = likes_targets(&net);
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(t.iter().all(|&x| x >= 0.0));
        for (ti, ni) in t.iter().zip(&net) {
            if *ni <= 0 && net.iter().any(|&n| n > 0) {
                prop_assert_eq!(*ti, 0.0);
            }
        }
    }

    #[test]
    fn scores_follow_candidate_permutation(
        seed in 0u64..1000,
        cands in prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 3), 1..8),
        q in prop::collection::vec(-3.0f32..3.0, 2),
        rotate in 0usize..8,
    ) {
        let shape = RankerShape { m: 3, d_q: 2, d_r: 3, activation: Activation::Softplus };
        let params = RankerParams::init(shape, seed);
        let mut rotated = cands.clone();
        let k = rotate % cands.len();
        rotated.rotate_left(k);
        let g = candidate_scores(&q, &cands, &params).unwrap();
        let gr = candidate_scores(&q, &rotated, &params).unwrap();
        let mut expected = g.clone();
        expected.rotate_left(k);
        prop_assert_eq!(&gr, &expected);
        let mut p = response_distribution(&g).unwrap();
        p.rotate_left(k);
        prop_assert_eq!(response_distribution(&gr).unwrap(), p);
    }

    #[test]
    fn tfidf_is_homogeneous_in_tf(tokens in prop::collection::vec("[a-d]", 1..12)) {
        let docs = vec![vec!["a".to_string(), "b".to_string()], vec!["c".to_string()], tokens.clone()];
        let model = TfIdfModel::fit(&docs).unwrap();
        let doubled: Vec<String> = tokens.iter().chain(&tokens).cloned().collect();
        let v = model.vectorize(&tokens);
        let v2 = model.vectorize(&doubled);
        for (t, w) in v.entries() {
            prop_assert!((v2.get(*t) - 2.0 * w).abs() < 1e-12);
        }
    }
}
