mod common;

use std::time::Duration;

use common::{start_embedder, two_instance_suite};
use semleak::embed::{prefetch, EmbeddingCache, EmbeddingClient, EmbeddingKind};
use semleak::http::RetryPolicy;
use semleak::scoring::{score_pairs, score_with, GenerationPair};
use semleak_core::mockbench::HashEmbedder;
use semleak_core::similarity::{
    BackendKind, BertScoreScorer, CosineScorer, PairFlag, SentenceEmbedder,
    SimilarityBackendConfig, TokenEmbedder,
};

fn client(addr: std::net::SocketAddr) -> EmbeddingClient {
    EmbeddingClient::new(
        &format!("http://{addr}"),
        None,
        Duration::from_secs(10),
        RetryPolicy::default(),
    )
    .unwrap()
}

fn pairs() -> Vec<GenerationPair> {
    let p = |id: &str, s: u32, t: &str, c: &str| GenerationPair {
        instance_id: id.into(),
        model_id: "m".into(),
        temperature: 1.0,
        sample_index: s,
        test_text: t.into(),
        control_text: c.into(),
    };
    vec![
        p("color-yellow", 0, "school bus driver", "teacher"),
        p(
            "color-yellow",
            1,
            "yellow cab driver",
            "banker at a yellow bank",
        ),
        p("color-yellow", 2, "", "plumber"),
        p(
            "story-coral",
            0,
            "A child loved the reef and the sea.",
            "A child loved trains.",
        ),
        p("story-coral", 1, "!!!", "A child."),
    ]
}

#[tokio::test]
async fn wire_protocols_match_the_local_embedder() {
    let (addr, _) = start_embedder().await;
    let c = client(addr);
    let local = HashEmbedder::default();
    let texts = vec!["He likes yellow".to_string(), "绿色的灯".to_string()];
    let got = c.embed_sentences("m", &texts).await.unwrap();
    for (t, v) in texts.iter().zip(&got) {
        assert_eq!(v.as_slice(), local.embed("m", t).unwrap().values());
    }
    let tok = c.embed_tokens("m", "School bus").await.unwrap();
    let want = local.embed_tokens("m", "School bus").unwrap();
    assert_eq!(tok.tokens, want.tokens());
    assert_eq!(tok.vectors[1].as_slice(), want.vectors()[1].values());
}

#[tokio::test]
async fn remote_scores_equal_in_process_scores() {
    let suite = two_instance_suite();
    let (addr, _) = start_embedder().await;
    let local = HashEmbedder::default();
    for kind in [BackendKind::SentenceCosine, BackendKind::TokenBertscore] {
        let mut backend = SimilarityBackendConfig::new("b", kind, "hash-en");
        backend.endpoint = format!("http://{addr}");
        let remote = score_pairs(&suite, &pairs(), &backend, 0.0, None, None)
            .await
            .unwrap();
        let expected = match kind {
            BackendKind::SentenceCosine => {
                score_with(&suite, &pairs(), &backend, &CosineScorer(local), 0.0)
            }
            _ => score_with(
                &suite,
                &pairs(),
                &backend,
                &BertScoreScorer {
                    embedder: local,
                    component: backend.bertscore_component,
                },
                0.0,
            ),
        };
        assert_eq!(remote.scores, expected, "{kind:?}");
        assert_eq!(remote.scores[2].flag, Some(PairFlag::EmptyText));
        // "!!!" has no tokens: the service rejects it and the pair is unscored.
        assert_eq!(remote.scores[4].flag, Some(PairFlag::Unscored));
        assert_eq!(remote.embed_failures.len(), 1);
        assert!(remote.scores[0].flag.is_none() && remote.scores[3].flag.is_none());
    }
}

#[tokio::test]
async fn cache_serves_repeat_runs() {
    let suite = two_instance_suite();
    let (addr, stub) = start_embedder().await;
    let dir = tempfile::tempdir().unwrap();
    let cache = EmbeddingCache::new(dir.path());
    let mut backend = SimilarityBackendConfig::new("BS", BackendKind::TokenBertscore, "hash-en");
    backend.endpoint = format!("http://{addr}");
    let first = score_pairs(&suite, &pairs(), &backend, 0.0, Some(&cache), None)
        .await
        .unwrap();
    let after_first = stub.stats.requests();
    assert!(after_first > 0);
    let second = score_pairs(&suite, &pairs(), &backend, 0.0, Some(&cache), None)
        .await
        .unwrap();
    assert_eq!(first.scores, second.scores);
    // Only the rejected text is requested again.
    assert_eq!(stub.stats.requests(), after_first + 1);
}

#[tokio::test]
async fn sentence_requests_are_batched_and_deduplicated() {
    let (addr, stub) = start_embedder().await;
    let texts: Vec<(String, String)> = (0..70)
        .map(|i| ("m".to_string(), format!("text {}", i % 50)))
        .collect();
    let (table, failures) = prefetch(&client(addr), None, EmbeddingKind::Sentence, texts, 4).await;
    assert!(failures.is_empty());
    assert_eq!(table.len(), 50);
    assert_eq!(
        stub.stats.requests(),
        2,
        "50 distinct texts in batches of 32"
    );
}

#[tokio::test]
async fn unreachable_endpoint_flags_every_pair() {
    let suite = two_instance_suite();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut backend = SimilarityBackendConfig::new("SB", BackendKind::SentenceCosine, "hash-en");
    backend.endpoint = format!("http://{addr}");
    let out = score_pairs(&suite, &pairs(), &backend, 0.0, None, None)
        .await
        .unwrap();
    assert!(out.scores.iter().all(|s| s.flag.is_some()));
    assert!(!out.embed_failures.is_empty());
}
