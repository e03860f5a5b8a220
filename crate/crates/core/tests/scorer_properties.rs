use std::sync::Arc;
use std::time::Duration;

use dynrank_core::scorer::{
    cache_key, score_batch, score_mock, BatchOptions, HttpResponse, RemoteScorer, ScoreCache,
    ScoreRequest, ScoreResult, Scorer, Transport, TransportFailure,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["the", "cat", "sat", "on", "mat", "dog", "ran", "far"];

fn text(ids: &[usize]) -> String {
    ids.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ")
}

fn words() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..WORDS.len(), 1..20)
}

proptest! {
    #[test]
    fn mock_is_a_log_probability(context in words(), question in words()) {
        let r = score_mock(&ScoreRequest::new(text(&context), text(&question))).unwrap();
        prop_assert!(r.avg_logprob <= 0.0);
        // P(w) = 1 only when the context is one token repeated and the question is that token
        let degenerate = context.iter().chain(&question).all(|&w| w == context[0]);
        if !degenerate {
            prop_assert!(r.avg_logprob < 0.0);
        }
        prop_assert_eq!(r.token_count, question.len());
    }

    #[test]
    fn mock_ignores_context_order(context in words(), question in words(), seed in any::<u64>()) {
        let mut shuffled = context.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = score_mock(&ScoreRequest::new(text(&context), text(&question))).unwrap();
        let b = score_mock(&ScoreRequest::new(text(&shuffled), text(&question))).unwrap();
        prop_assert_eq!(a.avg_logprob, b.avg_logprob);
    }

    #[test]
    fn mock_rises_when_a_question_token_gains_context_weight(
        context in words(),
        question in words(),
        slot in any::<prop::sample::Index>(),
        pick in any::<prop::sample::Index>(),
    ) {
        // swap one non-question context token for a question token: length is unchanged
        let replaceable: Vec<usize> = (0..context.len()).filter(|&i| !question.contains(&context[i])).collect();
        prop_assume!(!replaceable.is_empty());
        let mut boosted = context.clone();
        boosted[replaceable[slot.index(replaceable.len())]] = question[pick.index(question.len())];
        let before = score_mock(&ScoreRequest::new(text(&context), text(&question))).unwrap();
        let after = score_mock(&ScoreRequest::new(text(&boosted), text(&question))).unwrap();
        prop_assert!(after.avg_logprob > before.avg_logprob);
    }

    #[test]
    fn mock_caps_question_tokens(context in words(), question in words(), cap in 1usize..25) {
        let r = score_mock(&ScoreRequest::new(text(&context), text(&question)).with_cap(cap)).unwrap();
        prop_assert_eq!(r.token_count, question.len().min(cap));
    }
}

#[test]
fn thousand_request_batch_equals_sequential_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let requests: Vec<ScoreRequest> = (0..1000)
        .map(|_| {
            let c: Vec<usize> = (0..rng.random_range(1..30))
                .map(|_| rng.random_range(0..8))
                .collect();
            let q: Vec<usize> = (0..rng.random_range(1..8))
                .map(|_| rng.random_range(0..8))
                .collect();
            ScoreRequest::new(text(&c), text(&q))
        })
        .collect();
    let batched = score_batch(
        &dynrank_core::scorer::MockScorer,
        &requests,
        Some(&ScoreCache::in_memory()),
        &BatchOptions::with_parallelism(16),
    );
    assert_eq!(batched.len(), requests.len());
    for (request, result) in requests.iter().zip(batched) {
        let expected = score_mock(request).unwrap();
        let got = result.unwrap();
        assert_eq!(got.avg_logprob, expected.avg_logprob);
        assert_eq!(got.token_count, expected.token_count);
    }
}

#[test]
fn concurrent_cache_writers_persist_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.tsv");
    let cache = ScoreCache::open(&path).unwrap();
    std::thread::scope(|s| {
        for t in 0..8 {
            let cache = &cache;
            s.spawn(move || {
                for i in 0..50 {
                    let key = cache_key("m", &format!("ctx {t} {i}"), "q");
                    let result = ScoreResult {
                        avg_logprob: -((t * 50 + i) as f64) / 7.0,
                        token_count: i + 1,
                        backend_meta: Default::default(),
                    };
                    cache.put(&key, &result).unwrap();
                }
            });
        }
    });
    cache.flush().unwrap();
    drop(cache);

    let reopened = ScoreCache::open(&path).unwrap();
    assert_eq!(reopened.len(), 400);
    for t in 0..8 {
        for i in 0..50 {
            let hit = reopened
                .get(&cache_key("m", &format!("ctx {t} {i}"), "q"))
                .unwrap();
            assert_eq!(hit.avg_logprob, -((t * 50 + i) as f64) / 7.0);
            assert_eq!(hit.token_count, i + 1);
        }
    }
}

/// Echo server stand-in: splits the prompt into word tokens that carry their
/// leading space, and gives each token a log-probability that depends only on
/// its text.
struct EchoTokenizer;

fn token_logprob(token: &str) -> f64 {
    -(token.trim().len() as f64 + 1.0) / 4.0
}

impl Transport for EchoTokenizer {
    fn post_json(
        &self,
        _url: &str,
        body: &serde_json::Value,
        _timeout: Duration,
    ) -> Result<HttpResponse, TransportFailure> {
        let prompt: Vec<char> = body["prompt"].as_str().unwrap().chars().collect();
        let mut offsets = Vec::new();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < prompt.len() {
            let start = i;
            while i < prompt.len() && prompt[i] == ' ' {
                i += 1;
            }
            while i < prompt.len() && prompt[i] != ' ' {
                i += 1;
            }
            offsets.push(start);
            tokens.push(prompt[start..i].iter().collect::<String>());
        }
        let mut logprobs: Vec<Option<f64>> =
            tokens.iter().map(|t| Some(token_logprob(t))).collect();
        logprobs[0] = None;
        let response = serde_json::json!({
            "choices": [{"logprobs": {"tokens": tokens, "token_logprobs": logprobs, "text_offset": offsets}}]
        });
        Ok(HttpResponse {
            status: 200,
            body: response.to_string(),
        })
    }
}

proptest! {
    #[test]
    fn remote_span_ignores_context_prefix(
        context in words(),
        prefix in words(),
        question in words(),
    ) {
        let scorer = RemoteScorer::with_transport(
            "http://echo", "m", Duration::from_secs(1), 0, Box::new(Arc::new(EchoTokenizer)),
        );
        let q = text(&question);
        let plain = scorer.score(&ScoreRequest::new(text(&context), q.clone())).unwrap();
        let longer = format!("{} {}", text(&prefix), text(&context));
        let prefixed = scorer.score(&ScoreRequest::new(longer, q.clone())).unwrap();
        prop_assert_eq!(plain.token_count, question.len());
        prop_assert_eq!(plain.avg_logprob, prefixed.avg_logprob);
        let expected = question.iter().map(|&w| token_logprob(WORDS[w])).sum::<f64>() / question.len() as f64;
        prop_assert!((plain.avg_logprob - expected).abs() < 1e-12);
    }
}
