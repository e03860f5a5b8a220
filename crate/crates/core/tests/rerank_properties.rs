use std::collections::{HashMap, HashSet};

use dynrank_core::bm25::{Analyzer, Bm25Params, InvertedIndex};
use dynrank_core::corpus::{Passage, Question, Run};
use dynrank_core::passage_lookup;
use dynrank_core::prompt::{PromptMode, TemplateRegistry};
use dynrank_core::rerank::{Candidate, RerankConfig, Reranker};
use dynrank_core::scorer::MockScorer;
use dynrank_core::taxonomy::{QuestionType, Taxonomy};

/// Add-one smoothed unigram log-likelihood, written out from the formula.
fn mock_by_hand(context: &str, question: &str) -> f64 {
    let ctx: Vec<String> = context.split_whitespace().map(str::to_lowercase).collect();
    let q: Vec<String> = question.split_whitespace().map(str::to_lowercase).collect();
    let vocab: HashSet<&String> = ctx.iter().chain(q.iter()).collect();
    let denom = (ctx.len() + vocab.len()) as f64;
    q.iter()
        .map(|w| ((ctx.iter().filter(|c| *c == w).count() as f64 + 1.0) / denom).ln())
        .sum::<f64>()
        / q.len() as f64
}

fn typed(id: &str, text: &str, label: Option<&str>) -> Question {
    let mut q = Question::new(id, text);
    q.gold_type = label.and_then(QuestionType::parse_unchecked);
    q
}

fn bm25_run(passages: &[Passage], questions: &[Question], k: usize) -> Run {
    let index = InvertedIndex::build(passages, Analyzer).unwrap();
    let mut run = Run::new();
    for q in questions {
        run.insert(
            q.id.clone(),
            index
                .retrieve(&Bm25Params::default(), &q.id, &q.text, k)
                .unwrap(),
        );
    }
    run
}

fn config(mode: PromptMode) -> RerankConfig {
    RerankConfig {
        mode,
        ..Default::default()
    }
}

fn order(run: &Run, qid: &str) -> Vec<String> {
    run[qid].iter().map(|e| e.passage_id.clone()).collect()
}

#[test]
fn gold_sharing_five_tokens_beats_stuffed_distractor() {
    let question = typed(
        "q",
        "who designed the stone bridge of velmora",
        Some("HUM:ind"),
    );
    let mut passages = vec![
        Passage::new(
            "distractor",
            None,
            "velmora velmora velmora guide velmora hotels velmora maps",
        ),
        Passage::new(
            "gold",
            None,
            "The stone bridge was designed by Tomas Vrell, who also planned the square.",
        ),
    ];
    // background text that makes the shared words common and the place name rare
    const BACKGROUND: [&str; 6] = ["who", "designed", "the", "stone", "bridge", "of"];
    for i in 0..40 {
        let words: Vec<&str> = (0..4)
            .map(|j| BACKGROUND[(i + j) % BACKGROUND.len()])
            .collect();
        passages.push(Passage::new(
            format!("b{i}"),
            None,
            format!("{} tours", words.join(" ")),
        ));
    }
    let retrieved = bm25_run(&passages, std::slice::from_ref(&question), passages.len());
    let mut run = Run::new();
    let pair: Vec<_> = retrieved["q"]
        .iter()
        .filter(|e| e.passage_id == "gold" || e.passage_id == "distractor")
        .enumerate()
        .map(|(i, e)| dynrank_core::corpus::RunEntry {
            rank: i + 1,
            ..e.clone()
        })
        .collect();
    assert_eq!(pair[0].passage_id, "distractor");
    run.insert("q".to_string(), pair);

    let tax = Taxonomy::default_table();
    let registry = TemplateRegistry::shipped(tax);
    let qt = question.gold_type.clone();
    let gold_prompt = registry.render(qt.as_ref(), &passages[1], 512).text;
    let distractor_prompt = registry.render(qt.as_ref(), &passages[0], 512).text;
    assert!(
        mock_by_hand(&gold_prompt, &question.text)
            > mock_by_hand(&distractor_prompt, &question.text)
    );

    let reranker = Reranker::new(&registry, &MockScorer, config(PromptMode::Dynamic)).unwrap();
    let out = reranker
        .rerank_run(
            std::slice::from_ref(&question),
            &run,
            &passage_lookup(&passages),
            None,
        )
        .unwrap();
    assert_eq!(out.run["q"][0].passage_id, "gold");
    assert!((out.run["q"][0].score - mock_by_hand(&gold_prompt, &question.text)).abs() < 1e-12);
}

fn three_query_fixture() -> (Vec<Passage>, Vec<Question>) {
    let passages: Vec<Passage> = [
        "the river runs past the old mill",
        "a mill on the river ground wheat",
        "the mayor opened the mill in spring",
        "spring floods reached the river bank",
        "wheat prices rose after the floods",
        "the old bank closed its doors",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| Passage::new(format!("p{i}"), Some("Town"), *t))
    .collect();
    let questions = vec![
        typed("a", "who opened the mill", Some("HUM:ind")),
        typed("b", "when did the floods reach the river", Some("NUM:date")),
        typed("c", "what did the mill ground", None),
    ];
    (passages, questions)
}

#[test]
fn run_rerank_equals_independent_question_reranks() {
    let (passages, questions) = three_query_fixture();
    let run = bm25_run(&passages, &questions, 6);
    let registry = TemplateRegistry::shipped(Taxonomy::default_table());
    let reranker = Reranker::new(&registry, &MockScorer, config(PromptMode::Dynamic)).unwrap();
    let lookup = passage_lookup(&passages);
    let whole = reranker
        .rerank_run(&questions, &run, &lookup, None)
        .unwrap();

    for q in &questions {
        let candidates: Vec<Candidate> = run[&q.id]
            .iter()
            .map(|e| Candidate {
                passage: lookup[e.passage_id.as_str()],
                original_rank: e.rank,
            })
            .collect();
        let alone = reranker
            .rerank_question(q, &candidates, q.gold_type.as_ref())
            .unwrap();
        let ids: Vec<String> = alone.iter().map(|c| c.passage_id.clone()).collect();
        assert_eq!(order(&whole.run, &q.id), ids);
        for (entry, c) in whole.run[&q.id].iter().zip(&alone) {
            assert_eq!(entry.score, c.score);
            assert_eq!(entry.rank, c.rank);
        }
    }

    // partitioning the query set does not change any query's result
    for q in &questions {
        let mut sub = Run::new();
        sub.insert(q.id.clone(), run[&q.id].clone());
        let part = reranker
            .rerank_run(std::slice::from_ref(q), &sub, &lookup, None)
            .unwrap();
        assert_eq!(part.run[&q.id], whole.run[&q.id]);
    }
}

#[test]
fn depth_one_keeps_only_the_top_candidate() {
    let (passages, questions) = three_query_fixture();
    let run = bm25_run(&passages, &questions, 6);
    let registry = TemplateRegistry::shipped(Taxonomy::default_table());
    let reranker = Reranker::new(
        &registry,
        &MockScorer,
        RerankConfig {
            depth: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let out = reranker
        .rerank_run(&questions, &run, &passage_lookup(&passages), None)
        .unwrap();
    for q in &questions {
        assert_eq!(out.run[&q.id].len(), 1);
        assert_eq!(out.run[&q.id][0].passage_id, run[&q.id][0].passage_id);
        assert_eq!(out.run[&q.id][0].rank, 1);
    }
}

#[test]
fn static_equals_dynamic_under_default_only_registry() {
    let (passages, questions) = three_query_fixture();
    let run = bm25_run(&passages, &questions, 6);
    let registry = TemplateRegistry::default_only(Taxonomy::default_table());
    let lookup = passage_lookup(&passages);
    let dynamic = Reranker::new(&registry, &MockScorer, config(PromptMode::Dynamic))
        .unwrap()
        .rerank_run(&questions, &run, &lookup, None)
        .unwrap();
    let static_ = Reranker::new(&registry, &MockScorer, config(PromptMode::Static))
        .unwrap()
        .rerank_run(&questions, &run, &lookup, None)
        .unwrap();
    for q in &questions {
        assert_eq!(order(&dynamic.run, &q.id), order(&static_.run, &q.id));
        let scores = |r: &Run| r[&q.id].iter().map(|e| e.score).collect::<Vec<_>>();
        assert_eq!(scores(&dynamic.run), scores(&static_.run));
    }
}

#[test]
fn types_sharing_a_prompt_rerank_identically() {
    let (passages, _) = three_query_fixture();
    let tax = Taxonomy::default_table();
    let registry = TemplateRegistry::parse(
        "*\tDocument: {passage}. Please write a question based on this passage.\n\
         HUM:*\tDocument: {passage}. The above Document is about {major_phrase}.\n",
        "templates",
        tax,
    )
    .unwrap();
    let reranker = Reranker::new(&registry, &MockScorer, config(PromptMode::Dynamic)).unwrap();
    let lookup = passage_lookup(&passages);
    let rerank_as = |label: &str| {
        let q = typed("q", "who opened the mill", Some(label));
        let run = bm25_run(&passages, std::slice::from_ref(&q), 6);
        reranker
            .rerank_run(std::slice::from_ref(&q), &run, &lookup, None)
            .unwrap()
            .run
    };
    assert_eq!(rerank_as("HUM:ind"), rerank_as("HUM:gr"));
}

#[test]
fn output_does_not_depend_on_parallelism() {
    let (passages, questions) = three_query_fixture();
    let run = bm25_run(&passages, &questions, 6);
    let registry = TemplateRegistry::shipped(Taxonomy::default_table());
    let lookup: HashMap<&str, &Passage> = passage_lookup(&passages);
    let runs: Vec<Run> = [1, 2, 16]
        .into_iter()
        .map(|parallelism| {
            let config = RerankConfig {
                parallelism,
                ..Default::default()
            };
            Reranker::new(&registry, &MockScorer, config)
                .unwrap()
                .rerank_run(&questions, &run, &lookup, None)
                .unwrap()
                .run
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}
