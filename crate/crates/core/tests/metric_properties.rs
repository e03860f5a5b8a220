use std::collections::HashMap;

use dynrank_core::corpus::{Passage, Qrels, Question, Run, RunEntry};
use dynrank_core::eval::{ndcg_at_k, topk_accuracy};
use dynrank_core::passage_lookup;
use proptest::prelude::*;

fn ranked(qid: &str, ids: &[String]) -> Vec<RunEntry> {
    ids.iter()
        .enumerate()
        .map(|(i, pid)| RunEntry {
            query_id: qid.to_string(),
            passage_id: pid.clone(),
            rank: i + 1,
            score: (ids.len() - i) as f64,
            tag: "t".into(),
        })
        .collect()
}

fn single(ids: &[String]) -> Run {
    let mut run = Run::new();
    run.insert("q".to_string(), ranked("q", ids));
    run
}

fn graded(grades: &[u32]) -> (Vec<String>, Qrels) {
    let ids: Vec<String> = (0..grades.len()).map(|i| format!("d{i}")).collect();
    let mut qrels = Qrels::default();
    for (id, &g) in ids.iter().zip(grades) {
        qrels.insert("q", id, g);
    }
    (ids, qrels)
}

fn ndcg(ids: &[String], qrels: &Qrels, k: usize) -> f64 {
    ndcg_at_k(&single(ids), qrels, k).unwrap().mean
}

/// Answer-bearing flags per passage, per question.
fn accuracy_instance() -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), 1..12), 1..8)
}

fn build(instance: &[Vec<bool>]) -> (Vec<Passage>, Vec<Question>, Run) {
    let mut passages = Vec::new();
    let mut questions = Vec::new();
    let mut run = Run::new();
    for (qi, flags) in instance.iter().enumerate() {
        let qid = format!("q{qi}");
        let mut ids = Vec::new();
        for (pi, &hit) in flags.iter().enumerate() {
            let id = format!("q{qi}-p{pi}");
            let text = if hit {
                format!("holds answer{qi} here")
            } else {
                "nothing".into()
            };
            passages.push(Passage::new(id.clone(), None, text));
            ids.push(id);
        }
        let mut q = Question::new(qid.clone(), "question");
        q.answers = vec![format!("answer{qi}")];
        questions.push(q);
        run.insert(qid.clone(), ranked(&qid, &ids));
    }
    (passages, questions, run)
}

proptest! {
    #[test]
    fn accuracy_is_monotone_in_k(instance in accuracy_instance()) {
        let (passages, questions, run) = build(&instance);
        let lookup = passage_lookup(&passages);
        let ks: Vec<usize> = (1..=12).collect();
        let report = topk_accuracy(&run, &questions, &lookup, &ks).unwrap();
        let values: Vec<f64> = report.per_k.values().copied().collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((report.avg - mean).abs() < 1e-15);
    }

    #[test]
    fn promoting_gold_dominates(instance in accuracy_instance()) {
        let (passages, questions, run) = build(&instance);
        let lookup: HashMap<&str, &Passage> = passage_lookup(&passages);
        let mut promoted = Run::new();
        let mut strictly_better = false;
        for (qi, flags) in instance.iter().enumerate() {
            let qid = format!("q{qi}");
            let mut ids: Vec<String> = (0..flags.len()).map(|pi| format!("q{qi}-p{pi}")).collect();
            if let Some(first) = flags.iter().position(|&h| h) {
                strictly_better |= first > 0;
                let gold = ids.remove(first);
                ids.insert(0, gold);
            }
            promoted.insert(qid.clone(), ranked(&qid, &ids));
        }
        let ks = [1, 3, 5, 12];
        let base = topk_accuracy(&run, &questions, &lookup, &ks).unwrap();
        let better = topk_accuracy(&promoted, &questions, &lookup, &ks).unwrap();
        for k in ks {
            prop_assert!(better.per_k[&k] >= base.per_k[&k]);
        }
        if strictly_better {
            prop_assert!(better.per_k[&1] > base.per_k[&1]);
        }
    }

    #[test]
    fn no_permutation_beats_the_ideal_order(
        grades in prop::collection::vec(0u32..4, 1..10),
        seed in any::<u64>(),
        k in 1usize..12,
    ) {
        let (mut ids, qrels) = graded(&grades);
        let mut ideal = ids.clone();
        ideal.sort_by_key(|id| std::cmp::Reverse(qrels.grade("q", id)));
        // deterministic shuffle from the seed
        let mut state = seed | 1;
        for i in (1..ids.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ids.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let best = ndcg(&ideal, &qrels, k);
        let value = ndcg(&ids, &qrels, k);
        prop_assert!((0.0..=1.0).contains(&value));
        prop_assert!(value <= best + 1e-12);
        if grades.iter().any(|&g| g > 0) {
            prop_assert!((best - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(best, 0.0);
        }
    }

    #[test]
    fn swapping_a_better_item_upward_never_hurts(
        grades in prop::collection::vec(0u32..4, 2..10),
        i in any::<prop::sample::Index>(),
        j in any::<prop::sample::Index>(),
        k in 1usize..12,
    ) {
        let (ids, qrels) = graded(&grades);
        let (mut hi, mut lo) = (i.index(ids.len()), j.index(ids.len()));
        if hi > lo {
            std::mem::swap(&mut hi, &mut lo);
        }
        prop_assume!(qrels.grade("q", &ids[lo]) > qrels.grade("q", &ids[hi]));
        let mut swapped = ids.clone();
        swapped.swap(hi, lo);
        prop_assert!(ndcg(&swapped, &qrels, k) >= ndcg(&ids, &qrels, k) - 1e-12);
    }
}
