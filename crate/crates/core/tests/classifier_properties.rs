use std::collections::BTreeMap;

use dynrank_core::classifier::{featurize, train, ClassifierModel, FeatureVector, TrainingConfig};
use dynrank_core::corpus::Question;
use dynrank_core::taxonomy::{QuestionType, Taxonomy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labeled(id: usize, text: &str, label: &str) -> Question {
    let mut q = Question::new(format!("t{id}"), text);
    q.gold_type = QuestionType::parse_unchecked(label);
    q
}

const PEOPLE: [&str; 10] = [
    "wrote",
    "painted",
    "invented",
    "discovered",
    "founded",
    "directed",
    "composed",
    "built",
    "designed",
    "led",
];
const THINGS: [&str; 10] = [
    "hamlet",
    "the bridge",
    "radio",
    "penicillin",
    "the company",
    "the film",
    "the opera",
    "the tower",
    "the flag",
    "the army",
];

/// Two classes, 50 questions each, with disjoint leading words.
fn toy_set() -> Vec<Question> {
    let mut out = Vec::new();
    for i in 0..50 {
        let (verb, thing) = (PEOPLE[i % 10], THINGS[(i / 10 + i) % 10]);
        out.push(labeled(2 * i, &format!("who {verb} {thing}"), "HUM:ind"));
        out.push(labeled(
            2 * i + 1,
            &format!("when was {thing} {verb}"),
            "NUM:date",
        ));
    }
    out
}

/// Brute-force perceptron over the featurized vectors; returns true when it
/// separates the two classes within `max_epochs`.
fn perceptron_separates(xs: &[FeatureVector], ys: &[bool], max_epochs: usize) -> bool {
    let mut w: BTreeMap<String, f64> = BTreeMap::new();
    let mut bias = 0.0;
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (x, &y) in xs.iter().zip(ys) {
            let target = if y { 1.0 } else { -1.0 };
            let activation: f64 = bias
                + x.iter()
                    .map(|(k, v)| w.get(k).copied().unwrap_or(0.0) * v)
                    .sum::<f64>();
            if target * activation <= 0.0 {
                mistakes += 1;
                for (k, v) in x {
                    *w.entry(k.clone()).or_default() += target * v;
                }
                bias += target;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

fn training_accuracy(model: &ClassifierModel, qs: &[Question]) -> f64 {
    let right = qs
        .iter()
        .filter(|q| Some(model.classify(&q.text)) == q.gold_type)
        .count();
    right as f64 / qs.len() as f64
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[&str] = &[
        "who",
        "when",
        "what",
        "is",
        "the",
        "wrote",
        "radio",
        "ünïcode",
        "?",
        "",
        "x_y",
        "how many",
        "12",
    ];
    let n = rng.random_range(0..15);
    (0..n)
        .map(|_| POOL[rng.random_range(0..POOL.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn separable_toy_set_is_learned_perfectly() {
    let data = toy_set();
    let xs: Vec<FeatureVector> = data.iter().map(|q| featurize(&q.text)).collect();
    let ys: Vec<bool> = data
        .iter()
        .map(|q| q.gold_type.as_ref().unwrap().major == "HUM")
        .collect();
    assert!(
        perceptron_separates(&xs, &ys, 100),
        "oracle: toy set must be linearly separable"
    );

    let model = train(
        &data,
        &Taxonomy::default_table(),
        &TrainingConfig::default(),
    )
    .unwrap();
    assert_eq!(training_accuracy(&model, &data), 1.0);
}

#[test]
fn same_data_and_seed_give_identical_weights() {
    let data = toy_set();
    let tax = Taxonomy::default_table();
    let a = train(&data, &tax, &TrainingConfig::default()).unwrap();
    let b = train(&data, &tax, &TrainingConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn save_load_preserves_predictions_and_meta() {
    let data = toy_set();
    let config = TrainingConfig {
        epochs: 3,
        learning_rate: 0.25,
        batch_size: 16,
        seed: 99,
    };
    let model = train(&data, &Taxonomy::default_table(), &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = ClassifierModel::load(&path).unwrap();
    assert_eq!(loaded.training_meta, config);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let text = random_text(&mut rng);
        assert_eq!(
            model.classify(&text),
            loaded.classify(&text),
            "input {text:?}"
        );
        assert_eq!(model.scores(&text), loaded.scores(&text));
    }
}

#[test]
fn argmax_is_scale_invariant() {
    let model = train(
        &toy_set(),
        &Taxonomy::default_table(),
        &TrainingConfig::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let texts: Vec<String> = (0..100).map(|_| random_text(&mut rng)).collect();
    for factor in [0.125, 3.0, 1024.0] {
        let scaled = model.scaled(factor);
        for text in &texts {
            assert_eq!(
                model.classify(text),
                scaled.classify(text),
                "factor {factor}, input {text:?}"
            );
        }
    }
}

proptest! {
    #[test]
    fn classify_is_total_pure_and_coherent(text in "\\PC{0,60}") {
        let tax = Taxonomy::default_table();
        let model = train(&toy_set(), &tax, &TrainingConfig { epochs: 1, ..Default::default() }).unwrap();
        let label = model.classify(&text);
        prop_assert!(tax.contains(&label));
        prop_assert!(tax.minors_of(&label.major).any(|m| m.label == label));
        prop_assert_eq!(model.classify(&text), label);
    }

    #[test]
    fn features_are_unit_norm(text in "[a-zA-Z ?,]{1,80}") {
        let f = featurize(&text);
        if !f.is_empty() {
            let norm: f64 = f.values().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
