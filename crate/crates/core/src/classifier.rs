//! Linear question-type classifier.
//!
//! Multinomial logistic regression over fine classes, trained with seeded
//! mini-batch gradient descent. The coarse label is always the major of the
//! predicted fine class.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Question;
use crate::error::{Error, Result};
use crate::taxonomy::{QuestionType, Taxonomy};

const MODEL_MAGIC: &str = "dynrank-question-classifier";
const MODEL_VERSION: u32 = 1;
const MAX_WORDS: usize = 12;

/// Sparse feature vector keyed by feature name.
///
/// Keys are `w:<word>` for unigrams, `b:<w1>_<w2>` for bigrams and
/// `c:<tri>` for character trigrams of `#`-padded words.
pub type FeatureVector = BTreeMap<String, f64>;

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .take(MAX_WORDS)
        .collect()
}

pub fn featurize(text: &str) -> FeatureVector {
    let words = words(text);
    let mut features = FeatureVector::new();
    for word in &words {
        *features.entry(format!("w:{word}")).or_default() += 1.0;
        let padded: Vec<char> = format!("#{word}#").chars().collect();
        for tri in padded.windows(3) {
            let tri: String = tri.iter().collect();
            *features.entry(format!("c:{tri}")).or_default() += 1.0;
        }
    }
    for pair in words.windows(2) {
        *features
            .entry(format!("b:{}_{}", pair[0], pair[1]))
            .or_default() += 1.0;
    }
    let norm = features.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in features.values_mut() {
            *v /= norm;
        }
    }
    features
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.5,
            batch_size: 64,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    vocabulary: Vec<String>,
    #[serde(skip)]
    feature_index: HashMap<String, usize>,
    /// Row-major, `classes.len() x vocabulary.len()`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// Fine classes, sorted by numeric code.
    classes: Vec<QuestionType>,
    pub training_meta: TrainingConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    model: ClassifierModel,
}

type SparseRow = Vec<(usize, f64)>;

impl ClassifierModel {
    pub fn classes(&self) -> &[QuestionType] {
        &self.classes
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    fn row(&self, class: usize) -> &[f64] {
        let n = self.vocabulary.len();
        &self.weights[class * n..(class + 1) * n]
    }

    fn sparse(&self, features: &FeatureVector) -> SparseRow {
        features
            .iter()
            .filter_map(|(name, &v)| self.feature_index.get(name).map(|&i| (i, v)))
            .collect()
    }

    fn logits(&self, x: &SparseRow) -> Vec<f64> {
        (0..self.classes.len())
            .map(|c| {
                let row = self.row(c);
                self.bias[c] + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    /// Per-class scores (logits), aligned with [`Self::classes`].
    pub fn scores(&self, text: &str) -> Vec<f64> {
        self.logits(&self.sparse(&featurize(text)))
    }

    /// Argmax fine class. Ties go to the earliest class, i.e. the lowest code.
    pub fn classify(&self, text: &str) -> QuestionType {
        let logits = self.scores(text);
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = c;
            }
        }
        self.classes[best].clone()
    }

    /// Multiplies every weight and bias by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut model = self.clone();
        model.weights.iter_mut().for_each(|w| *w *= factor);
        model.bias.iter_mut().for_each(|w| *w *= factor);
        model
    }

    /// Writes the model atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            magic: MODEL_MAGIC.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        let bytes = serde_json::to_vec(&file).map_err(|e| Error::Model(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        let mut out = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        out.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        out.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .map(BufReader::new)
            .and_then(|mut r| r.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        if value.get("magic").and_then(|m| m.as_str()) != Some(MODEL_MAGIC) {
            return Err(Error::Model(format!(
                "{}: not a question classifier model",
                path.display()
            )));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_VERSION)) {
            return Err(Error::Model(format!(
                "{}: unsupported model version {version:?}, expected {MODEL_VERSION}",
                path.display()
            )));
        }
        let file: ModelFile = serde_json::from_value(value)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        let mut model = file.model;
        let n = model.vocabulary.len();
        if model.classes.is_empty()
            || model.bias.len() != model.classes.len()
            || model.weights.len() != model.classes.len() * n
        {
            return Err(Error::Model(format!(
                "{}: weight shape does not match classes",
                path.display()
            )));
        }
        model.feature_index = index_vocabulary(&model.vocabulary);
        Ok(model)
    }
}

fn index_vocabulary(vocabulary: &[String]) -> HashMap<String, usize> {
    vocabulary
        .iter()
        .enumerate()
        .map(|(i, f)| (f.clone(), i))
        .collect()
}

/// Trains on questions carrying a `gold_type`.
///
/// Classes are the fine labels present in the data, ordered by taxonomy code.
/// Each step averages the softmax cross-entropy gradient over a batch.
pub fn train(
    labeled: &[Question],
    taxonomy: &Taxonomy,
    config: &TrainingConfig,
) -> Result<ClassifierModel> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config("learning rate must be positive".into()));
    }

    let mut labels = Vec::with_capacity(labeled.len());
    for q in labeled {
        let label = q.gold_type.as_ref().ok_or_else(|| {
            Error::validation(format!("training question {} has no type label", q.id))
        })?;
        if !taxonomy.contains(label) {
            return Err(Error::validation(format!(
                "training question {}: label {label} is not in the taxonomy",
                q.id
            )));
        }
        labels.push(label.clone());
    }
    if labels.is_empty() {
        return Err(Error::validation("no labeled training questions"));
    }

    let mut classes: Vec<QuestionType> = labels.clone();
    classes.sort_by_key(|l| taxonomy.code(l));
    classes.dedup();
    let class_of: HashMap<&QuestionType, usize> =
        classes.iter().enumerate().map(|(i, c)| (c, i)).collect();

    let featurized: Vec<FeatureVector> = labeled.iter().map(|q| featurize(&q.text)).collect();
    let mut vocabulary: Vec<String> = featurized.iter().flat_map(|f| f.keys().cloned()).collect();
    vocabulary.sort_unstable();
    vocabulary.dedup();
    let feature_index = index_vocabulary(&vocabulary);

    let examples: Vec<(SparseRow, usize)> = featurized
        .iter()
        .zip(&labels)
        .map(|(f, label)| {
            let row = f
                .iter()
                .map(|(name, &v)| (feature_index[name], v))
                .collect();
            (row, class_of[label])
        })
        .collect();

    let mut model = ClassifierModel {
        weights: vec![0.0; classes.len() * vocabulary.len()],
        bias: vec![0.0; classes.len()],
        vocabulary,
        feature_index,
        classes,
        training_meta: *config,
    };

    let n_features = model.vocabulary.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let step = config.learning_rate / batch.len() as f64;
            // gradients are taken at the pre-batch weights
            let residuals: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    let (x, y) = &examples[i];
                    let mut p = softmax(&model.logits(x));
                    p[*y] -= 1.0;
                    p
                })
                .collect();
            for (&i, residual) in batch.iter().zip(&residuals) {
                let x = &examples[i].0;
                for (c, &r) in residual.iter().enumerate() {
                    if r == 0.0 {
                        continue;
                    }
                    let row = &mut model.weights[c * n_features..(c + 1) * n_features];
                    for &(f, v) in x {
                        row[f] -= step * r * v;
                    }
                    model.bias[c] -= step * r;
                }
            }
        }
    }
    Ok(model)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Reads the UIUC question-classification label format: `MAJ:min question text`.
///
/// Bytes are decoded as Latin-1 when the file is not valid UTF-8, which the
/// original distribution requires.
pub fn load_uiuc_labeled(path: &Path) -> Result<Vec<Question>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = match String::from_utf8(bytes) {
        Ok(text) => text,
        Err(err) => err.into_bytes().iter().map(|&b| b as char).collect(),
    };
    let name = path.display().to_string();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("uiuc")
        .to_string();
    let mut questions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (label, question) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::parse(&name, i + 1, "missing question text"))?;
        let gold = QuestionType::parse_unchecked(label)
            .ok_or_else(|| Error::parse(&name, i + 1, format!("invalid label {label:?}")))?;
        questions.push(Question {
            id: format!("{stem}-{}", i + 1),
            text: question.trim().to_string(),
            answers: Vec::new(),
            gold_type: Some(gold),
        });
    }
    Ok(questions)
}

/// Fraction of questions whose predicted (coarse, fine) label matches gold.
pub fn accuracy(model: &ClassifierModel, questions: &[Question]) -> (f64, f64) {
    let mut coarse = 0usize;
    let mut fine = 0usize;
    let mut total = 0usize;
    for q in questions {
        let Some(gold) = &q.gold_type else { continue };
        let predicted = model.classify(&q.text);
        total += 1;
        if predicted.major == gold.major {
            coarse += 1;
        }
        if &predicted == gold {
            fine += 1;
        }
    }
    if total == 0 {
        return (0.0, 0.0);
    }
    (coarse as f64 / total as f64, fine as f64 / total as f64)
}
