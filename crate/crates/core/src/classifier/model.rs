use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{classification_report, MetricsReport};
use super::tokenizer::{tokenize, TOKENIZER_VERSION};
use crate::corpus::{Corpus, LabeledUtterance};
use crate::parallel::{self, ExecMode};

/// Rows per gradient chunk. Fixed so that the summation order, and hence
/// the trained weights, do not depend on the thread count.
const GRADIENT_CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("need at least 2 distinct labels to train, found {0}")]
    TooFewLabels(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Domain,
    Intent,
}

impl Target {
    pub fn label_of<'a>(&self, u: &'a LabeledUtterance) -> Option<&'a str> {
        match self {
            Target::Domain => Some(u.domain.as_str()),
            Target::Intent => u.intent.as_deref(),
        }
    }

    pub fn labels_of<'a>(&self, c: &'a Corpus) -> &'a [String] {
        match self {
            Target::Domain => &c.domain_labels,
            Target::Intent => &c.intent_labels,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "domain" => Ok(Target::Domain),
            "intent" => Ok(Target::Intent),
            other => Err(format!("unknown target {other:?} (expected domain or intent)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            learning_rate: 0.5,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ClassifierError::InvalidConfig(format!("l2 = {}", self.l2)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ClassifierError::InvalidConfig(format!(
                "learning_rate = {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(ClassifierError::InvalidConfig("epochs = 0".into()));
        }
        Ok(())
    }
}

/// Token → column mapping, assigned in first-seen order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    columns: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut columns = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text) {
                let next = columns.len();
                columns.entry(tok).or_insert(next);
            }
        }
        Self { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.columns.get(token).copied()
    }

    fn is_dense(&self) -> bool {
        let mut seen = vec![false; self.columns.len()];
        for &c in self.columns.values() {
            if c >= seen.len() || std::mem::replace(&mut seen[c], true) {
                return false;
            }
        }
        true
    }
}

/// Sparse count vector, indices strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.indices
            .binary_search(&index)
            .map(|p| self.values[p])
            .unwrap_or(0.0)
    }
}

/// Token counts of `text` over `vocab`; out-of-vocabulary tokens are dropped.
pub fn featurize(vocab: &Vocabulary, text: &str) -> SparseVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for tok in tokenize(text) {
        if let Some(c) = vocab.column(&tok) {
            *counts.entry(c).or_insert(0.0) += 1.0;
        }
    }
    let (indices, values) = counts.into_iter().unzip();
    SparseVector { indices, values }
}

/// Featurized examples for one training problem.
///
/// Weights are laid out row-major, one row per label, `n_features + 1`
/// columns with the bias last.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub rows: Vec<SparseVector>,
    pub targets: Vec<usize>,
    pub n_features: usize,
    pub n_labels: usize,
}

impl TrainingSet {
    pub fn n_weights(&self) -> usize {
        self.n_labels * (self.n_features + 1)
    }

    /// Mean cross-entropy plus `l2 / 2 * ||W||^2` over the non-bias weights.
    pub fn loss(&self, weights: &[f64], l2: f64) -> f64 {
        let stride = self.n_features + 1;
        let mut logits = vec![0.0; self.n_labels];
        let mut total = 0.0;
        for (x, &y) in self.rows.iter().zip(&self.targets) {
            compute_logits(weights, stride, x, &mut logits);
            total += log_sum_exp(&logits) - logits[y];
        }
        total / self.rows.len() as f64 + 0.5 * l2 * penalty(weights, stride)
    }

    /// Loss and its analytic gradient. Per-chunk partial sums are folded in
    /// chunk order, so both execution modes give bit-identical results.
    pub fn loss_and_gradient(&self, weights: &[f64], l2: f64, mode: ExecMode) -> (f64, Vec<f64>) {
        let stride = self.n_features + 1;
        let k = self.n_labels;
        let idx: Vec<usize> = (0..self.rows.len()).collect();
        let partials = parallel::map_chunks(mode, &idx, GRADIENT_CHUNK, |chunk| {
            let mut grad = vec![0.0; k * stride];
            let mut logits = vec![0.0; k];
            let mut loss = 0.0;
            for &i in chunk {
                let x = &self.rows[i];
                let y = self.targets[i];
                compute_logits(weights, stride, x, &mut logits);
                let lse = log_sum_exp(&logits);
                loss += lse - logits[y];
                for (label, &z) in logits.iter().enumerate() {
                    let coef = (z - lse).exp() - if label == y { 1.0 } else { 0.0 };
                    let row = &mut grad[label * stride..(label + 1) * stride];
                    for (&j, &v) in x.indices.iter().zip(&x.values) {
                        row[j] += coef * v;
                    }
                    row[stride - 1] += coef;
                }
            }
            (loss, grad)
        });
        let n = self.rows.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; k * stride];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss /= n;
        for (i, g) in grad.iter_mut().enumerate() {
            *g /= n;
            if i % stride != stride - 1 {
                *g += l2 * weights[i];
            }
        }
        (loss + 0.5 * l2 * penalty(weights, stride), grad)
    }
}

fn compute_logits(weights: &[f64], stride: usize, x: &SparseVector, out: &mut [f64]) {
    for (label, z) in out.iter_mut().enumerate() {
        let row = &weights[label * stride..(label + 1) * stride];
        let mut acc = row[stride - 1];
        for (&j, &v) in x.indices.iter().zip(&x.values) {
            acc += row[j] * v;
        }
        *z = acc;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn penalty(weights: &[f64], stride: usize) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride != stride - 1)
        .map(|(_, w)| w * w)
        .sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub index: usize,
    pub probabilities: Vec<f64>,
}

/// A trained classifier. Serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowClassifier {
    pub vocabulary: Vocabulary,
    pub labels: Vec<String>,
    /// Row-major `labels.len() x (vocabulary.len() + 1)`, bias last.
    pub weights: Vec<f64>,
    pub config: TrainConfig,
    pub target: Target,
    pub tokenizer_version: u32,
}

impl BowClassifier {
    fn stride(&self) -> usize {
        self.vocabulary.len() + 1
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        featurize(&self.vocabulary, text)
    }

    pub fn logits(&self, text: &str) -> Vec<f64> {
        let mut z = vec![0.0; self.labels.len()];
        compute_logits(&self.weights, self.stride(), &self.featurize(text), &mut z);
        z
    }

    /// Softmax over the label rows; ties go to the lowest label index.
    pub fn predict(&self, text: &str) -> Prediction {
        let probabilities = softmax(&self.logits(text));
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Prediction {
            label: self.labels[best].clone(),
            index: best,
            probabilities,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.tokenizer_version != TOKENIZER_VERSION {
            return Err(ClassifierError::InvalidModel(format!(
                "tokenizer version {} (this build uses {})",
                self.tokenizer_version, TOKENIZER_VERSION
            )));
        }
        if self.labels.is_empty() {
            return Err(ClassifierError::InvalidModel("no labels".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.labels.iter().all(|l| seen.insert(l)) {
            return Err(ClassifierError::InvalidModel("duplicate labels".into()));
        }
        if !self.vocabulary.is_dense() {
            return Err(ClassifierError::InvalidModel("vocabulary columns are not 0..n".into()));
        }
        if self.weights.len() != self.labels.len() * self.stride() {
            return Err(ClassifierError::InvalidModel(format!(
                "expected {} weights, found {}",
                self.labels.len() * self.stride(),
                self.weights.len()
            )));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(ClassifierError::InvalidModel("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let m: BowClassifier =
            serde_json::from_str(text).map_err(|e| ClassifierError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        fs::write(path, self.to_json() + "\n").map_err(|e| ClassifierError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = fs::read_to_string(path).map_err(|e| ClassifierError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}

fn prepare(
    corpus: &Corpus,
    target: Target,
) -> Result<(Vocabulary, Vec<String>, TrainingSet), ClassifierError> {
    let examples: Vec<(&str, &str)> = corpus
        .utterances
        .iter()
        .filter_map(|u| target.label_of(u).map(|l| (u.text.as_str(), l)))
        .collect();
    if examples.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    let mut labels: Vec<String> = target.labels_of(corpus).to_vec();
    for (_, l) in &examples {
        if !labels.iter().any(|x| x == l) {
            labels.push(l.to_string());
        }
    }
    let present: std::collections::HashSet<&str> = examples.iter().map(|(_, l)| *l).collect();
    if present.len() < 2 {
        return Err(ClassifierError::TooFewLabels(present.len()));
    }
    let vocab = Vocabulary::build(examples.iter().map(|(t, _)| *t));
    let rows = examples.iter().map(|(t, _)| featurize(&vocab, t)).collect();
    let targets = examples
        .iter()
        .map(|(_, l)| labels.iter().position(|x| x == l).expect("label collected"))
        .collect();
    let set = TrainingSet {
        rows,
        targets,
        n_features: vocab.len(),
        n_labels: labels.len(),
    };
    Ok((vocab, labels, set))
}

/// Trains by full-batch gradient descent from zero weights.
pub fn train(corpus: &Corpus, target: Target, config: &TrainConfig) -> Result<BowClassifier, ClassifierError> {
    train_with_history(corpus, target, config, ExecMode::default()).map(|(m, _)| m)
}

/// Like [`train`], also returning the loss before each step and after the last.
pub fn train_with_history(
    corpus: &Corpus,
    target: Target,
    config: &TrainConfig,
    mode: ExecMode,
) -> Result<(BowClassifier, Vec<f64>), ClassifierError> {
    config.validate()?;
    let (vocabulary, labels, set) = prepare(corpus, target)?;
    let mut weights = vec![0.0; set.n_weights()];
    let mut history = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, grad) = set.loss_and_gradient(&weights, config.l2, mode);
        history.push(loss);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
    }
    history.push(set.loss(&weights, config.l2));
    let model = BowClassifier {
        vocabulary,
        labels,
        weights,
        config: *config,
        target,
        tokenizer_version: TOKENIZER_VERSION,
    };
    Ok((model, history))
}

impl TrainingSet {
    /// The training problem [`train`] would solve for `corpus`.
    pub fn from_corpus(corpus: &Corpus, target: Target) -> Result<Self, ClassifierError> {
        prepare(corpus, target).map(|(_, _, s)| s)
    }
}

/// Scores `model` on every utterance of `corpus` that carries its target label.
pub fn evaluate(model: &BowClassifier, corpus: &Corpus) -> MetricsReport {
    let (truth, pred): (Vec<&str>, Vec<String>) = corpus
        .utterances
        .iter()
        .filter_map(|u| {
            model
                .target
                .label_of(u)
                .map(|l| (l, model.predict(&u.text).label))
        })
        .unzip();
    let pred: Vec<&str> = pred.iter().map(String::as_str).collect();
    classification_report(&truth, &pred)
}
