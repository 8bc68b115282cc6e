//! Bag-of-words multinomial logistic regression for domain and intent
//! classification, and the multiclass metric suite used to evaluate it.

mod experiment;
mod metrics;
mod model;
mod tokenizer;

pub use experiment::{repeat_experiment, ExperimentSummary, MetricSummary, Stat};
pub use metrics::{classification_report, MetricsReport};
pub use model::{
    evaluate, featurize, train, train_with_history, BowClassifier, ClassifierError, Prediction,
    SparseVector, Target, TrainConfig, TrainingSet, Vocabulary,
};
pub use tokenizer::{tokenize, TOKENIZER_VERSION};
