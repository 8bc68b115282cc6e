#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};

use adlcoach_core::classifier::{train, BowClassifier, Target, TrainConfig};
use adlcoach_core::corpus::{load_corpus, Corpus};
use adlcoach_core::dialogue::DialogueEngine;
use adlcoach_core::domains::LabelSet;
use adlcoach_core::generation::{LlmClient, MockLlm};
use adlcoach_core::profiles::{load_store, FunctioningMap, ProfileStore};
use adlcoach_core::retrieval::{RoutingConfig, SimilarityScorer};

pub const MOCK_REPLY: &str = "I get by most days. It just takes me a while.";

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn store() -> ProfileStore {
    load_store(&data_dir().join("store")).expect("fixture store loads")
}

pub static CORPUS: LazyLock<Corpus> = LazyLock::new(|| {
    load_corpus(&data_dir().join("corpus/train.jsonl"), &LabelSet::default()).expect("corpus loads")
});

pub static MODELS: LazyLock<(BowClassifier, BowClassifier)> = LazyLock::new(|| {
    let cfg = TrainConfig::default();
    (
        train(&CORPUS, Target::Domain, &cfg).unwrap(),
        train(&CORPUS, Target::Intent, &cfg).unwrap(),
    )
});

pub fn engine_with(llm: Arc<dyn LlmClient>) -> DialogueEngine {
    DialogueEngine::new(
        Arc::new(store()),
        FunctioningMap::default_map(),
        MODELS.0.clone(),
        MODELS.1.clone(),
        SimilarityScorer::TokenF1,
        RoutingConfig::default(),
        llm,
    )
}

pub fn engine() -> DialogueEngine {
    engine_with(Arc::new(MockLlm::fixed(MOCK_REPLY)))
}
