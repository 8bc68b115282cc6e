//! Similarity scoring and knowledge-base routing.
//!
//! A query is answered from the knowledge base when the best candidate
//! scores at least the threshold; otherwise the caller falls back to the LLM.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::classifier::tokenize;
use crate::profiles::{KbEntry, ProfileStore};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("knowledge base is empty")]
    EmptyKb,
    #[error("embedding endpoint: {0}")]
    Transport(String),
    #[error("embedding endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("embedding response: {0}")]
    BadResponse(String),
    #[error("scorer misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    TokenF1,
    TfidfCosine,
    ExternalEmbedding,
}

/// `2|Q ∩ C| / (|Q| + |C|)` over token sets; 0 when both are empty.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let qa: HashSet<String> = tokenize(a).into_iter().collect();
    let qb: HashSet<String> = tokenize(b).into_iter().collect();
    if qa.is_empty() && qb.is_empty() {
        return 0.0;
    }
    let common = qa.intersection(&qb).count();
    2.0 * common as f64 / (qa.len() + qb.len()) as f64
}

/// Smoothed inverse document frequencies over knowledge-base texts:
/// `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    n_docs: usize,
    idf: HashMap<String, f64>,
}

impl IdfTable {
    pub fn from_documents<'a, I: IntoIterator<Item = &'a str>>(docs: I) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            let uniq: HashSet<String> = tokenize(doc).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, Self::formula(n_docs, d)))
            .collect();
        Self { n_docs, idf }
    }

    fn formula(n_docs: usize, df: usize) -> f64 {
        ((1 + n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// IDF for `token`; unseen tokens get the `df = 0` value.
    pub fn idf(&self, token: &str) -> f64 {
        self.idf
            .get(token)
            .copied()
            .unwrap_or_else(|| Self::formula(self.n_docs, 0))
    }

    fn unit_vector(&self, text: &str) -> HashMap<String, f64> {
        let mut v: HashMap<String, f64> = HashMap::new();
        for t in tokenize(text) {
            *v.entry(t).or_default() += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= self.idf(t);
        }
        let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|w| *w /= norm);
        }
        v
    }

    /// Cosine similarity of the L2-normalized TF-IDF vectors.
    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.unit_vector(a), self.unit_vector(b));
        let (small, large) = if va.len() <= vb.len() { (&va, &vb) } else { (&vb, &va) };
        let dot: f64 = small
            .iter()
            .filter_map(|(t, w)| large.get(t).map(|u| w * u))
            .sum();
        dot.clamp(0.0, 1.0)
    }
}

/// One document per knowledge-base entry text.
pub fn build_idf(store: &ProfileStore) -> Result<IdfTable, RetrievalError> {
    if store.kb().is_empty() {
        return Err(RetrievalError::EmptyKb);
    }
    Ok(IdfTable::from_documents(store.kb().iter().map(|e| e.text.as_str())))
}

/// Client for an OpenAI-compatible `POST /embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    url: String,
    api_key: Option<String>,
    model: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [&'a str],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingClient {
    /// `endpoint` is a base URL; `/embeddings` is appended unless present.
    pub fn new(endpoint: &str, api_key: Option<String>, model: Option<String>, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embeddings") {
            base.to_string()
        } else {
            format!("{base}/embeddings")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url,
            api_key,
            model,
            agent,
        }
    }

    pub fn embed(&self, inputs: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let body = EmbeddingRequest {
            input: inputs,
            model: self.model.as_deref(),
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(RetrievalError::Status { status, body });
        }
        let parsed: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RetrievalError::BadResponse(e.to_string()))?;
        if parsed.data.len() != inputs.len() {
            return Err(RetrievalError::BadResponse(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Cosine similarity mapped from `[-1, 1]` to `[0, 1]`.
pub fn embedding_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || a.len() != b.len() {
        return 0.0;
    }
    ((dot / (na * nb) + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// A similarity function σ(query, candidate) with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub enum SimilarityScorer {
    TokenF1,
    TfidfCosine(IdfTable),
    ExternalEmbedding(EmbeddingClient),
}

impl SimilarityScorer {
    pub fn kind(&self) -> ScorerKind {
        match self {
            SimilarityScorer::TokenF1 => ScorerKind::TokenF1,
            SimilarityScorer::TfidfCosine(_) => ScorerKind::TfidfCosine,
            SimilarityScorer::ExternalEmbedding(_) => ScorerKind::ExternalEmbedding,
        }
    }

    pub fn score(&self, query: &str, candidate: &str) -> Result<f64, RetrievalError> {
        Ok(self.score_many(query, &[candidate])?[0])
    }

    /// Scores every candidate against `query`. The embedding scorer makes a
    /// single batched request.
    pub fn score_many(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, RetrievalError> {
        match self {
            SimilarityScorer::TokenF1 => Ok(candidates.iter().map(|c| token_f1(query, c)).collect()),
            SimilarityScorer::TfidfCosine(idf) => {
                Ok(candidates.iter().map(|c| idf.cosine(query, c)).collect())
            }
            SimilarityScorer::ExternalEmbedding(client) => {
                if candidates.is_empty() {
                    return Ok(Vec::new());
                }
                let mut inputs = Vec::with_capacity(candidates.len() + 1);
                inputs.push(query);
                inputs.extend_from_slice(candidates);
                let vectors = client.embed(&inputs)?;
                Ok(vectors[1..]
                    .iter()
                    .map(|v| embedding_similarity(&vectors[0], v))
                    .collect())
            }
        }
    }
}

fn default_threshold() -> f64 {
    0.55
}

fn default_excluded() -> BTreeSet<String> {
    ["preference", "equipment"].map(String::from).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_excluded")]
    pub excluded_intents: BTreeSet<String>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            excluded_intents: default_excluded(),
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if (0.0..=1.0).contains(&self.threshold) {
            Ok(())
        } else {
            Err(RetrievalError::Config(format!(
                "threshold {} not in [0, 1]",
                self.threshold
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteSource {
    KnowledgeBase,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub entry_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub source: RouteSource,
    pub entry: Option<KbEntry>,
    pub score: Option<f64>,
    pub all_scores: Vec<ScoredEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Index and value of the best score when it reaches `threshold`.
/// Ties resolve to the earliest index; NaN scores never win.
pub fn select(threshold: f64, scores: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.filter(|&(_, s)| s >= threshold)
}

/// Scores every candidate and applies the threshold rule. A scorer failure
/// routes to the LLM with the error recorded.
pub fn route(
    scorer: &SimilarityScorer,
    config: &RoutingConfig,
    query: &str,
    candidates: &[KbEntry],
) -> RoutingDecision {
    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let scores = match scorer.score_many(query, &texts) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("similarity scoring failed, falling back to LLM: {e}");
            return RoutingDecision {
                source: RouteSource::Llm,
                entry: None,
                score: None,
                all_scores: Vec::new(),
                error: Some(e.to_string()),
            };
        }
    };
    let all_scores = candidates
        .iter()
        .zip(&scores)
        .map(|(c, &s)| ScoredEntry {
            entry_id: c.id.clone(),
            score: s,
        })
        .collect();
    match select(config.threshold, &scores) {
        Some((i, s)) => RoutingDecision {
            source: RouteSource::KnowledgeBase,
            entry: Some(candidates[i].clone()),
            score: Some(s),
            all_scores,
            error: None,
        },
        None => RoutingDecision {
            source: RouteSource::Llm,
            entry: None,
            score: None,
            all_scores,
            error: None,
        },
    }
}
