//! Survey dialogue ingestion and corpus preparation.
//!
//! Survey files are JSON lines, one dialogue per line:
//!
//! ```json
//! {"domain": "Grooming", "ability": "Physical Assistance", "age": "65-84", "gender": "Female",
//!  "turns": [{"speaker": "assessor", "text": "Can you brush your hair?", "intent": "challenges"},
//!            {"speaker": "participant", "text": "No, I can't reach.", "intent": null}]}
//! ```
//!
//! Each assessor turn becomes one [`LabeledUtterance`]. Dialogues may carry
//! an optional `profile_id`, used only by the fine-tune exporter.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domains::{normalize_label, LabelSet};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: turn {turn} has empty text")]
    EmptyText { line: usize, turn: usize },
    #[error("line {line}: unknown domain label {label:?}")]
    UnknownDomain { line: usize, label: String },
    #[error("corpus has {len} utterances, need at least 2 to split")]
    TooSmall { len: usize },
    #[error("test fraction {0} is not in (0, 1)")]
    InvalidFraction(f64),
    #[error("no records to sample from")]
    EmptyRecords,
    #[error("per-stratum count must be at least 1")]
    InvalidPerStratum,
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Assessor,
    Participant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub intent: Option<String>,
}

/// One survey dialogue as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub domain: String,
    #[serde(default)]
    pub ability: String,
    #[serde(default)]
    pub age: String,
    #[serde(default)]
    pub gender: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<String>,
    pub turns: Vec<SurveyTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub text: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ability: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_band: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
}

/// Labeled assessor utterances plus their label vocabularies.
///
/// Label lists are kept in first-seen order so that classifier weight rows
/// are reproducible. After a [`split`], both halves keep the parent's lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub utterances: Vec<LabeledUtterance>,
    pub domain_labels: Vec<String>,
    pub intent_labels: Vec<String>,
}

impl Corpus {
    /// Builds a corpus, collecting label lists in first-seen order.
    pub fn new(utterances: Vec<LabeledUtterance>) -> Self {
        let mut domain_labels: Vec<String> = Vec::new();
        let mut intent_labels: Vec<String> = Vec::new();
        for u in &utterances {
            if !domain_labels.contains(&u.domain) {
                domain_labels.push(u.domain.clone());
            }
            if let Some(i) = &u.intent {
                if !intent_labels.contains(i) {
                    intent_labels.push(i.clone());
                }
            }
        }
        Self {
            utterances,
            domain_labels,
            intent_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    fn with_labels_of(&self, utterances: Vec<LabeledUtterance>) -> Self {
        Self {
            utterances,
            domain_labels: self.domain_labels.clone(),
            intent_labels: self.intent_labels.clone(),
        }
    }

    /// Returns a copy with every utterance passed through [`scrub`].
    pub fn scrubbed(&self) -> Self {
        let utterances = self
            .utterances
            .iter()
            .map(|u| LabeledUtterance {
                text: scrub(&u.text),
                ..u.clone()
            })
            .collect();
        self.with_labels_of(utterances)
    }

    /// Writes one utterance per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for u in &self.utterances {
            let line = serde_json::to_string(u).expect("utterance serializes");
            writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }
}

fn normalize_intent(raw: Option<&str>) -> Option<String> {
    raw.map(normalize_label).filter(|s| !s.is_empty())
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))
}

/// Parses survey records from JSON-lines text. Blank lines are skipped.
pub fn parse_survey_records(text: &str) -> Result<Vec<(usize, SurveyRecord)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SurveyRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

pub fn read_survey_records(path: &Path) -> Result<Vec<SurveyRecord>, CorpusError> {
    Ok(parse_survey_records(&read_to_string(path)?)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

pub fn write_survey_records(records: &[SurveyRecord], path: &Path) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

fn record_utterances(
    line: usize,
    rec: &SurveyRecord,
    labels: &LabelSet,
) -> Result<Vec<LabeledUtterance>, CorpusError> {
    let domain = normalize_label(&rec.domain);
    if !labels.contains(&domain) {
        return Err(CorpusError::UnknownDomain {
            line,
            label: rec.domain.clone(),
        });
    }
    let opt = |s: &str| {
        let s = s.trim();
        (!s.is_empty()).then(|| s.to_string())
    };
    let mut out = Vec::new();
    for (t, turn) in rec.turns.iter().enumerate() {
        if turn.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line, turn: t + 1 });
        }
        if turn.speaker != Speaker::Assessor {
            continue;
        }
        out.push(LabeledUtterance {
            text: turn.text.clone(),
            domain: domain.clone(),
            intent: normalize_intent(turn.intent.as_deref()),
            ability: opt(&rec.ability),
            age_band: opt(&rec.age),
            gender: opt(&rec.gender),
        });
    }
    Ok(out)
}

/// Parses survey JSON-lines text into a corpus of assessor utterances.
pub fn parse_survey_str(text: &str, labels: &LabelSet) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    for (line, rec) in parse_survey_records(text)? {
        utterances.extend(record_utterances(line, &rec, labels)?);
    }
    Ok(Corpus::new(utterances))
}

pub fn parse_survey_file(path: &Path, labels: &LabelSet) -> Result<Corpus, CorpusError> {
    parse_survey_str(&read_to_string(path)?, labels)
}

/// Loads a corpus from either survey records or utterance lines (as written
/// by [`Corpus::write_jsonl`]); the format is detected per line.
pub fn load_corpus(path: &Path, labels: &LabelSet) -> Result<Corpus, CorpusError> {
    let text = read_to_string(path)?;
    let mut utterances = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let bad = |e: serde_json::Error| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        };
        if value.get("turns").is_some() {
            let rec: SurveyRecord = serde_json::from_value(value).map_err(bad)?;
            utterances.extend(record_utterances(line_no, &rec, labels)?);
        } else {
            let mut u: LabeledUtterance = serde_json::from_value(value).map_err(bad)?;
            if u.text.trim().is_empty() {
                return Err(CorpusError::EmptyText {
                    line: line_no,
                    turn: 1,
                });
            }
            u.domain = normalize_label(&u.domain);
            if !labels.contains(&u.domain) {
                return Err(CorpusError::UnknownDomain {
                    line: line_no,
                    label: u.domain,
                });
            }
            u.intent = normalize_intent(u.intent.as_deref());
            utterances.push(u);
        }
    }
    Ok(Corpus::new(utterances))
}

static PHONE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b\d{3}[-. ]\d{3}[-. ]\d{4}\b").unwrap());
static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[\w.+-]+@[\w-]+\.[\w.]+\b").unwrap());
static ADDRESS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b\d+ [A-Za-z]+ (St|Ave|Rd|Blvd|Ln|Dr)\.?\b").unwrap());

/// Replaces phone numbers, email addresses and street addresses with
/// `[PHONE]`, `[EMAIL]` and `[ADDRESS]`. Everything else is left untouched.
///
/// Emails are replaced first so that digits inside an address part are not
/// picked up as a phone number.
pub fn scrub(text: &str) -> String {
    let s = EMAIL.replace_all(text, "[EMAIL]");
    let s = PHONE.replace_all(&s, "[PHONE]");
    let s = ADDRESS.replace_all(&s, "[ADDRESS]");
    s.into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Number of test items for a corpus of `n`: `round(fraction * n)`, kept
/// inside `1..=n-1` so neither side of the split is empty.
pub fn test_size(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64).round() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Uniform per-utterance train/test split. Both halves keep the original
/// relative order and the parent's label lists.
pub fn split(corpus: &Corpus, spec: SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(spec.test_fraction));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(CorpusError::TooSmall { len: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_test = test_size(n, spec.test_fraction);
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (u, t) in corpus.utterances.iter().zip(is_test) {
        if t {
            test.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    Ok((corpus.with_labels_of(train), corpus.with_labels_of(test)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumRecord {
    pub id: String,
    pub gender: String,
    pub race: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StratifiedSample {
    pub ids: Vec<String>,
    pub warnings: Vec<String>,
}

/// Samples `per_stratum` ids without replacement from every (gender, race)
/// stratum. Strata smaller than `per_stratum` contribute all their members
/// and produce a warning. Strata are visited in first-seen order.
pub fn stratified_sample(
    records: &[StratumRecord],
    per_stratum: usize,
    seed: u64,
) -> Result<StratifiedSample, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyRecords);
    }
    if per_stratum == 0 {
        return Err(CorpusError::InvalidPerStratum);
    }
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut groups: HashMap<(&str, &str), Vec<&str>> = HashMap::new();
    for r in records {
        let key = (r.gender.as_str(), r.race.as_str());
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = StratifiedSample::default();
    for key in order {
        let mut members = groups.remove(&key).unwrap_or_default();
        if members.len() < per_stratum {
            let msg = format!(
                "stratum (gender={}, race={}) has {} members, fewer than {}; taking all",
                key.0,
                key.1,
                members.len(),
                per_stratum
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
            out.ids.extend(members.into_iter().map(String::from));
        } else {
            members.shuffle(&mut rng);
            out.ids
                .extend(members.into_iter().take(per_stratum).map(String::from));
        }
    }
    Ok(out)
}
