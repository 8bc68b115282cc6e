//! Human-rating aggregation, contradiction ledgers, and scripted replays.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dialogue::{handle_query, start_session, DialogueEngine, DialogueError, Role, Turn, TurnSource};
use crate::domains::is_adl_domain;
use crate::profiles::ProfileStore;
use crate::retrieval::token_f1;
use crate::round_half_up_2dp;

/// Questions whose token F1 reaches this are treated as the same question.
pub const REPEAT_QUESTION_F1: f64 = 0.9;
/// Answers to a repeated question that score below this disagree.
pub const CONSISTENT_ANSWER_F1: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no ratings to aggregate")]
    NoRatings,
    #[error("rating {index}: {message}")]
    InvalidRating { index: usize, message: String },
    #[error("ratings csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("turn {turn} is outside a conversation of {len} turns")]
    TurnOutOfRange { turn: usize, len: usize },
    #[error("script must have exactly 5 questions, found {0}")]
    ScriptLength(usize),
    #[error("script domain {0:?} is not an ADL domain")]
    ScriptDomain(String),
    #[error("unknown script {0:?}")]
    UnknownScript(String),
    #[error("script file: {0}")]
    ScriptFile(String),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub rater_id: String,
    pub conversation_id: String,
    pub sensibleness: u8,
    pub specificity: u8,
    pub favorite: bool,
    pub realistic: bool,
}

impl Rating {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("sensibleness", self.sensibleness), ("specificity", self.specificity)] {
            if !(1..=6).contains(&v) {
                return Err(format!("{name} {v} is outside 1-6"));
            }
        }
        if self.conversation_id.trim().is_empty() {
            return Err("conversation_id is empty".into());
        }
        Ok(())
    }
}

/// Reads ratings from CSV with the header
/// `rater_id,conversation_id,sensibleness,specificity,favorite,realistic`.
pub fn read_ratings_csv<R: Read>(reader: R) -> Result<Vec<Rating>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (index, row) in rdr.deserialize::<Rating>().enumerate() {
        let rating = row?;
        rating
            .validate()
            .map_err(|message| EvalError::InvalidRating { index, message })?;
        out.push(rating);
    }
    Ok(out)
}

pub fn load_ratings_csv(path: &Path) -> Result<Vec<Rating>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_ratings_csv(file)
}

pub fn write_ratings_csv(ratings: &[Rating], path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    for r in ratings {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsaRow {
    pub system: String,
    pub ratings: usize,
    pub sensibleness: f64,
    pub specificity: f64,
    pub favorite: usize,
    pub realistic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsaReport {
    pub rows: Vec<SsaRow>,
}

impl SsaReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("System | Sensibleness | Specificity | Favorite | Realistic\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{} | {:.2} | {:.2} | {} | {}\n",
                r.system, r.sensibleness, r.specificity, r.favorite, r.realistic
            ));
        }
        s
    }
}

/// Averages ratings per system. `group_by` maps conversation ids to system
/// labels; an unmapped conversation forms its own group. Rows appear in
/// first-seen order.
pub fn ssa_report(
    ratings: &[Rating],
    group_by: &BTreeMap<String, String>,
) -> Result<SsaReport, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::NoRatings);
    }
    #[derive(Default)]
    struct Acc {
        n: u64,
        sens: u64,
        spec: u64,
        fav: usize,
        real: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Acc> = HashMap::new();
    for (index, r) in ratings.iter().enumerate() {
        r.validate()
            .map_err(|message| EvalError::InvalidRating { index, message })?;
        let system = group_by
            .get(&r.conversation_id)
            .cloned()
            .unwrap_or_else(|| r.conversation_id.clone());
        let a = acc.entry(system.clone()).or_insert_with(|| {
            order.push(system);
            Acc::default()
        });
        a.n += 1;
        a.sens += u64::from(r.sensibleness);
        a.spec += u64::from(r.specificity);
        a.fav += usize::from(r.favorite);
        a.real += usize::from(r.realistic);
    }
    let rows = order
        .into_iter()
        .map(|system| {
            let a = &acc[&system];
            SsaRow {
                ratings: a.n as usize,
                sensibleness: round_half_up_2dp(a.sens, a.n),
                specificity: round_half_up_2dp(a.spec, a.n),
                favorite: a.fav,
                realistic: a.real,
                system,
            }
        })
        .collect();
    Ok(SsaReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContradictionKind {
    Knowledge,
    History,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub turn: usize,
    pub kind: ContradictionKind,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContradictionLedger {
    pub conversation_id: String,
    pub turn_count: usize,
    pub against_knowledge: usize,
    pub against_history: usize,
    pub annotations: Vec<Annotation>,
}

impl ContradictionLedger {
    pub fn new(conversation_id: impl Into<String>, turn_count: usize) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            turn_count,
            against_knowledge: 0,
            against_history: 0,
            annotations: Vec::new(),
        }
    }

    pub fn record_contradiction(
        &mut self,
        turn: usize,
        kind: ContradictionKind,
        note: impl Into<String>,
    ) -> Result<(), EvalError> {
        if turn >= self.turn_count {
            return Err(EvalError::TurnOutOfRange {
                turn,
                len: self.turn_count,
            });
        }
        match kind {
            ContradictionKind::Knowledge => self.against_knowledge += 1,
            ContradictionKind::History => self.against_history += 1,
        }
        self.annotations.push(Annotation {
            turn,
            kind,
            note: note.into(),
        });
        Ok(())
    }
}

/// One general question, one follow-up, then three about specific aspects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionScript {
    pub domain: String,
    pub questions: Vec<String>,
}

impl QuestionScript {
    pub fn new(domain: &str, questions: Vec<String>) -> Result<Self, EvalError> {
        let s = Self {
            domain: domain.to_string(),
            questions,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !is_adl_domain(&self.domain) {
            return Err(EvalError::ScriptDomain(self.domain.clone()));
        }
        if self.questions.len() != 5 || self.questions.iter().any(|q| q.trim().is_empty()) {
            return Err(EvalError::ScriptLength(
                self.questions.iter().filter(|q| !q.trim().is_empty()).count(),
            ));
        }
        Ok(())
    }

    pub fn bathing() -> Self {
        Self {
            domain: "bathing".into(),
            questions: [
                "Tell me about how bathing goes for you.",
                "Can you elaborate more on that?",
                "Can you get in and out of the shower easily?",
                "Do you need any help with drying off?",
                "Can you wash your back okay?",
            ]
            .map(String::from)
            .into(),
        }
    }

    pub fn dressing() -> Self {
        Self {
            domain: "dressing".into(),
            questions: [
                "Tell me about how you get dressed in the morning.",
                "Is there anything else I should know about that?",
                "What about buttons and zippers specifically? Do you struggle at all with them?",
                "Can you manage your shoes on your own?",
                "Do you prefer any particular type of clothing?",
            ]
            .map(String::from)
            .into(),
        }
    }

    /// A built-in script by name, or a JSON script file.
    pub fn resolve(name_or_path: &str) -> Result<Self, EvalError> {
        match name_or_path {
            "bathing" => Ok(Self::bathing()),
            "dressing" => Ok(Self::dressing()),
            other if Path::new(other).is_file() => {
                let text = std::fs::read_to_string(other)
                    .map_err(|e| EvalError::ScriptFile(e.to_string()))?;
                let s: Self = serde_json::from_str(&text)
                    .map_err(|e| EvalError::ScriptFile(e.to_string()))?;
                s.validate()?;
                Ok(s)
            }
            other => Err(EvalError::UnknownScript(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub profile_id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
}

impl Transcript {
    pub fn participant_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Participant)
    }

    pub fn count_source(&self, source: TurnSource) -> usize {
        self.participant_turns()
            .filter(|t| t.source == Some(source))
            .count()
    }
}

/// Asks every question of `script` in a fresh session for `profile_id`.
pub fn replay_script(
    script: &QuestionScript,
    engine: &DialogueEngine,
    profile_id: &str,
) -> Result<Transcript, EvalError> {
    script.validate()?;
    let mut session = start_session(&engine.store, profile_id)?;
    for q in &script.questions {
        handle_query(&mut session, q, engine)?;
    }
    Ok(Transcript {
        session_id: session.id,
        profile_id: session.profile_id,
        domain: script.domain.clone(),
        turns: session.history,
    })
}

/// Mechanical lower bound on contradictions in a transcript. Flags
/// knowledge-base turns whose text is not in the profile's knowledge base,
/// and answers to a repeated question that share little with the earlier
/// answer.
pub fn auto_consistency_check(transcript: &Transcript, store: &ProfileStore) -> ContradictionLedger {
    let turns = &transcript.turns;
    let mut ledger = ContradictionLedger::new(transcript.session_id.clone(), turns.len());
    let mut answered: Vec<(&str, &str)> = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if t.role != Role::Participant {
            continue;
        }
        if t.source == Some(TurnSource::KnowledgeBase)
            && !store.has_verbatim(&transcript.profile_id, &t.text)
        {
            ledger
                .record_contradiction(i, ContradictionKind::Knowledge, "text is not in the profile's knowledge base")
                .expect("index is within the transcript");
        }
        let Some(question) = i.checked_sub(1).map(|q| turns[q].text.as_str()) else {
            continue;
        };
        if let Some((_, earlier)) = answered
            .iter()
            .find(|(q, _)| token_f1(question, q) >= REPEAT_QUESTION_F1)
        {
            let agreement = token_f1(&t.text, earlier);
            if agreement < CONSISTENT_ANSWER_F1 {
                ledger
                    .record_contradiction(
                        i,
                        ContradictionKind::History,
                        format!("repeated question answered differently (token F1 {agreement:.2})"),
                    )
                    .expect("index is within the transcript");
            }
        }
        answered.push((question, &t.text));
    }
    ledger
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(conv: &str, sens: u8, spec: u8, fav: bool) -> Rating {
        Rating {
            rater_id: "r".into(),
            conversation_id: conv.into(),
            sensibleness: sens,
            specificity: spec,
            favorite: fav,
            realistic: false,
        }
    }

    #[test]
    fn constant_ratings_average_to_themselves() {
        let rs: Vec<_> = (0..12).map(|_| rating("c", 4, 4, false)).collect();
        let rep = ssa_report(&rs, &BTreeMap::new()).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].sensibleness, 4.0);
        assert_eq!(rep.to_table().lines().nth(1).unwrap(), "c | 4.00 | 4.00 | 0 | 0");
    }

    #[test]
    fn grouping_merges_conversations() {
        let rs = vec![rating("a", 5, 4, true), rating("b", 4, 4, true), rating("c", 1, 1, false)];
        let group: BTreeMap<_, _> = [("a".to_string(), "kb".to_string()), ("b".into(), "kb".into())].into();
        let rep = ssa_report(&rs, &group).unwrap();
        assert_eq!(rep.rows[0].system, "kb");
        assert_eq!(rep.rows[0].sensibleness, 4.5);
        assert_eq!(rep.rows[0].favorite, 2);
        assert_eq!(rep.rows[1].system, "c");
    }

    #[test]
    fn empty_and_out_of_range_ratings_fail() {
        assert!(matches!(ssa_report(&[], &BTreeMap::new()), Err(EvalError::NoRatings)));
        assert!(ssa_report(&[rating("a", 7, 1, false)], &BTreeMap::new()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = "rater_id,conversation_id,sensibleness,specificity,favorite,realistic\n\
                    r1,c1,5,4,true,false\nr2,c1,6,5,false,true\n";
        let rs = read_ratings_csv(text.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[1].specificity, 5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_ratings_csv(&rs, &p).unwrap();
        assert_eq!(load_ratings_csv(&p).unwrap(), rs);
        assert!(read_ratings_csv("rater_id,conversation_id,sensibleness,specificity,favorite,realistic\nr,c,0,1,true,true\n".as_bytes()).is_err());
    }

    #[test]
    fn ledger_counts_follow_annotations() {
        let mut l = ContradictionLedger::new("c", 10);
        assert_eq!((l.against_knowledge, l.against_history), (0, 0));
        for t in [1, 3, 5, 7] {
            l.record_contradiction(t, ContradictionKind::Knowledge, "k").unwrap();
        }
        l.record_contradiction(9, ContradictionKind::History, "h").unwrap();
        assert_eq!((l.against_knowledge, l.against_history), (4, 1));
        assert_eq!(l.annotations.len(), 5);
        assert!(l.record_contradiction(10, ContradictionKind::History, "x").is_err());
    }

    #[test]
    fn built_in_scripts_are_valid() {
        for s in [QuestionScript::bathing(), QuestionScript::dressing()] {
            s.validate().unwrap();
        }
        assert!(QuestionScript::new("bathing", vec!["q".into()]).is_err());
        assert!(matches!(QuestionScript::resolve("cooking"), Err(EvalError::UnknownScript(_))));
    }
}
