//! Sessions and the per-query pipeline.
//!
//! A query is classified, candidate knowledge-base entries for the profile
//! and domain are scored, and the reply is either an entry's text verbatim
//! or an LLM completion. Each session's history strictly alternates
//! assessor and participant turns.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::BowClassifier;
use crate::domains::{display_name, is_adl_domain, FOLLOW_UP, OTHER};
use crate::generation::{
    age_slot, fallback_functioning_phrase, generate, join_history, render_prompt, LlmClient,
    LlmRequest, PromptError, PromptKind,
};
use crate::profiles::{candidates, FunctioningMap, ProfileError, ProfileStore};
use crate::retrieval::{route, token_f1, RouteSource, RoutingConfig, SimilarityScorer};

/// Domain slot used when a follow-up arrives before any concrete domain.
pub const DEFAULT_FOLLOW_UP_DOMAIN: &str = "daily living";

const DEFAULT_SMALL_TALK: &str = include_str!("../data/small_talk.json");

#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("session log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Assessor,
    Participant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnSource {
    KnowledgeBase,
    Llm,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TurnSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Knowledge-base entry the text was taken from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<String>,
    /// Why an LLM answer was replaced by a scripted one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub profile_id: String,
    pub history: Vec<Turn>,
    pub created_at: DateTime<Utc>,
    pub last_domain: Option<String>,
}

impl Session {
    fn new(profile_id: &str) -> Self {
        Self {
            id: uuid::Uuid::new_v4().to_string(),
            profile_id: profile_id.to_string(),
            history: Vec::new(),
            created_at: Utc::now(),
            last_domain: None,
        }
    }

    fn commit(&mut self, exchange: &Exchange) {
        debug_assert!(self.history.len().is_multiple_of(2));
        self.history.push(exchange.assessor.clone());
        self.history.push(exchange.participant.clone());
        if let Some(d) = &exchange.last_domain {
            self.last_domain = Some(d.clone());
        }
    }
}

/// Binds a new empty session to an existing profile.
pub fn start_session(store: &ProfileStore, profile_id: &str) -> Result<Session, DialogueError> {
    if store.profile(profile_id).is_none() {
        return Err(DialogueError::UnknownProfile(profile_id.to_string()));
    }
    Ok(Session::new(profile_id))
}

/// Copy of the session's turns in order.
pub fn history(session: &Session) -> Vec<Turn> {
    session.history.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallTalk {
    pub triggers: Vec<String>,
    pub reply: String,
}

pub fn default_small_talk() -> Vec<SmallTalk> {
    serde_json::from_str(DEFAULT_SMALL_TALK).expect("bundled small talk is valid")
}

/// Reply whose trigger best matches the query; the first entry when nothing overlaps.
fn small_talk_reply<'a>(pool: &'a [SmallTalk], query: &str) -> Option<&'a str> {
    let mut best: Option<(&SmallTalk, f64)> = None;
    for entry in pool {
        let s = entry
            .triggers
            .iter()
            .map(|t| token_f1(query, t))
            .fold(0.0, f64::max);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((entry, s));
        }
    }
    best.map(|(e, _)| e.reply.as_str())
}

/// Everything a query needs: models, scorer, store, and the LLM.
pub struct DialogueEngine {
    pub store: Arc<ProfileStore>,
    pub functioning: FunctioningMap,
    pub domain_model: BowClassifier,
    pub intent_model: BowClassifier,
    pub scorer: SimilarityScorer,
    pub routing: RoutingConfig,
    pub llm: Arc<dyn LlmClient>,
    /// Prompt-independent request settings (token limit, temperature, timeout).
    pub llm_request: LlmRequest,
    pub small_talk: Vec<SmallTalk>,
    pub apology: String,
}

/// The two turns one query appends to a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub assessor: Turn,
    pub participant: Turn,
    pub last_domain: Option<String>,
}

impl DialogueEngine {
    pub fn new(
        store: Arc<ProfileStore>,
        functioning: FunctioningMap,
        domain_model: BowClassifier,
        intent_model: BowClassifier,
        scorer: SimilarityScorer,
        routing: RoutingConfig,
        llm: Arc<dyn LlmClient>,
    ) -> Self {
        Self {
            store,
            functioning,
            domain_model,
            intent_model,
            scorer,
            routing,
            llm,
            llm_request: LlmRequest::new("-"),
            small_talk: default_small_talk(),
            apology: "I'm sorry, I lost my train of thought. Could you ask me that again?".into(),
        }
    }

    fn prompt(&self, kind: PromptKind, domain: Option<&str>, profile_id: &str) -> Result<String, DialogueError> {
        let profile = self
            .store
            .profile(profile_id)
            .ok_or_else(|| DialogueError::UnknownProfile(profile_id.to_string()))?;
        let (domain_slot, phrase) = match domain {
            Some(d) => {
                let phrase = profile
                    .rating(d)
                    .and_then(|r| self.functioning.phrase(d, i64::from(r)))
                    .map(str::to_string)
                    .unwrap_or_else(|| fallback_functioning_phrase(d));
                (display_name(d), phrase)
            }
            None => (
                DEFAULT_FOLLOW_UP_DOMAIN.to_string(),
                fallback_functioning_phrase(DEFAULT_FOLLOW_UP_DOMAIN),
            ),
        };
        render_prompt(
            kind,
            &domain_slot,
            &phrase,
            &age_slot(profile.age_years),
            &profile.gender.to_lowercase(),
        )
        .map_err(DialogueError::from)
    }

    /// Computes the reply to `query` without modifying `session`.
    pub fn respond(&self, session: &Session, query: &str) -> Result<Exchange, DialogueError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(DialogueError::EmptyQuery);
        }
        if self.store.profile(&session.profile_id).is_none() {
            return Err(DialogueError::UnknownProfile(session.profile_id.clone()));
        }
        let now = Utc::now();
        let domain = self.domain_model.predict(query).label;
        let intent = self.intent_model.predict(query).label;
        let assessor = Turn {
            role: Role::Assessor,
            text: query.to_string(),
            source: None,
            domain: Some(domain.clone()),
            intent: Some(intent),
            score: None,
            entry_id: None,
            error: None,
            timestamp: now,
        };
        let participant = |text: String, source, domain: Option<String>| Turn {
            role: Role::Participant,
            text,
            source: Some(source),
            domain,
            intent: None,
            score: None,
            entry_id: None,
            error: None,
            timestamp: Utc::now(),
        };

        if domain == OTHER {
            let reply = small_talk_reply(&self.small_talk, query)
                .unwrap_or(&self.apology)
                .to_string();
            return Ok(Exchange {
                assessor,
                participant: participant(reply, TurnSource::Scripted, Some(domain)),
                last_domain: None,
            });
        }

        let (retrieval_domain, kind) = if domain == FOLLOW_UP {
            (session.last_domain.clone(), PromptKind::FollowUp)
        } else {
            (Some(domain.clone()), PromptKind::General)
        };
        let last_domain = is_adl_domain(&domain).then(|| domain.clone());

        let (decision, kind) = match &retrieval_domain {
            Some(d) => {
                let cands = candidates(
                    &self.store,
                    &session.profile_id,
                    d,
                    &self.routing.excluded_intents,
                )?;
                (Some(route(&self.scorer, &self.routing, query, &cands)), kind)
            }
            None => (None, PromptKind::General),
        };

        if let Some(d) = &decision {
            if d.source == RouteSource::KnowledgeBase {
                let entry = d.entry.as_ref().expect("knowledge-base decision has an entry");
                let mut turn = participant(entry.text.clone(), TurnSource::KnowledgeBase, retrieval_domain);
                turn.score = d.score;
                turn.entry_id = Some(entry.id.clone());
                return Ok(Exchange {
                    assessor,
                    participant: turn,
                    last_domain,
                });
            }
        }

        let prompt = self.prompt(kind, retrieval_domain.as_deref(), &session.profile_id)?;
        let mut lines: Vec<&str> = vec![&prompt];
        lines.extend(session.history.iter().map(|t| t.text.as_str()));
        lines.push(query);
        let request = LlmRequest {
            prompt: join_history(&lines),
            ..self.llm_request.clone()
        };
        let best_score = decision
            .as_ref()
            .and_then(|d| d.all_scores.iter().map(|s| s.score).reduce(f64::max));
        let mut turn = match generate(self.llm.as_ref(), &request) {
            Ok(text) if !text.trim().is_empty() => participant(text, TurnSource::Llm, retrieval_domain),
            Ok(_) => {
                let mut t = participant(self.apology.clone(), TurnSource::Scripted, retrieval_domain);
                t.error = Some("LLM returned an empty completion".into());
                t
            }
            Err(e) => {
                log::warn!("LLM generation failed: {e}");
                let mut t = participant(self.apology.clone(), TurnSource::Scripted, retrieval_domain);
                t.error = Some(e.to_string());
                t
            }
        };
        turn.score = best_score;
        if let Some(e) = decision.and_then(|d| d.error) {
            turn.error = Some(match turn.error.take() {
                Some(prev) => format!("retrieval: {e}; generation: {prev}"),
                None => format!("retrieval: {e}"),
            });
        }
        Ok(Exchange {
            assessor,
            participant: turn,
            last_domain,
        })
    }
}

/// Runs one query through the pipeline and appends both turns to `session`.
/// Returns the participant turn.
pub fn handle_query(
    session: &mut Session,
    query: &str,
    engine: &DialogueEngine,
) -> Result<Turn, DialogueError> {
    let exchange = engine.respond(session, query)?;
    session.commit(&exchange);
    Ok(exchange.participant)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Started {
        session_id: String,
        profile_id: String,
        created_at: DateTime<Utc>,
    },
    Turn {
        turn: Turn,
    },
}

fn log_error(path: &Path, message: impl ToString) -> DialogueError {
    DialogueError::Log {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn append_events(path: &Path, events: &[LogEvent]) -> Result<(), DialogueError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| log_error(path, e))?;
    let mut buf = String::new();
    for e in events {
        buf.push_str(&serde_json::to_string(e).expect("event serializes"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| log_error(path, e))?;
    f.flush().map_err(|e| log_error(path, e))
}

/// Rebuilds a session from its event log.
pub fn replay_log(path: &Path) -> Result<Session, DialogueError> {
    let text = fs::read_to_string(path).map_err(|e| log_error(path, e))?;
    let mut session: Option<Session> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: LogEvent = serde_json::from_str(line)
            .map_err(|e| log_error(path, format!("line {}: {e}", i + 1)))?;
        match (event, session.as_mut()) {
            (LogEvent::Started { session_id, profile_id, created_at }, None) => {
                session = Some(Session {
                    id: session_id,
                    profile_id,
                    history: Vec::new(),
                    created_at,
                    last_domain: None,
                });
            }
            (LogEvent::Turn { turn }, Some(s)) => {
                let expected = if s.history.len() % 2 == 0 { Role::Assessor } else { Role::Participant };
                if turn.role != expected {
                    return Err(log_error(path, format!("line {}: turn out of order", i + 1)));
                }
                if turn.role == Role::Assessor {
                    if let Some(d) = turn.domain.as_deref().filter(|d| is_adl_domain(d)) {
                        s.last_domain = Some(d.to_string());
                    }
                }
                s.history.push(turn);
            }
            (_, _) => return Err(log_error(path, format!("line {}: unexpected event", i + 1))),
        }
    }
    let mut session = session.ok_or_else(|| log_error(path, "no start event"))?;
    if session.history.len() % 2 == 1 {
        // a crash between the two appends leaves a dangling question
        session.history.pop();
    }
    Ok(session)
}

#[derive(Default)]
struct Tickets {
    next: u64,
    serving: u64,
}

struct SessionSlot {
    tickets: Mutex<Tickets>,
    turn: Condvar,
    session: Mutex<Session>,
}

/// Releases the next ticket when dropped, including on error paths.
struct TicketGuard<'a>(&'a SessionSlot);

impl Drop for TicketGuard<'_> {
    fn drop(&mut self) {
        let mut t = self.0.tickets.lock().unwrap_or_else(|e| e.into_inner());
        t.serving += 1;
        self.0.turn.notify_all();
    }
}

impl SessionSlot {
    fn new(session: Session) -> Self {
        Self {
            tickets: Mutex::new(Tickets::default()),
            turn: Condvar::new(),
            session: Mutex::new(session),
        }
    }

    /// Blocks until every earlier caller has finished.
    fn wait_turn(&self) -> TicketGuard<'_> {
        let mut t = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
        let mine = t.next;
        t.next += 1;
        while t.serving != mine {
            t = self.turn.wait(t).unwrap_or_else(|e| e.into_inner());
        }
        TicketGuard(self)
    }

    fn snapshot(&self) -> Session {
        self.session.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Concurrent session registry. Queries to one session are processed one at
/// a time in arrival order; different sessions proceed independently.
#[derive(Default)]
pub struct SessionManager {
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    log_dir: Option<PathBuf>,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// A manager that appends every event to `{dir}/{session_id}.jsonl`.
    pub fn with_log_dir(dir: &Path) -> Result<Self, DialogueError> {
        fs::create_dir_all(dir).map_err(|e| log_error(dir, e))?;
        Ok(Self {
            sessions: RwLock::default(),
            log_dir: Some(dir.to_path_buf()),
        })
    }

    /// Reloads every session log found in `dir`.
    pub fn recover(dir: &Path) -> Result<Self, DialogueError> {
        let manager = Self::with_log_dir(dir)?;
        let entries = fs::read_dir(dir).map_err(|e| log_error(dir, e))?;
        let mut map = manager.sessions.write().unwrap();
        for entry in entries {
            let path = entry.map_err(|e| log_error(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let s = replay_log(&path)?;
                map.insert(s.id.clone(), Arc::new(SessionSlot::new(s)));
            }
        }
        drop(map);
        Ok(manager)
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, DialogueError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| DialogueError::UnknownSession(id.to_string()))
    }

    pub fn start(&self, store: &ProfileStore, profile_id: &str) -> Result<String, DialogueError> {
        let session = start_session(store, profile_id)?;
        let id = session.id.clone();
        if let Some(path) = self.log_path(&id) {
            append_events(
                &path,
                &[LogEvent::Started {
                    session_id: id.clone(),
                    profile_id: session.profile_id.clone(),
                    created_at: session.created_at,
                }],
            )?;
        }
        self.sessions
            .write()
            .unwrap()
            .insert(id.clone(), Arc::new(SessionSlot::new(session)));
        Ok(id)
    }

    pub fn handle_query(
        &self,
        id: &str,
        query: &str,
        engine: &DialogueEngine,
    ) -> Result<Turn, DialogueError> {
        let slot = self.slot(id)?;
        let _turn = slot.wait_turn();
        let snapshot = slot.snapshot();
        let exchange = engine.respond(&snapshot, query)?;
        if let Some(path) = self.log_path(id) {
            append_events(
                &path,
                &[
                    LogEvent::Turn { turn: exchange.assessor.clone() },
                    LogEvent::Turn { turn: exchange.participant.clone() },
                ],
            )?;
        }
        slot.session
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .commit(&exchange);
        Ok(exchange.participant)
    }

    pub fn history(&self, id: &str) -> Result<Vec<Turn>, DialogueError> {
        Ok(self.slot(id)?.snapshot().history)
    }

    pub fn session(&self, id: &str) -> Result<Session, DialogueError> {
        Ok(self.slot(id)?.snapshot())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sessions.read().unwrap().contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
