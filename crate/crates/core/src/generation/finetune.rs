use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompt::{age_slot, join_history, render_prompt, PromptKind};
use crate::corpus::{Speaker, SurveyRecord};
use crate::domains::{display_name, is_adl_domain, normalize_label, FOLLOW_UP};
use crate::profiles::{FunctioningMap, ProfileStore};

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub context: String,
    pub input: String,
    pub output: String,
}

/// A dialogue turn that could not be exported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportIssue {
    /// Zero-based position of the dialogue in the input.
    pub dialogue: usize,
    /// Zero-based turn index, when the problem is specific to one turn.
    pub turn: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportReport {
    pub written: usize,
    pub issues: Vec<ExportIssue>,
}

fn dialogue_context(
    store: &ProfileStore,
    map: &FunctioningMap,
    rec: &SurveyRecord,
) -> Result<(String, String), String> {
    let profile_id = rec
        .profile_id
        .as_deref()
        .ok_or_else(|| "dialogue has no profile_id".to_string())?;
    let profile = store
        .profile(profile_id)
        .ok_or_else(|| format!("unknown profile {profile_id:?}"))?;
    let domain = normalize_label(&rec.domain);
    if !is_adl_domain(&domain) {
        return Err(format!("domain {:?} is not an ADL domain", rec.domain));
    }
    let rating = profile
        .rating(&domain)
        .ok_or_else(|| format!("profile {profile_id:?} has no rating for {domain:?}"))?;
    let phrase = map
        .phrase(&domain, i64::from(rating))
        .ok_or_else(|| format!("no functioning phrase for ({domain}, {rating})"))?;
    let render = |kind| {
        render_prompt(
            kind,
            &display_name(&domain),
            phrase,
            &age_slot(profile.age_years),
            &profile.gender.to_lowercase(),
        )
        .map_err(|e| e.to_string())
    };
    Ok((render(PromptKind::General)?, render(PromptKind::FollowUp)?))
}

/// Builds one record per participant turn: the context is the prompt for the
/// dialogue's profile and domain (the follow-up template when the preceding
/// question carries the `follow_up` intent), the input is every earlier turn
/// joined by `\n`, and the output is the participant turn itself.
pub fn finetune_records(
    store: &ProfileStore,
    map: &FunctioningMap,
    dialogues: &[SurveyRecord],
) -> (Vec<FinetuneRecord>, Vec<ExportIssue>) {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (d, rec) in dialogues.iter().enumerate() {
        let (general, follow_up) = match dialogue_context(store, map, rec) {
            Ok(c) => c,
            Err(message) => {
                issues.push(ExportIssue {
                    dialogue: d,
                    turn: None,
                    message,
                });
                continue;
            }
        };
        for (t, turn) in rec.turns.iter().enumerate() {
            if turn.speaker != Speaker::Participant {
                continue;
            }
            let prior: Vec<&str> = rec.turns[..t].iter().map(|x| x.text.as_str()).collect();
            let input = join_history(&prior);
            if input.trim().is_empty() || turn.text.trim().is_empty() {
                issues.push(ExportIssue {
                    dialogue: d,
                    turn: Some(t),
                    message: "participant turn without a preceding question or with empty text"
                        .into(),
                });
                continue;
            }
            let asked_follow_up = rec.turns[..t]
                .iter()
                .rev()
                .find(|x| x.speaker == Speaker::Assessor)
                .and_then(|x| x.intent.as_deref())
                .is_some_and(|i| normalize_label(i) == FOLLOW_UP);
            let context = if asked_follow_up { &follow_up } else { &general };
            records.push(FinetuneRecord {
                context: context.clone(),
                input,
                output: turn.text.clone(),
            });
        }
    }
    (records, issues)
}

/// Writes the records for `dialogues` to `path` as JSON lines. Dialogues
/// that cannot be resolved are reported and skipped.
pub fn export_finetune(
    store: &ProfileStore,
    map: &FunctioningMap,
    dialogues: &[SurveyRecord],
    path: &Path,
) -> Result<ExportReport, std::io::Error> {
    let (records, issues) = finetune_records(store, map, dialogues);
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in &records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    w.flush()?;
    for issue in &issues {
        log::warn!("fine-tune export: dialogue {}: {}", issue.dialogue, issue.message);
    }
    Ok(ExportReport {
        written: records.len(),
        issues,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ReadFinetuneError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn read_finetune(path: &Path) -> Result<Vec<FinetuneRecord>, ReadFinetuneError> {
    let text = fs::read_to_string(path).map_err(|e| ReadFinetuneError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReadFinetuneError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
