use serde::{Deserialize, Serialize};

use crate::domains::display_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Ordinary interrogative turns.
    General,
    /// Requests for more detail about the previous answer.
    FollowUp,
}

impl PromptKind {
    fn lead(self) -> &'static str {
        match self {
            PromptKind::General => "Write your next response in the following conversation about",
            PromptKind::FollowUp => "Provide more details to this statement about",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("prompt slot `{0}` is empty")]
pub struct PromptError(pub &'static str);

/// Fills a prompt template. Slots are inserted verbatim; none may be blank.
pub fn render_prompt(
    kind: PromptKind,
    domain: &str,
    functioning_phrase: &str,
    age: &str,
    gender: &str,
) -> Result<String, PromptError> {
    for (name, value) in [
        ("domain", domain),
        ("functioning_phrase", functioning_phrase),
        ("age", age),
        ("gender", gender),
    ] {
        if value.trim().is_empty() {
            return Err(PromptError(name));
        }
    }
    Ok(format!(
        "{} {domain} as if you {functioning_phrase} and you are {age} {gender}.",
        kind.lead()
    ))
}

/// `60` -> `60-year-old`.
pub fn age_slot(age_years: u32) -> String {
    format!("{age_years}-year-old")
}

/// Used when a profile has no rating for the domain being discussed.
pub fn fallback_functioning_phrase(domain: &str) -> String {
    format!("manage {} the way you usually do", display_name(domain))
}

/// Turn texts joined by `\n`, no trailing separator.
pub fn join_history<S: AsRef<str>>(turns: &[S]) -> String {
    turns.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n")
}
