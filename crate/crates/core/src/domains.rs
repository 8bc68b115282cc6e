//! Domain label vocabulary.
//!
//! Eighteen activities of daily living plus two conversational pseudo-labels
//! used by the query classifier. Labels are stored in a canonical form:
//! lowercase, words joined by `_`.

use serde::{Deserialize, Serialize};

pub const ADL_DOMAINS: [&str; 18] = [
    "dressing",
    "grooming",
    "bathing",
    "toileting",
    "incontinence_accident_management",
    "housekeeping_light",
    "housekeeping_heavy",
    "laundry",
    "finance",
    "food_consumption",
    "meal_preparation",
    "meal_planning",
    "mobility",
    "transfer",
    "mode_of_transfer",
    "positioning",
    "mode_of_positioning",
    "fine_motor_skills",
];

pub const FOLLOW_UP: &str = "follow_up";
pub const OTHER: &str = "other";

/// Canonical form of a free-text label: trimmed, lowercased, runs of
/// whitespace or `-` collapsed into `_`.
pub fn normalize_label(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

pub fn is_adl_domain(label: &str) -> bool {
    ADL_DOMAINS.contains(&label)
}

/// Human-readable rendering used in prompts, e.g. `meal_preparation` -> `meal preparation`.
pub fn display_name(label: &str) -> String {
    label.replace('_', " ")
}

/// Age band for a whole-year age.
pub fn age_band(age_years: u32) -> &'static str {
    match age_years {
        0..=17 => "0-17",
        18..=39 => "18-39",
        40..=64 => "40-64",
        65..=84 => "65-84",
        _ => "85+",
    }
}

/// The set of labels a corpus or classifier may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for l in labels {
            let l = normalize_label(l.as_ref());
            if !out.contains(&l) {
                out.push(l);
            }
        }
        Self { labels: out }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Default for LabelSet {
    /// The 18 ADL domains followed by `follow_up` and `other`.
    fn default() -> Self {
        Self::new(ADL_DOMAINS.iter().copied().chain([FOLLOW_UP, OTHER]))
    }
}
