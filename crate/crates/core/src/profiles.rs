//! Synthetic profiles and their knowledge base of pre-written responses.
//!
//! A store directory holds up to three files, all optional:
//!
//! * `profiles.json` - array of [`Profile`]
//! * `kb.jsonl` - one [`KbEntry`] per line
//! * `functioning_map.json` - `{"bathing": {"1": "...", ..., "4": "..."}, ...}`

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domains::{is_adl_domain, ADL_DOMAINS};
use crate::round_half_up_2dp;

pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 4;
pub const ADULT_AGE: u32 = 18;

pub const PROFILES_FILE: &str = "profiles.json";
pub const KB_FILE: &str = "kb.jsonl";
pub const FUNCTIONING_MAP_FILE: &str = "functioning_map.json";

const DEFAULT_FUNCTIONING_MAP: &str = include_str!("../data/functioning_map.json");

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} {locus}: {message}")]
    Invalid {
        file: String,
        locus: String,
        message: String,
    },
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("profile {0:?} has no ratings")]
    NoRatings(String),
    #[error("no functioning phrase for domain {domain:?} at rating {rating}")]
    MissingPhrase { domain: String, rating: i64 },
}

fn invalid(file: &str, locus: impl Into<String>, message: impl Into<String>) -> ProfileError {
    ProfileError::Invalid {
        file: file.to_string(),
        locus: locus.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// First-person answers, used for adults.
    Direct,
    /// Third-person answers given by a caregiver, used for children.
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    pub age_years: u32,
    pub gender: String,
    #[serde(default)]
    pub ratings: BTreeMap<String, u8>,
    #[serde(default)]
    pub notes: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<String>,
}

impl Profile {
    pub fn rating(&self, domain: &str) -> Option<u8> {
        self.ratings.get(domain).copied()
    }
}

/// Arithmetic mean of a profile's ratings, rounded half-up to 2 decimals.
pub fn avg_rating(profile: &Profile) -> Result<f64, ProfileError> {
    if profile.ratings.is_empty() {
        return Err(ProfileError::NoRatings(profile.id.clone()));
    }
    let sum: u64 = profile.ratings.values().map(|&r| u64::from(r)).sum();
    Ok(round_half_up_2dp(sum, profile.ratings.len() as u64))
}

/// Speech style for a profile: indirect for children, direct from 18 on.
pub fn select_style(profile: &Profile) -> Style {
    style_for_age(profile.age_years)
}

pub fn style_for_age(age_years: u32) -> Style {
    if age_years < ADULT_AGE {
        Style::Indirect
    } else {
        Style::Direct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    pub profile_id: String,
    pub domain: String,
    pub intent: String,
    pub style: Style,
    pub text: String,
}

/// Plain-English functioning phrases keyed by domain and rating.
///
/// Phrases complete the sentence "... as if you {phrase} ...".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctioningMap {
    entries: BTreeMap<String, BTreeMap<String, String>>,
}

impl FunctioningMap {
    /// The map shipped with the crate, covering every ADL domain at ratings 1 to 4.
    pub fn default_map() -> Self {
        Self::from_json(DEFAULT_FUNCTIONING_MAP).expect("bundled functioning map is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let map: FunctioningMap = serde_json::from_str(text)
            .map_err(|e| invalid(FUNCTIONING_MAP_FILE, "document", e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = fs::read_to_string(path).map_err(|e| ProfileError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// Every ADL domain must have a non-empty phrase for every rating.
    pub fn validate(&self) -> Result<(), ProfileError> {
        for domain in ADL_DOMAINS {
            for rating in MIN_RATING..=MAX_RATING {
                match self.entries.get(domain).and_then(|m| m.get(&rating.to_string())) {
                    Some(p) if !p.trim().is_empty() => {}
                    _ => {
                        return Err(invalid(
                            FUNCTIONING_MAP_FILE,
                            format!("domain {domain:?}"),
                            format!("missing phrase for rating {rating}"),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn phrase(&self, domain: &str, rating: i64) -> Option<&str> {
        self.entries
            .get(domain)
            .and_then(|m| m.get(&rating.to_string()))
            .map(String::as_str)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }
}

/// Looks up the configured phrase for `(domain, rating)`.
pub fn functioning_text<'a>(
    map: &'a FunctioningMap,
    domain: &str,
    rating: i64,
) -> Result<&'a str, ProfileError> {
    map.phrase(domain, rating)
        .ok_or_else(|| ProfileError::MissingPhrase {
            domain: domain.to_string(),
            rating,
        })
}

/// Profiles plus their knowledge base, indexed by `(profile_id, domain)`.
/// Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileStore {
    profiles: BTreeMap<String, Profile>,
    kb: Vec<KbEntry>,
    index: HashMap<(String, String), Vec<usize>>,
}

impl ProfileStore {
    /// Validates and indexes profiles and entries. KB entries without an
    /// id get `kb-{n}` where `n` is their position.
    pub fn new(profiles: Vec<Profile>, kb: Vec<KbEntry>) -> Result<Self, ProfileError> {
        let mut by_id = BTreeMap::new();
        for (i, p) in profiles.into_iter().enumerate() {
            let locus = format!("record {}", i + 1);
            validate_profile(&p, &locus)?;
            if by_id.contains_key(&p.id) {
                return Err(invalid(PROFILES_FILE, locus, format!("duplicate id {:?}", p.id)));
            }
            by_id.insert(p.id.clone(), p);
        }
        let mut index: HashMap<(String, String), Vec<usize>> = HashMap::new();
        let mut ids = HashSet::new();
        let mut entries = Vec::with_capacity(kb.len());
        for (i, mut e) in kb.into_iter().enumerate() {
            let locus = format!("line {}", i + 1);
            let Some(profile) = by_id.get(&e.profile_id) else {
                return Err(invalid(
                    KB_FILE,
                    locus,
                    format!("dangling profile_id {:?}", e.profile_id),
                ));
            };
            if !is_adl_domain(&e.domain) {
                return Err(invalid(KB_FILE, locus, format!("unknown domain {:?}", e.domain)));
            }
            if e.text.trim().is_empty() {
                return Err(invalid(KB_FILE, locus, "empty text"));
            }
            if e.intent.trim().is_empty() {
                return Err(invalid(KB_FILE, locus, "empty intent"));
            }
            let expected = select_style(profile);
            if e.style != expected {
                return Err(invalid(
                    KB_FILE,
                    locus,
                    format!(
                        "style {:?} does not match profile {:?} (age {}) which speaks {:?}",
                        e.style, profile.id, profile.age_years, expected
                    ),
                ));
            }
            if e.id.is_empty() {
                e.id = format!("kb-{}", i + 1);
            }
            if !ids.insert(e.id.clone()) {
                return Err(invalid(KB_FILE, locus, format!("duplicate entry id {:?}", e.id)));
            }
            index
                .entry((e.profile_id.clone(), e.domain.clone()))
                .or_default()
                .push(i);
            entries.push(e);
        }
        Ok(Self {
            profiles: by_id,
            kb: entries,
            index,
        })
    }

    pub fn profile(&self, id: &str) -> Option<&Profile> {
        self.profiles.get(id)
    }

    /// Profiles in id order.
    pub fn profiles(&self) -> impl Iterator<Item = &Profile> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn kb(&self) -> &[KbEntry] {
        &self.kb
    }

    /// Entries for a profile and domain, in stored order.
    pub fn entries_for(&self, profile_id: &str, domain: &str) -> Vec<&KbEntry> {
        self.index
            .get(&(profile_id.to_string(), domain.to_string()))
            .map(|idx| idx.iter().map(|&i| &self.kb[i]).collect())
            .unwrap_or_default()
    }

    /// True when `text` is verbatim the text of one of the profile's entries.
    pub fn has_verbatim(&self, profile_id: &str, text: &str) -> bool {
        self.kb
            .iter()
            .any(|e| e.profile_id == profile_id && e.text == text)
    }

    /// Writes `profiles.json` and `kb.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ProfileError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e| ProfileError::Io { path, source: e }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let profiles: Vec<&Profile> = self.profiles.values().collect();
        let ppath = dir.join(PROFILES_FILE);
        let text = serde_json::to_string_pretty(&profiles).expect("profiles serialize");
        fs::write(&ppath, text + "\n").map_err(io(&ppath))?;
        let kpath = dir.join(KB_FILE);
        let file = fs::File::create(&kpath).map_err(io(&kpath))?;
        let mut w = BufWriter::new(file);
        for e in &self.kb {
            let line = serde_json::to_string(e).expect("entry serializes");
            writeln!(w, "{line}").map_err(io(&kpath))?;
        }
        w.flush().map_err(io(&kpath))
    }
}

fn validate_profile(p: &Profile, locus: &str) -> Result<(), ProfileError> {
    if p.id.trim().is_empty() {
        return Err(invalid(PROFILES_FILE, locus, "empty id"));
    }
    let locus = format!("{locus} (id {:?})", p.id);
    for (domain, &rating) in &p.ratings {
        if !is_adl_domain(domain) {
            return Err(invalid(PROFILES_FILE, &locus, format!("unknown domain {domain:?}")));
        }
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(invalid(
                PROFILES_FILE,
                &locus,
                format!("rating {rating} for {domain:?} out of range {MIN_RATING}-{MAX_RATING}"),
            ));
        }
    }
    for domain in p.notes.keys() {
        if !is_adl_domain(domain) {
            return Err(invalid(PROFILES_FILE, &locus, format!("unknown note domain {domain:?}")));
        }
    }
    Ok(())
}

/// Loads a store directory. Missing files are treated as empty.
pub fn load_store(dir: &Path) -> Result<ProfileStore, ProfileError> {
    if !dir.is_dir() {
        return Err(ProfileError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "store directory not found"),
        });
    }
    let read = |name: &str| -> Result<Option<String>, ProfileError> {
        let path = dir.join(name);
        match fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ProfileError::Io { path, source: e }),
        }
    };
    let profiles: Vec<Profile> = match read(PROFILES_FILE)? {
        Some(text) => serde_json::from_str(&text)
            .map_err(|e| invalid(PROFILES_FILE, format!("line {}", e.line()), e.to_string()))?,
        None => Vec::new(),
    };
    let mut kb = Vec::new();
    if let Some(text) = read(KB_FILE)? {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: KbEntry = serde_json::from_str(line)
                .map_err(|e| invalid(KB_FILE, format!("line {}", i + 1), e.to_string()))?;
            kb.push(e);
        }
    }
    ProfileStore::new(profiles, kb)
}

/// Loads `functioning_map.json` from `dir` when present, else the bundled map.
pub fn load_functioning_map(dir: &Path) -> Result<FunctioningMap, ProfileError> {
    let path = dir.join(FUNCTIONING_MAP_FILE);
    if path.exists() {
        FunctioningMap::load(&path)
    } else {
        Ok(FunctioningMap::default_map())
    }
}

/// Knowledge-base entries for `(profile_id, domain)` whose intent is not
/// excluded, in stored order.
pub fn candidates(
    store: &ProfileStore,
    profile_id: &str,
    domain: &str,
    excluded_intents: &BTreeSet<String>,
) -> Result<Vec<KbEntry>, ProfileError> {
    if store.profile(profile_id).is_none() {
        return Err(ProfileError::UnknownProfile(profile_id.to_string()));
    }
    Ok(store
        .entries_for(profile_id, domain)
        .into_iter()
        .filter(|e| !excluded_intents.contains(&e.intent))
        .cloned()
        .collect())
}
