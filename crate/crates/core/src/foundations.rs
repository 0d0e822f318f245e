//! The six moral foundations, their definition texts, and conversion between
//! free text and [`FoundationSet`].

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One of the six moral foundations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoralFoundation {
    Care,
    Fairness,
    Liberty,
    Loyalty,
    Authority,
    Sanctity,
}

/// Canonical order.
pub const ALL_FOUNDATIONS: [MoralFoundation; 6] = [
    MoralFoundation::Care,
    MoralFoundation::Fairness,
    MoralFoundation::Liberty,
    MoralFoundation::Loyalty,
    MoralFoundation::Authority,
    MoralFoundation::Sanctity,
];

impl MoralFoundation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Care => "care",
            Self::Fairness => "fairness",
            Self::Liberty => "liberty",
            Self::Loyalty => "loyalty",
            Self::Authority => "authority",
            Self::Sanctity => "sanctity",
        }
    }

    /// Capitalized label used in the definitions block ("Care").
    pub fn title(self) -> &'static str {
        match self {
            Self::Care => "Care",
            Self::Fairness => "Fairness",
            Self::Liberty => "Liberty",
            Self::Loyalty => "Loyalty",
            Self::Authority => "Authority",
            Self::Sanctity => "Sanctity",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Self::Care => "wanting someone or something to be safe, healthy, happy.",
            Self::Fairness => "wanting to see individuals or groups treated equally or equitably.",
            Self::Liberty => "wanting people to be free to make their own decisions.",
            Self::Loyalty => "wanting unity and seeing people keep promises or obligations to an in-group.",
            Self::Authority => "wanting to respect social roles, duties, privacy, peace, and order.",
            Self::Sanctity => "wanting people and things to be clean, pure, innocent, and holy.",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

impl fmt::Display for MoralFoundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MoralFoundation {
    type Err = FoundationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ALL_FOUNDATIONS
            .iter()
            .copied()
            .find(|f| f.name() == lower)
            .ok_or_else(|| FoundationError::UnknownFoundation(s.to_string()))
    }
}

impl Serialize for MoralFoundation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MoralFoundation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FoundationError {
    #[error("no moral foundation name found in text")]
    NoFoundationFound,
    #[error("foundation set is empty")]
    EmptySet,
    #[error("unknown moral foundation `{0}`")]
    UnknownFoundation(String),
}

/// The six foundations in canonical order.
pub fn canonical_foundations() -> [MoralFoundation; 6] {
    ALL_FOUNDATIONS
}

/// The full definitions paragraph, used as the definitions block in
/// fine-tuning inputs.
pub fn definitions_paragraph() -> String {
    format!("There are six moral foundations. {}", definitions_list())
}

/// `Care: wanting ... Sanctity: ... holy.` on one line.
pub fn definitions_list() -> String {
    ALL_FOUNDATIONS.iter().map(|f| format!("{}: {}", f.title(), f.definition())).collect::<Vec<_>>().join(" ")
}

/// A nonempty set of foundations. Iteration is always in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FoundationSet(u8);

impl FoundationSet {
    pub fn new(items: impl IntoIterator<Item = MoralFoundation>) -> Result<Self, FoundationError> {
        let bits = items.into_iter().fold(0u8, |acc, f| acc | f.bit());
        Self::from_bits(bits)
    }

    pub fn single(f: MoralFoundation) -> Self {
        Self(f.bit())
    }

    pub fn from_bits(bits: u8) -> Result<Self, FoundationError> {
        let bits = bits & 0b11_1111;
        if bits == 0 {
            Err(FoundationError::EmptySet)
        } else {
            Ok(Self(bits))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, f: MoralFoundation) -> bool {
        self.0 & f.bit() != 0
    }

    /// `|y_M|`, between 1 and 6.
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn iter(self) -> impl Iterator<Item = MoralFoundation> {
        ALL_FOUNDATIONS.into_iter().filter(move |f| self.contains(*f))
    }

    pub fn intersection_len(self, other: FoundationSet) -> usize {
        (self.0 & other.0).count_ones() as usize
    }

    pub fn union_len(self, other: FoundationSet) -> usize {
        (self.0 | other.0).count_ones() as usize
    }

    /// The single member, if the set has exactly one.
    pub fn as_single(self) -> Option<MoralFoundation> {
        if self.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }
}

impl fmt::Debug for FoundationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for FoundationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_foundation_list(*self))
    }
}

impl Serialize for FoundationSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FoundationSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<MoralFoundation>::deserialize(deserializer)?;
        FoundationSet::new(items).map_err(serde::de::Error::custom)
    }
}

const NAME_ALTERNATION: &str = "care|fairness|liberty|loyalty|authority|sanctity";

fn name_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"(?i)\b(?:{NAME_ALTERNATION})\b")).unwrap())
}

/// Matches a maximal run of foundation names joined by list connectives
/// (`,`, `and`, `&`, `/`), e.g. `care, fairness, and sanctity`.
pub(crate) fn name_run_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let name = format!(r"\b(?:{NAME_ALTERNATION})\b");
        let sep = r"(?:\s*,\s*(?:and\s+)?|\s+and\s+|\s*&\s*|\s*/\s*)";
        Regex::new(&format!("(?i){name}(?:{sep}{name})*")).unwrap()
    })
}

/// Byte spans of every foundation-name run in `text`.
pub fn foundation_name_runs(text: &str) -> Vec<std::ops::Range<usize>> {
    name_run_regex().find_iter(text).map(|m| m.range()).collect()
}

/// Collects every foundation whose canonical name occurs in `text` as a
/// case-insensitive whole word.
pub fn parse_foundations(text: &str) -> Result<FoundationSet, FoundationError> {
    let bits = name_regex()
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<MoralFoundation>().ok())
        .fold(0u8, |acc, f| acc | f.bit());
    FoundationSet::from_bits(bits).map_err(|_| FoundationError::NoFoundationFound)
}

/// Natural-language list of the set: `care`, `care and fairness`,
/// `care, fairness, and sanctity`.
pub fn format_foundation_list(set: FoundationSet) -> String {
    let names: Vec<&str> = set.iter().map(MoralFoundation::name).collect();
    match names.as_slice() {
        [] => String::new(),
        [one] => (*one).to_string(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

/// Checked variant for callers holding a possibly-empty collection.
pub fn format_foundations(items: &[MoralFoundation]) -> Result<String, FoundationError> {
    Ok(format_foundation_list(FoundationSet::new(items.iter().copied())?))
}
