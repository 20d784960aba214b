//! Label taxonomy, normalization, and response parsing.
//!
//! Twelve canonical categories: ten cognitive distortions plus
//! `No Distortion` and the `Others` bucket. Raw model output is normalized
//! through a synonym table; anything unrecognized lands in `Others` so
//! parsing is total over non-empty responses.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical label set. Variant order is the prompt list order, then the
/// two non-distortion categories; `Ord` follows this order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum CanonLabel {
    #[serde(rename = "Emotional Reasoning")]
    EmotionalReasoning,
    #[serde(rename = "Overgeneralization")]
    Overgeneralization,
    #[serde(rename = "Mental Filter")]
    MentalFilter,
    #[serde(rename = "Should Statements")]
    ShouldStatements,
    #[serde(rename = "All or Nothing Thinking")]
    AllOrNothingThinking,
    #[serde(rename = "Mind Reading")]
    MindReading,
    #[serde(rename = "Fortune Telling")]
    FortuneTelling,
    #[serde(rename = "Magnification")]
    Magnification,
    #[serde(rename = "Personalization")]
    Personalization,
    #[serde(rename = "Labeling")]
    Labeling,
    #[serde(rename = "No Distortion")]
    NoDistortion,
    #[serde(rename = "Others")]
    Others,
}

impl CanonLabel {
    pub const ALL: [CanonLabel; 12] = [
        CanonLabel::EmotionalReasoning,
        CanonLabel::Overgeneralization,
        CanonLabel::MentalFilter,
        CanonLabel::ShouldStatements,
        CanonLabel::AllOrNothingThinking,
        CanonLabel::MindReading,
        CanonLabel::FortuneTelling,
        CanonLabel::Magnification,
        CanonLabel::Personalization,
        CanonLabel::Labeling,
        CanonLabel::NoDistortion,
        CanonLabel::Others,
    ];

    /// The ten distortions in prompt list order.
    pub const DISTORTIONS: [CanonLabel; 10] = [
        CanonLabel::EmotionalReasoning,
        CanonLabel::Overgeneralization,
        CanonLabel::MentalFilter,
        CanonLabel::ShouldStatements,
        CanonLabel::AllOrNothingThinking,
        CanonLabel::MindReading,
        CanonLabel::FortuneTelling,
        CanonLabel::Magnification,
        CanonLabel::Personalization,
        CanonLabel::Labeling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CanonLabel::EmotionalReasoning => "Emotional Reasoning",
            CanonLabel::Overgeneralization => "Overgeneralization",
            CanonLabel::MentalFilter => "Mental Filter",
            CanonLabel::ShouldStatements => "Should Statements",
            CanonLabel::AllOrNothingThinking => "All or Nothing Thinking",
            CanonLabel::MindReading => "Mind Reading",
            CanonLabel::FortuneTelling => "Fortune Telling",
            CanonLabel::Magnification => "Magnification",
            CanonLabel::Personalization => "Personalization",
            CanonLabel::Labeling => "Labeling",
            CanonLabel::NoDistortion => "No Distortion",
            CanonLabel::Others => "Others",
        }
    }

    /// True for the ten distortions and for `Others` (a distortion-like
    /// catch-all), false only for `No Distortion`.
    pub fn is_distortion_like(self) -> bool {
        !matches!(self, CanonLabel::NoDistortion)
    }

    /// True only for the ten named distortions.
    pub fn is_named_distortion(self) -> bool {
        !matches!(self, CanonLabel::NoDistortion | CanonLabel::Others)
    }
}

/// The eleven categories scored for inter-run agreement: the ten
/// distortions in alphabetical order, then `No Distortion`. `Others` is
/// excluded by convention.
pub const AGREEMENT_LABELS: [CanonLabel; 11] = [
    CanonLabel::AllOrNothingThinking,
    CanonLabel::EmotionalReasoning,
    CanonLabel::FortuneTelling,
    CanonLabel::Labeling,
    CanonLabel::Magnification,
    CanonLabel::MentalFilter,
    CanonLabel::MindReading,
    CanonLabel::Overgeneralization,
    CanonLabel::Personalization,
    CanonLabel::ShouldStatements,
    CanonLabel::NoDistortion,
];

impl fmt::Display for CanonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for CanonLabel {
    type Err = UnknownLabel;

    /// Strict parse: exact canonical strings only. Use [`normalize_label`]
    /// for lenient mapping of raw model output.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CanonLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_owned()))
    }
}

/// Marker for items where no consensus label survived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FallbackCategory {
    /// At least one run said `No Distortion`; the split is distortion vs not.
    #[serde(rename = "Not sure if distortion")]
    NotSureIfDistortion,
    /// Every run saw a distortion but they never agreed on which.
    #[serde(rename = "Not sure which distortion")]
    NotSureWhichDistortion,
}

impl FallbackCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FallbackCategory::NotSureIfDistortion => "Not sure if distortion",
            FallbackCategory::NotSureWhichDistortion => "Not sure which distortion",
        }
    }
}

impl fmt::Display for FallbackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FallbackCategory {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Not sure if distortion" => Ok(FallbackCategory::NotSureIfDistortion),
            "Not sure which distortion" => Ok(FallbackCategory::NotSureWhichDistortion),
            other => Err(UnknownLabel(other.to_owned())),
        }
    }
}

/// Which instruction the run used: ranked (dominant + optional secondary,
/// at most two labels) or exhaustive multi-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    #[serde(rename = "rlp")]
    Rlp,
    #[serde(rename = "mlp")]
    Mlp,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Rlp => "rlp",
            PromptKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rlp" => Ok(PromptKind::Rlp),
            "mlp" => Ok(PromptKind::Mlp),
            other => Err(UnknownLabel(other.to_owned())),
        }
    }
}

/// Normalization key: trim, strip one trailing parenthetical, case-fold,
/// treat `-` and `_` as spaces, collapse whitespace runs.
pub fn normalize_key(raw: &str) -> String {
    let mut s = raw.trim();
    if s.ends_with(')') {
        if let Some(open) = s.rfind('(') {
            let head = s[..open].trim_end();
            if !head.is_empty() {
                s = head;
            }
        }
    }
    let folded: String = s
        .chars()
        .map(|c| if c == '-' || c == '_' { ' ' } else { c })
        .flat_map(char::to_lowercase)
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps normalized keys to canonical labels. Ships with the canonical names
/// plus the off-list labels observed in real model output, all bucketed
/// into `Others`; anything not in the table also resolves to `Others`.
#[derive(Debug, Clone)]
pub struct SynonymTable {
    map: HashMap<String, CanonLabel>,
}

/// Off-list labels seen in raw model responses, kept as explicit table
/// entries so the bucketing is visible and extensible.
const OTHERS_SYNONYMS: &[&str] = &[
    "adhd",
    "anxiety",
    "avoidance",
    "blaming",
    "comparison",
    "delusion",
    "delusional disorder",
    "delusional thinking",
    "delusions",
    "delusions of grandeur",
    "delusions of persecution",
    "delusions of reference",
    "dependence",
    "dependent personality disorder",
    "disregard for others' feelings",
    "fantasy",
    "fantasy thinking",
    "guilt",
    "guilt tripping",
    "hallucinations",
    "jumping to conclusions",
    "lack of emotional empathy",
    "lack of empathy",
    "low self esteem",
    "minimization",
    "narcissism",
    "obsession",
    "paranoia",
    "paranoid thinking",
    "procrastination",
    "rumination",
    "secret keeping",
    "self harm",
    "social anxiety",
    "social avoidance",
    "social comparison",
    "trust issues",
    "unhealthy lifestyle",
];

impl Default for SynonymTable {
    fn default() -> Self {
        let mut map = HashMap::new();
        for label in CanonLabel::ALL {
            map.insert(normalize_key(label.as_str()), label);
        }
        for syn in OTHERS_SYNONYMS {
            map.insert((*syn).to_owned(), CanonLabel::Others);
        }
        SynonymTable { map }
    }
}

impl SynonymTable {
    /// Adds or overrides one mapping; `raw` is normalized first.
    pub fn insert(&mut self, raw: &str, label: CanonLabel) {
        self.map.insert(normalize_key(raw), label);
    }

    /// Total lookup: unrecognized input resolves to `Others`.
    pub fn lookup(&self, raw: &str) -> CanonLabel {
        self.map
            .get(&normalize_key(raw))
            .copied()
            .unwrap_or(CanonLabel::Others)
    }
}

static DEFAULT_TABLE: LazyLock<SynonymTable> = LazyLock::new(SynonymTable::default);

/// Lenient label mapping through the default synonym table.
pub fn normalize_label(raw: &str) -> CanonLabel {
    DEFAULT_TABLE.lookup(raw)
}

/// Strict canonical match after key normalization: tolerates case,
/// hyphens, and parentheticals but never buckets unknowns into `Others`.
/// Gold labels go through this, model output through [`normalize_label`].
pub fn match_canonical(raw: &str) -> Option<CanonLabel> {
    let key = normalize_key(raw);
    CanonLabel::ALL
        .into_iter()
        .find(|label| normalize_key(label.as_str()) == key)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    /// Blank response or no tokens after splitting; callers should retry.
    #[error("empty response")]
    EmptyResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    /// Deduplicated labels in response order (first mention wins).
    pub labels: Vec<CanonLabel>,
    pub warnings: Vec<String>,
}

/// Parses one raw completion into canonical labels.
///
/// Cleanup order: dedup, drop `Others` next to a named distortion, drop
/// `No Distortion` next to a named distortion (warned), then for ranked
/// prompts truncate to the first two labels (warned). The result is
/// non-empty whenever the input had at least one token.
pub fn parse_response(raw: &str, kind: PromptKind) -> Result<ParsedResponse, ParseError> {
    let mut labels: Vec<CanonLabel> = Vec::new();
    for token in raw.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let label = normalize_label(token);
        if !labels.contains(&label) {
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(ParseError::EmptyResponse);
    }

    let mut warnings = Vec::new();
    let has_named = labels.iter().any(|l| l.is_named_distortion());
    if has_named {
        labels.retain(|l| *l != CanonLabel::Others);
        let before = labels.len();
        labels.retain(|l| *l != CanonLabel::NoDistortion);
        if labels.len() < before {
            warnings.push(
                "dropped No Distortion: response also named a distortion".to_owned(),
            );
        }
    }
    if kind == PromptKind::Rlp && labels.len() > 2 {
        warnings.push(format!(
            "ranked response listed {} labels; kept the first 2",
            labels.len()
        ));
        labels.truncate(2);
    }

    Ok(ParsedResponse { labels, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_strings_round_trip() {
        for label in CanonLabel::ALL {
            assert_eq!(label.as_str().parse::<CanonLabel>().unwrap(), label);
            let json = serde_json::to_string(&label).unwrap();
            assert_eq!(json, format!("\"{}\"", label.as_str()));
            let back: CanonLabel = serde_json::from_str(&json).unwrap();
            assert_eq!(back, label);
        }
    }

    #[test]
    fn strict_parse_rejects_variants() {
        assert!("emotional reasoning".parse::<CanonLabel>().is_err());
        assert!("Fortune-Telling".parse::<CanonLabel>().is_err());
    }

    #[test]
    fn normalize_handles_case_hyphens_and_parentheticals() {
        assert_eq!(
            normalize_label("Magnification (Catastrophizing)"),
            CanonLabel::Magnification
        );
        assert_eq!(
            normalize_label("All-or-Nothing Thinking"),
            CanonLabel::AllOrNothingThinking
        );
        assert_eq!(normalize_label("  mind_reading "), CanonLabel::MindReading);
        assert_eq!(normalize_label("fortune  telling"), CanonLabel::FortuneTelling);
        assert_eq!(normalize_label("no distortion"), CanonLabel::NoDistortion);
    }

    #[test]
    fn off_list_labels_bucket_into_others() {
        assert_eq!(normalize_label("Paranoia"), CanonLabel::Others);
        assert_eq!(normalize_label("Jumping to Conclusions"), CanonLabel::Others);
        assert_eq!(normalize_label("complete gibberish"), CanonLabel::Others);
    }

    #[test]
    fn parse_keeps_response_order_and_dedups() {
        let parsed =
            parse_response("Personalization, Fortune Telling, personalization", PromptKind::Mlp)
                .unwrap();
        assert_eq!(
            parsed.labels,
            vec![CanonLabel::Personalization, CanonLabel::FortuneTelling]
        );
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn parse_drops_no_distortion_next_to_distortion_with_warning() {
        let parsed =
            parse_response("Mind Reading, No Distortion", PromptKind::Mlp).unwrap();
        assert_eq!(parsed.labels, vec![CanonLabel::MindReading]);
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("No Distortion"));
    }

    #[test]
    fn parse_drops_others_next_to_distortion_silently() {
        let parsed = parse_response("Paranoia, Mind Reading", PromptKind::Mlp).unwrap();
        assert_eq!(parsed.labels, vec![CanonLabel::MindReading]);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn parse_keeps_others_alone() {
        let parsed = parse_response("Paranoia", PromptKind::Mlp).unwrap();
        assert_eq!(parsed.labels, vec![CanonLabel::Others]);
    }

    #[test]
    fn ranked_prompt_truncates_to_two() {
        let parsed = parse_response(
            "Personalization, Mind Reading, Fortune Telling",
            PromptKind::Rlp,
        )
        .unwrap();
        assert_eq!(
            parsed.labels,
            vec![CanonLabel::Personalization, CanonLabel::MindReading]
        );
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn multilabel_prompt_keeps_all_distortions() {
        let parsed = parse_response(
            "Personalization, Mind Reading, Fortune Telling",
            PromptKind::Mlp,
        )
        .unwrap();
        assert_eq!(parsed.labels.len(), 3);
    }

    #[test]
    fn blank_responses_are_an_error() {
        assert_eq!(
            parse_response("", PromptKind::Mlp).unwrap_err(),
            ParseError::EmptyResponse
        );
        assert_eq!(
            parse_response(" , , ", PromptKind::Rlp).unwrap_err(),
            ParseError::EmptyResponse
        );
    }

    #[test]
    fn cleanup_never_empties_the_label_list() {
        // No Distortion survives when nothing named a distortion.
        let parsed = parse_response("No Distortion, Paranoia", PromptKind::Mlp).unwrap();
        assert_eq!(
            parsed.labels,
            vec![CanonLabel::NoDistortion, CanonLabel::Others]
        );
    }
}
