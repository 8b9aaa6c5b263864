//! Corpus data model, JSONL ingestion and semi-synthetic anomaly generation.

mod demo;
mod distribution;
mod io;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use demo::{build_demo_corpus, builtin_unknown_pairs, generate_correct_pairs, DemoConfig};
pub use distribution::{class_distribution, ClassDistribution, SplitCounts};
pub use io::{load_corpus, parse_corpus, save_corpus, write_corpus};
pub use synth::{
    default_substitutions, default_value_sets, synthesize_anomalies, SkippedPair, Substitution, SynthesisOutput, SynthesisRecipe,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),
    #[error("pair {id:?}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("synthesis precondition violated for pair {id:?}: {reason}")]
    Precondition { id: String, reason: String },
    #[error("invalid synthesis recipe: {0}")]
    Recipe(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Open-set label space: four known readback classes plus `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenLabel {
    Correct,
    Incorrect,
    Incomplete,
    NonStandard,
    Unknown,
}

impl OpenLabel {
    /// Number of known classes.
    pub const K: usize = 4;

    pub const KNOWN: [OpenLabel; 4] = [
        OpenLabel::Correct,
        OpenLabel::Incorrect,
        OpenLabel::Incomplete,
        OpenLabel::NonStandard,
    ];

    pub const ALL: [OpenLabel; 5] = [
        OpenLabel::Correct,
        OpenLabel::Incorrect,
        OpenLabel::Incomplete,
        OpenLabel::NonStandard,
        OpenLabel::Unknown,
    ];

    /// Stable code in `1..=5`, used for tie-breaking and the binary bank format.
    pub fn code(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1..=5 => Some(Self::ALL[usize::from(code) - 1]),
            _ => None,
        }
    }

    /// Zero-based position in [`OpenLabel::ALL`].
    pub fn index(self) -> usize {
        match self {
            OpenLabel::Correct => 0,
            OpenLabel::Incorrect => 1,
            OpenLabel::Incomplete => 2,
            OpenLabel::NonStandard => 3,
            OpenLabel::Unknown => 4,
        }
    }

    pub fn is_known(self) -> bool {
        self != OpenLabel::Unknown
    }

    /// Anomalous readbacks are the known classes other than `Correct`.
    pub fn is_anomaly(self) -> bool {
        matches!(
            self,
            OpenLabel::Incorrect | OpenLabel::Incomplete | OpenLabel::NonStandard
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpenLabel::Correct => "correct",
            OpenLabel::Incorrect => "incorrect",
            OpenLabel::Incomplete => "incomplete",
            OpenLabel::NonStandard => "non_standard",
            OpenLabel::Unknown => "unknown",
        }
    }

    /// Lenient parse: case-insensitive, ignores `_`, `-` and spaces.
    pub fn parse_loose(text: &str) -> Option<Self> {
        let key: String = text
            .trim()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "correct" => Some(OpenLabel::Correct),
            "incorrect" => Some(OpenLabel::Incorrect),
            "incomplete" => Some(OpenLabel::Incomplete),
            "nonstandard" => Some(OpenLabel::NonStandard),
            "unknown" => Some(OpenLabel::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for OpenLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpenLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_loose(s).ok_or_else(|| format!("unknown label {s:?}"))
    }
}

/// Character interval `[start, end)`, counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Byte range of this span within `text`, if in bounds.
    pub fn byte_range(&self, text: &str) -> Option<std::ops::Range<usize>> {
        if self.start > self.end {
            return None;
        }
        let start = char_to_byte(text, self.start)?;
        let end = char_to_byte(text, self.end)?;
        Some(start..end)
    }

    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        self.byte_range(text).map(|r| &text[r])
    }

    /// Builds a character span from a byte range of `text`.
    pub fn from_bytes(text: &str, range: std::ops::Range<usize>) -> Self {
        let start = text[..range.start].chars().count();
        let end = start + text[range].chars().count();
        Self { start, end }
    }
}

/// Byte offset of the `idx`-th character; `idx == char count` maps to `text.len()`.
pub fn char_to_byte(text: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in text.char_indices() {
        if count == idx {
            return Some(b);
        }
        count += 1;
    }
    (count == idx).then_some(text.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub name: String,
    pub value: String,
    #[serde(flatten)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SemanticAnnotation {
    pub intent: String,
    #[serde(default)]
    pub slots: Vec<SlotValue>,
}

impl SemanticAnnotation {
    /// Checks span bounds, value/substring agreement, ordering and non-overlap.
    pub fn validate(&self, text: &str) -> Result<(), String> {
        let mut prev: Option<&SlotValue> = None;
        for slot in &self.slots {
            let found = slot
                .span
                .slice(text)
                .ok_or_else(|| format!("slot {:?} span out of bounds", slot.name))?;
            if found != slot.value {
                return Err(format!(
                    "slot {:?} value {:?} does not match text {:?}",
                    slot.name, slot.value, found
                ));
            }
            if let Some(p) = prev {
                if slot.span.start < p.span.start || slot.span.overlaps(&p.span) {
                    return Err(format!(
                        "slot {:?} overlaps or precedes slot {:?}",
                        slot.name, p.name
                    ));
                }
            }
            prev = Some(slot);
        }
        Ok(())
    }

    pub fn slot(&self, name: &str) -> Option<&SlotValue> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Rebuilds an annotation for `text` from `(name, value)` pairs by locating
    /// each value at its first unclaimed occurrence. Returns `None` when a
    /// value cannot be placed.
    pub fn locate(text: &str, intent: &str, slots: &[(String, String)]) -> Option<Self> {
        let mut placed: Vec<SlotValue> = Vec::with_capacity(slots.len());
        for (name, value) in slots {
            if value.is_empty() {
                return None;
            }
            let mut from = 0;
            let span = loop {
                let off = text[from..].find(value.as_str())?;
                let range = from + off..from + off + value.len();
                let span = Span::from_bytes(text, range.clone());
                if placed.iter().all(|p| !p.span.overlaps(&span)) {
                    break span;
                }
                from = range.start + text[range.start..].chars().next()?.len_utf8();
            };
            placed.push(SlotValue {
                name: name.clone(),
                value: value.clone(),
                span,
            });
        }
        placed.sort_by_key(|s| s.span);
        Some(Self {
            intent: intent.to_string(),
            slots: placed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Calibration,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Calibration];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Calibration => "calibration",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Record of how a synthesized pair was derived from its Correct source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub source_readback: String,
    pub mutation: OpenLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// One ATCo instruction plus pilot readback exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtterancePair {
    pub id: String,
    pub instruction: String,
    pub readback: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<OpenLabel>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_instruction: Option<SemanticAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_readback: Option<SemanticAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl UtterancePair {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        readback: impl Into<String>,
        label: Option<OpenLabel>,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            instruction: instruction.into(),
            readback: readback.into(),
            label,
            split,
            annotation_instruction: None,
            annotation_readback: None,
            provenance: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.instruction.trim().is_empty() {
            return Err(invalid("empty instruction".into()));
        }
        if self.readback.trim().is_empty() {
            return Err(invalid("empty readback".into()));
        }
        if self.split == Split::Calibration
            && !matches!(self.label, None | Some(OpenLabel::Unknown))
        {
            return Err(invalid(format!(
                "calibration pair labelled {}",
                self.label.map(OpenLabel::as_str).unwrap_or("none")
            )));
        }
        if let Some(a) = &self.annotation_instruction {
            a.validate(&self.instruction)
                .map_err(|e| invalid(format!("instruction annotation: {e}")))?;
        }
        if let Some(a) = &self.annotation_readback {
            a.validate(&self.readback)
                .map_err(|e| invalid(format!("readback annotation: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_codes_are_stable() {
        for (i, l) in OpenLabel::ALL.iter().enumerate() {
            assert_eq!(l.code() as usize, i + 1);
            assert_eq!(OpenLabel::from_code(l.code()), Some(*l));
        }
        assert_eq!(OpenLabel::from_code(0), None);
        assert_eq!(OpenLabel::from_code(6), None);
    }

    #[test]
    fn loose_label_parsing() {
        assert_eq!(OpenLabel::parse_loose("INCOMPLETE"), Some(OpenLabel::Incomplete));
        assert_eq!(OpenLabel::parse_loose("non-standard"), Some(OpenLabel::NonStandard));
        assert_eq!(OpenLabel::parse_loose("Non Standard"), Some(OpenLabel::NonStandard));
        assert_eq!(OpenLabel::parse_loose("non_standard"), Some(OpenLabel::NonStandard));
        assert_eq!(OpenLabel::parse_loose("maybe"), None);
    }

    #[test]
    fn span_uses_character_offsets() {
        let text = "航班 CCA1234, climb";
        let span = Span::new(3, 10);
        assert_eq!(span.slice(text), Some("CCA1234"));
        assert_eq!(Span::new(3, 30).slice(text), None);
        let b = text.find("CCA").unwrap();
        assert_eq!(Span::from_bytes(text, b..b + 7), span);
    }

    #[test]
    fn annotation_validation() {
        let text = "climb maintain 8900 meters, CCA1234";
        let ok = SemanticAnnotation::locate(
            text,
            "climb",
            &[
                ("callsign".into(), "CCA1234".into()),
                ("altitude".into(), "8900".into()),
            ],
        )
        .unwrap();
        assert_eq!(ok.slots[0].name, "altitude");
        assert!(ok.validate(text).is_ok());

        let mut bad = ok.clone();
        bad.slots[0].value = "9800".into();
        assert!(bad.validate(text).is_err());

        let mut unsorted = ok.clone();
        unsorted.slots.swap(0, 1);
        assert!(unsorted.validate(text).is_err());
    }

    #[test]
    fn calibration_pairs_must_be_unknown() {
        let p = UtterancePair::new("c1", "say again", "say again", Some(OpenLabel::Correct), Split::Calibration);
        assert!(p.validate().is_err());
        let p = UtterancePair::new("c1", "say again", "say again", None, Split::Calibration);
        assert!(p.validate().is_ok());
        let p = UtterancePair::new("c2", "  ", "x", None, Split::Train);
        assert!(p.validate().is_err());
    }
}
