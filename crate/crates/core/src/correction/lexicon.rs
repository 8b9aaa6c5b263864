//! Phraseology lexicon: airline designators, slot patterns and intent keywords.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{SemanticAnnotation, SlotValue, Span};

pub const CALLSIGN_SLOT: &str = "callsign";
pub const LEXICON_FORMAT_VERSION: u32 = 1;

const BUILTIN_LEXICON: &str = include_str!("../../../../data/lexicon.json");

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported lexicon format version {0}")]
    Version(u32),
    #[error("invalid lexicon: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotPattern {
    /// A digit run, optionally with a mandatory decimal part or a unit keyword after it.
    Digits {
        min_len: usize,
        max_len: usize,
        #[serde(default)]
        decimal: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        suffix: Vec<String>,
    },
    /// A digit run directly preceded by one of the keyword anchors.
    KeywordDigits {
        keywords: Vec<String>,
        min_len: usize,
        max_len: usize,
        #[serde(default)]
        decimal: bool,
        #[serde(default)]
        letter_suffix: bool,
    },
}

impl SlotPattern {
    fn to_regex(&self) -> Result<Regex, LexiconError> {
        let number = |min: usize, max: usize, decimal: bool| {
            if decimal {
                format!(r"\d{{{min},{max}}}\.\d{{1,3}}")
            } else {
                format!(r"\d{{{min},{max}}}")
            }
        };
        let src = match self {
            SlotPattern::Digits {
                min_len,
                max_len,
                decimal,
                suffix,
            } => {
                check_lengths(*min_len, *max_len)?;
                let core = number(*min_len, *max_len, *decimal);
                if suffix.is_empty() {
                    format!(r"(?i)\b({core})\b")
                } else {
                    format!(r"(?i)\b({core})\s*(?:{})\b", alternation(suffix))
                }
            }
            SlotPattern::KeywordDigits {
                keywords,
                min_len,
                max_len,
                decimal,
                letter_suffix,
            } => {
                check_lengths(*min_len, *max_len)?;
                if keywords.is_empty() {
                    return Err(LexiconError::Invalid("keyword pattern without keywords".into()));
                }
                let letter = if *letter_suffix { "[LRC]?" } else { "" };
                format!(
                    r"(?i)\b(?:{})\s+({}{letter})\b",
                    alternation(keywords),
                    number(*min_len, *max_len, *decimal)
                )
            }
        };
        Regex::new(&src).map_err(|e| LexiconError::Invalid(e.to_string()))
    }
}

fn check_lengths(min: usize, max: usize) -> Result<(), LexiconError> {
    if min == 0 || min > max {
        return Err(LexiconError::Invalid(format!("bad digit lengths {min}..{max}")));
    }
    Ok(())
}

/// Longest-first alternation so that multi-word entries win over their prefixes.
fn alternation(words: &[String]) -> String {
    let mut sorted: Vec<&String> = words.iter().collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    sorted
        .iter()
        .map(|w| regex::escape(w).replace(' ', r"\s+"))
        .collect::<Vec<_>>()
        .join("|")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRule {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Serialized form of the lexicon file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconFile {
    pub format_version: u32,
    pub airline_designators: BTreeMap<String, String>,
    pub slot_patterns: BTreeMap<String, SlotPattern>,
    #[serde(default)]
    pub intents: Vec<IntentRule>,
}

#[derive(Debug, Clone)]
pub struct PhraseologyLexicon {
    file: LexiconFile,
    callsign: Regex,
    slots: Vec<(String, Regex)>,
    intents: Vec<(String, Regex)>,
}

impl PhraseologyLexicon {
    pub fn new(file: LexiconFile) -> Result<Self, LexiconError> {
        if file.format_version != LEXICON_FORMAT_VERSION {
            return Err(LexiconError::Version(file.format_version));
        }
        if file.airline_designators.is_empty() {
            return Err(LexiconError::Invalid("no airline designators".into()));
        }
        if file.slot_patterns.is_empty() {
            return Err(LexiconError::Invalid("no slot patterns".into()));
        }
        if file.slot_patterns.contains_key(CALLSIGN_SLOT) {
            return Err(LexiconError::Invalid(
                "callsign is derived from designators, not a slot pattern".into(),
            ));
        }
        let designators: Vec<String> = file.airline_designators.keys().cloned().collect();
        let callsign = Regex::new(&format!(
            r"(?i)\b(?:{})\s?\d{{1,4}}[A-Z]?\b",
            alternation(&designators)
        ))
        .map_err(|e| LexiconError::Invalid(e.to_string()))?;
        let slots = file
            .slot_patterns
            .iter()
            .map(|(name, p)| Ok((name.clone(), p.to_regex()?)))
            .collect::<Result<Vec<_>, LexiconError>>()?;
        let intents = file
            .intents
            .iter()
            .filter(|r| !r.keywords.is_empty())
            .map(|r| {
                let re = Regex::new(&format!(r"(?i)\b(?:{})\b", alternation(&r.keywords)))
                    .map_err(|e| LexiconError::Invalid(e.to_string()))?;
                Ok((r.name.clone(), re))
            })
            .collect::<Result<Vec<_>, LexiconError>>()?;
        Ok(Self {
            file,
            callsign,
            slots,
            intents,
        })
    }

    /// The lexicon bundled with the crate (`data/lexicon.json`).
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn file(&self) -> &LexiconFile {
        &self.file
    }

    pub fn slot_types(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(n, _)| n.as_str())
    }

    /// Leftmost designator-plus-number match, as a character span.
    pub fn find_callsign(&self, text: &str) -> Option<Span> {
        self.callsign
            .find(text)
            .map(|m| Span::from_bytes(text, m.range()))
    }

    /// Canonical ICAO form of a callsign text (`"Air China 1234"` → `"CCA1234"`).
    pub fn canonical_callsign(&self, callsign: &str) -> Option<String> {
        let m = self.callsign.find(callsign)?;
        let matched = m.as_str();
        let split = matched.find(|c: char| c.is_ascii_digit())?;
        let designator = matched[..split].trim();
        let canonical = self
            .file
            .airline_designators
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(designator))
            .map(|(_, v)| v.clone())?;
        Some(format!("{canonical}{}", &matched[split..]))
    }

    /// All lexicon-covered slots in `text`, sorted by position, overlaps removed.
    pub fn extract_slots(&self, text: &str) -> Vec<SlotValue> {
        let mut found: Vec<SlotValue> = Vec::new();
        for m in self.callsign.find_iter(text) {
            found.push(SlotValue {
                name: CALLSIGN_SLOT.to_string(),
                value: m.as_str().to_string(),
                span: Span::from_bytes(text, m.range()),
            });
        }
        for (name, re) in &self.slots {
            for caps in re.captures_iter(text) {
                let g = caps.get(1).expect("slot regex has one capture group");
                found.push(SlotValue {
                    name: name.clone(),
                    value: g.as_str().to_string(),
                    span: Span::from_bytes(text, g.range()),
                });
            }
        }
        found.sort_by(|a, b| a.span.cmp(&b.span).then(a.name.cmp(&b.name)));
        let mut kept: Vec<SlotValue> = Vec::with_capacity(found.len());
        for slot in found {
            if kept.last().is_none_or(|k| !k.span.overlaps(&slot.span)) {
                kept.push(slot);
            }
        }
        kept
    }

    /// Intent names in order of first keyword occurrence, joined by `+`; `"none"` if nothing matches.
    pub fn detect_intent(&self, text: &str) -> String {
        let mut hits: Vec<(usize, &str)> = self
            .intents
            .iter()
            .filter_map(|(name, re)| re.find(text).map(|m| (m.start(), name.as_str())))
            .collect();
        hits.sort();
        if hits.is_empty() {
            return "none".to_string();
        }
        hits.iter().map(|(_, n)| *n).collect::<Vec<_>>().join("+")
    }

    pub fn annotate(&self, text: &str) -> SemanticAnnotation {
        SemanticAnnotation {
            intent: self.detect_intent(text),
            slots: self.extract_slots(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_extracts_all_slot_types() {
        let lex = PhraseologyLexicon::builtin();
        let text = "CCA1234, climb and maintain 8900 meters, turn left heading 270, reduce speed 250 knots, contact Beijing Approach 119.25, runway 36L cleared for takeoff";
        let slots = lex.extract_slots(text);
        let got: Vec<(&str, &str)> = slots.iter().map(|s| (s.name.as_str(), s.value.as_str())).collect();
        assert_eq!(
            got,
            [
                ("callsign", "CCA1234"),
                ("altitude", "8900"),
                ("heading", "270"),
                ("speed", "250"),
                ("frequency", "119.25"),
                ("runway", "36L"),
            ]
        );
        let ann = lex.annotate(text);
        assert!(ann.validate(text).is_ok());
        assert_eq!(ann.intent, "climb+turn+speed+contact+takeoff");
    }

    #[test]
    fn telephony_designator_and_canonical_form() {
        let lex = PhraseologyLexicon::builtin();
        let text = "Air China 1234 descend 3000 meters";
        let span = lex.find_callsign(text).unwrap();
        assert_eq!(span.slice(text), Some("Air China 1234"));
        assert_eq!(lex.canonical_callsign("Air China 1234").as_deref(), Some("CCA1234"));
        assert_eq!(lex.canonical_callsign("ces501").as_deref(), Some("CES501"));
    }

    #[test]
    fn no_designator_no_callsign() {
        let lex = PhraseologyLexicon::builtin();
        assert!(lex.find_callsign("climb and maintain").is_none());
        assert_eq!(lex.detect_intent("hello there"), "none");
    }

    #[test]
    fn rejects_bad_files() {
        let mut file = PhraseologyLexicon::builtin().file().clone();
        file.format_version = 9;
        assert!(matches!(PhraseologyLexicon::new(file), Err(LexiconError::Version(9))));
        let mut file = PhraseologyLexicon::builtin().file().clone();
        file.airline_designators.clear();
        assert!(PhraseologyLexicon::new(file).is_err());
        let mut file = PhraseologyLexicon::builtin().file().clone();
        file.slot_patterns.insert(
            "bad".into(),
            SlotPattern::Digits { min_len: 4, max_len: 2, decimal: false, suffix: vec![] },
        );
        assert!(PhraseologyLexicon::new(file).is_err());
    }

    #[test]
    fn file_round_trips() {
        let lex = PhraseologyLexicon::builtin();
        let json = serde_json::to_string(lex.file()).unwrap();
        let again = PhraseologyLexicon::from_json(&json).unwrap();
        assert_eq!(again.file(), lex.file());
    }
}
