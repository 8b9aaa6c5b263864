//! Deterministic readback correction and report packaging.
//!
//! The correction operator takes the controller's instruction and moves the
//! callsign to the end, which is the readback form the phraseology expects.
//! It never invents content: every token of the output comes from the
//! instruction.

pub mod lexicon;

use serde::{Deserialize, Serialize};

use crate::atcot::{LlmVerdict, VerdictSlot};
use crate::corpus::{OpenLabel, SemanticAnnotation, Span};
use crate::util::squeeze_whitespace;

pub use lexicon::{
    IntentRule, LexiconError, LexiconFile, PhraseologyLexicon, SlotPattern, CALLSIGN_SLOT,
    LEXICON_FORMAT_VERSION,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CorrectionError {
    #[error("no callsign found in {0:?}")]
    CallsignNotFound(String),
    #[error("report contract violated: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub source_instruction: String,
    pub corrected_readback: String,
    pub callsign: String,
    /// Callsign span in the source instruction; absent when nothing was moved.
    pub moved_span: Option<Span>,
    pub applied: bool,
}

/// Locates the callsign. An annotated callsign slot wins over pattern matching
/// as long as its span really covers its value.
pub fn parse_callsign(
    instruction: &str,
    annotation: Option<&SemanticAnnotation>,
    lexicon: &PhraseologyLexicon,
) -> Result<Span, CorrectionError> {
    if let Some(slot) = annotation.and_then(|a| a.slot(CALLSIGN_SLOT)) {
        if slot.span.slice(instruction) == Some(slot.value.as_str()) {
            return Ok(slot.span);
        }
    }
    lexicon
        .find_callsign(instruction)
        .ok_or_else(|| CorrectionError::CallsignNotFound(instruction.to_string()))
}

/// Moves the callsign of `instruction` to the end, dropping one adjacent `", "` separator.
pub fn reorder_correct(
    instruction: &str,
    annotation: Option<&SemanticAnnotation>,
    lexicon: &PhraseologyLexicon,
) -> Correction {
    let not_applied = || Correction {
        source_instruction: instruction.to_string(),
        corrected_readback: instruction.to_string(),
        callsign: String::new(),
        moved_span: None,
        applied: false,
    };
    let Ok(span) = parse_callsign(instruction, annotation, lexicon) else {
        return not_applied();
    };
    let Some(range) = span.byte_range(instruction) else {
        return not_applied();
    };
    let callsign = instruction[range.clone()].to_string();
    let mut before = &instruction[..range.start];
    let mut after = &instruction[range.end..];
    if let Some(rest) = after.strip_prefix(',') {
        after = rest;
    } else if let Some(rest) = before.trim_end().strip_suffix(',') {
        before = rest;
    }
    let body = squeeze_whitespace(&format!("{before} {after}"));
    let body = body.trim_matches(|c: char| c == ',' || c.is_whitespace());
    let corrected_readback = if body.is_empty() {
        callsign.clone()
    } else {
        format!("{body}, {callsign}")
    };
    Correction {
        source_instruction: instruction.to_string(),
        corrected_readback,
        callsign,
        moved_span: Some(span),
        applied: true,
    }
}

/// Outcome of matching the inferred readback slots against the inferred instruction slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAlignment {
    pub matched: Vec<VerdictSlot>,
    /// `(instruction slot, readback slot)` pairs of the same type with different values.
    pub mismatched: Vec<(VerdictSlot, VerdictSlot)>,
    pub missing: Vec<VerdictSlot>,
    pub extra: Vec<VerdictSlot>,
}

pub fn align_slots(instruction: &[VerdictSlot], readback: &[VerdictSlot]) -> SlotAlignment {
    let mut out = SlotAlignment::default();
    let mut used = vec![false; readback.len()];
    for slot in instruction {
        let exact = readback
            .iter()
            .enumerate()
            .position(|(i, r)| !used[i] && r.name == slot.name && r.value == slot.value);
        if let Some(i) = exact {
            used[i] = true;
            out.matched.push(slot.clone());
            continue;
        }
        let same_type = readback
            .iter()
            .enumerate()
            .position(|(i, r)| !used[i] && r.name == slot.name);
        match same_type {
            Some(i) => {
                used[i] = true;
                out.mismatched.push((slot.clone(), readback[i].clone()));
            }
            None => out.missing.push(slot.clone()),
        }
    }
    out.extra = readback
        .iter()
        .zip(&used)
        .filter(|(_, &u)| !u)
        .map(|(r, _)| r.clone())
        .collect();
    out
}

/// Wall-clock stage latencies in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub embed_ms: f64,
    pub poc_ms: f64,
    pub retrieval_ms: f64,
    pub prompt_ms: f64,
    pub llm_ms: f64,
    pub correction_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub pair_id: String,
    pub label: OpenLabel,
    pub plugin_label: OpenLabel,
    pub parse_ok: bool,
    pub explanation: String,
    pub intent_instruction: String,
    pub slots_instruction: Vec<VerdictSlot>,
    pub intent_readback: String,
    pub slots_readback: Vec<VerdictSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_alignment: Option<SlotAlignment>,
    /// Kept out of the serialized record so verdict files stay reproducible.
    #[serde(skip)]
    pub timings: StageTimings,
}

pub fn correction_required(label: OpenLabel) -> bool {
    label.is_anomaly()
}

pub fn package_report(
    pair_id: &str,
    plugin_label: OpenLabel,
    verdict: &LlmVerdict,
    correction: Option<Correction>,
    timings: StageTimings,
) -> Result<MonitorReport, CorrectionError> {
    let required = correction_required(verdict.label);
    if required != correction.is_some() {
        return Err(CorrectionError::Contract(format!(
            "label {} {} a correction",
            verdict.label,
            if required { "requires" } else { "forbids" }
        )));
    }
    let slot_alignment = required.then(|| align_slots(&verdict.slots_instruction, &verdict.slots_readback));
    Ok(MonitorReport {
        pair_id: pair_id.to_string(),
        label: verdict.label,
        plugin_label,
        parse_ok: verdict.parse_ok,
        explanation: verdict.explanation.clone(),
        intent_instruction: verdict.intent_instruction.clone(),
        slots_instruction: verdict.slots_instruction.clone(),
        intent_readback: verdict.intent_readback.clone(),
        slots_readback: verdict.slots_readback.clone(),
        correction,
        slot_alignment,
        timings,
    })
}

/// Places inferred instruction slots back onto the instruction text so the
/// operator can use an inferred callsign span.
pub fn locate_inferred(instruction: &str, slots: &[VerdictSlot]) -> Option<SemanticAnnotation> {
    let cs: Vec<(String, String)> = slots
        .iter()
        .filter(|s| s.name == CALLSIGN_SLOT)
        .take(1)
        .map(|s| (s.name.clone(), s.value.clone()))
        .collect();
    if cs.is_empty() {
        return None;
    }
    SemanticAnnotation::locate(instruction, "", &cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SlotValue;
    use proptest::prelude::*;

    fn lex() -> &'static PhraseologyLexicon {
        static LEX: std::sync::OnceLock<PhraseologyLexicon> = std::sync::OnceLock::new();
        LEX.get_or_init(PhraseologyLexicon::builtin)
    }

    fn tokens(s: &str) -> Vec<String> {
        let mut t: Vec<String> = s
            .split_whitespace()
            .map(|w| w.trim_matches(',').to_string())
            .filter(|w| !w.is_empty())
            .collect();
        t.sort();
        t
    }

    #[test]
    fn annotated_callsign_passes_through() {
        let text = "CCA1234, climb maintain 8900";
        let ann = SemanticAnnotation {
            intent: "climb".into(),
            slots: vec![SlotValue { name: "callsign".into(), value: "CCA1234".into(), span: Span::new(0, 7) }],
        };
        assert_eq!(parse_callsign(text, Some(&ann), lex()), Ok(Span::new(0, 7)));
    }

    #[test]
    fn telephony_callsign_from_lexicon() {
        let text = "Air China 1234 descend 3000";
        let span = parse_callsign(text, None, lex()).unwrap();
        assert_eq!(span.slice(text), Some("Air China 1234"));
    }

    #[test]
    fn no_callsign_is_typed_error() {
        assert!(matches!(
            parse_callsign("climb and maintain", None, lex()),
            Err(CorrectionError::CallsignNotFound(_))
        ));
        let c = reorder_correct("climb and maintain", None, lex());
        assert!(!c.applied);
        assert_eq!(c.corrected_readback, "climb and maintain");
    }

    #[test]
    fn leading_callsign_moves_to_end() {
        let c = reorder_correct("CCA1234, climb maintain 8900 meters", None, lex());
        assert!(c.applied);
        assert_eq!(c.corrected_readback, "climb maintain 8900 meters, CCA1234");
        assert_eq!(c.callsign, "CCA1234");
        let again = reorder_correct(&c.corrected_readback, None, lex());
        assert_eq!(again.corrected_readback, c.corrected_readback);
    }

    #[test]
    fn terminal_callsign_unchanged() {
        let text = "climb maintain 8900 meters, CCA1234";
        assert_eq!(reorder_correct(text, None, lex()).corrected_readback, text);
    }

    #[test]
    fn alignment_buckets() {
        let s = |n: &str, v: &str| VerdictSlot { name: n.into(), value: v.into() };
        let a = align_slots(
            &[s("callsign", "CCA1"), s("altitude", "8900"), s("frequency", "118.1")],
            &[s("altitude", "9800"), s("callsign", "CCA1"), s("runway", "36L")],
        );
        assert_eq!(a.matched, vec![s("callsign", "CCA1")]);
        assert_eq!(a.mismatched, vec![(s("altitude", "8900"), s("altitude", "9800"))]);
        assert_eq!(a.missing, vec![s("frequency", "118.1")]);
        assert_eq!(a.extra, vec![s("runway", "36L")]);
    }

    fn verdict(label: OpenLabel) -> LlmVerdict {
        LlmVerdict::fallback(label, "raw", "test")
    }

    #[test]
    fn report_contract() {
        let t = StageTimings::default();
        let r = package_report("p", OpenLabel::Correct, &verdict(OpenLabel::Correct), None, t).unwrap();
        assert!(r.correction.is_none());
        let r = package_report("p", OpenLabel::Unknown, &verdict(OpenLabel::Unknown), None, t).unwrap();
        assert!(r.correction.is_none());
        assert!(!r.explanation.is_empty());
        let c = reorder_correct("CCA1, climb to 900 meters", None, lex());
        let r = package_report("p", OpenLabel::Correct, &verdict(OpenLabel::Incorrect), Some(c.clone()), t).unwrap();
        assert_eq!(r.correction.unwrap().corrected_readback, "climb to 900 meters, CCA1");
        assert!(package_report("p", OpenLabel::Correct, &verdict(OpenLabel::Incorrect), None, t).is_err());
        assert!(package_report("p", OpenLabel::Correct, &verdict(OpenLabel::Correct), Some(c), t).is_err());
    }

    fn instruction_strategy() -> impl Strategy<Value = String> {
        let callsign = prop_oneof![
            (prop::sample::select(vec!["CCA", "CES", "CSN"]), 1u32..9999).prop_map(|(d, n)| format!("{d}{n}")),
            (prop::sample::select(vec!["Air China", "Hainan"]), 1u32..9999).prop_map(|(d, n)| format!("{d} {n}")),
        ];
        let clause = prop::sample::select(vec![
            "climb and maintain 8900 meters",
            "turn left heading 270",
            "contact tower 118.1",
            "runway 36L cleared for takeoff",
        ]);
        (callsign, prop::collection::vec(clause, 1..3), 0usize..3).prop_map(|(cs, clauses, pos)| {
            let mut parts: Vec<String> = clauses.into_iter().map(String::from).collect();
            let at = pos.min(parts.len());
            parts.insert(at, cs);
            parts.join(", ")
        })
    }

    proptest! {
        #[test]
        fn operator_is_idempotent(text in instruction_strategy()) {
            let once = reorder_correct(&text, None, lex());
            prop_assert!(once.applied);
            let twice = reorder_correct(&once.corrected_readback, None, lex());
            prop_assert_eq!(&twice.corrected_readback, &once.corrected_readback);
        }

        #[test]
        fn operator_preserves_tokens(text in instruction_strategy()) {
            let c = reorder_correct(&text, None, lex());
            prop_assert_eq!(tokens(&c.corrected_readback), tokens(&text));
            prop_assert!(c.corrected_readback.ends_with(&c.callsign));
        }

        #[test]
        fn annotation_dominates(text in instruction_strategy()) {
            let ann = lex().annotate(&text);
            let slot = ann.slot(CALLSIGN_SLOT).unwrap().clone();
            prop_assert_eq!(parse_callsign(&text, Some(&ann), lex()).unwrap(), slot.span);
        }
    }
}
