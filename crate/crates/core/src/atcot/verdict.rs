use serde::{Deserialize, Serialize};

use crate::corpus::OpenLabel;

/// Slot as reported by the model: no character span.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VerdictSlot {
    pub name: String,
    pub value: String,
}

impl VerdictSlot {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmVerdict {
    pub intent_instruction: String,
    pub slots_instruction: Vec<VerdictSlot>,
    pub intent_readback: String,
    pub slots_readback: Vec<VerdictSlot>,
    pub label: OpenLabel,
    pub explanation: String,
    pub parse_ok: bool,
    pub raw: String,
}

impl LlmVerdict {
    pub fn fallback(label: OpenLabel, raw: &str, reason: &str) -> Self {
        Self {
            intent_instruction: String::new(),
            slots_instruction: Vec::new(),
            intent_readback: String::new(),
            slots_readback: Vec::new(),
            label,
            explanation: format!("Fell back to the plug-in label {label}: {reason}."),
            parse_ok: false,
            raw: raw.to_string(),
        }
    }
}

/// Wire form of the model's answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictJson {
    #[serde(default)]
    pub intent_1: String,
    #[serde(default)]
    pub slots_1: Vec<VerdictSlot>,
    #[serde(default)]
    pub intent_2: String,
    #[serde(default)]
    pub slots_2: Vec<VerdictSlot>,
    pub label: String,
    #[serde(default)]
    pub explanation: String,
}

/// Byte ranges of balanced `{...}` objects, outermost first, skipping braces inside strings.
fn balanced_objects(raw: &str) -> Vec<std::ops::Range<usize>> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(off) = raw[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(c) => {
                out.push(open..c + 1);
                start = open + 1;
            }
            None => break,
        }
    }
    out
}

/// Extracts the first well-formed object with a recognizable label; never fails.
pub fn parse_verdict(raw: &str, plugin_label: OpenLabel) -> LlmVerdict {
    for range in balanced_objects(raw) {
        let Ok(v) = serde_json::from_str::<VerdictJson>(&raw[range]) else {
            continue;
        };
        let Some(label) = OpenLabel::parse_loose(&v.label) else {
            continue;
        };
        return LlmVerdict {
            intent_instruction: v.intent_1,
            slots_instruction: v.slots_1,
            intent_readback: v.intent_2,
            slots_readback: v.slots_2,
            label,
            explanation: v.explanation,
            parse_ok: true,
            raw: raw.to_string(),
        };
    }
    LlmVerdict::fallback(plugin_label, raw, "no JSON object with a valid label in the model output")
}

/// Final label policy: the parsed label, already fallback-resolved.
pub fn decide_final(verdict: &LlmVerdict) -> OpenLabel {
    verdict.label
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn well_formed_response() {
        let raw = r#"{"intent_1":"climb","slots_1":[{"name":"altitude","value":"8900"}],"intent_2":"climb","slots_2":[{"name":"altitude","value":"9800"}],"label":"incorrect","explanation":"altitude differs"}"#;
        let v = parse_verdict(raw, OpenLabel::Correct);
        assert!(v.parse_ok);
        assert_eq!(v.label, OpenLabel::Incorrect);
        assert_eq!(v.slots_readback, vec![VerdictSlot::new("altitude", "9800")]);
        assert_eq!(decide_final(&v), OpenLabel::Incorrect);
    }

    #[test]
    fn garbage_falls_back() {
        let v = parse_verdict("I think it is fine {not json", OpenLabel::Correct);
        assert!(!v.parse_ok);
        assert_eq!(v.label, OpenLabel::Correct);
        assert!(v.explanation.contains("plug-in"));
        assert_eq!(decide_final(&v), OpenLabel::Correct);
    }

    #[test]
    fn label_amid_prose() {
        let raw = "Reasoning: the readback drops the frequency {braces in prose}.\nAnswer: {\"label\": \"INCOMPLETE\", \"explanation\": \"missing {freq}\"} thanks";
        let v = parse_verdict(raw, OpenLabel::Correct);
        assert!(v.parse_ok);
        assert_eq!(v.label, OpenLabel::Incomplete);
        assert_eq!(v.explanation, "missing {freq}");
    }

    #[test]
    fn invalid_label_is_skipped() {
        let raw = r#"{"label":"maybe"} {"label":"non-standard"}"#;
        assert_eq!(parse_verdict(raw, OpenLabel::Unknown).label, OpenLabel::NonStandard);
        let nested = r#"{"outer": {"label": "correct"}}"#;
        let v = parse_verdict(nested, OpenLabel::Unknown);
        assert!(v.parse_ok);
        assert_eq!(v.label, OpenLabel::Correct);
    }

    proptest! {
        #[test]
        fn never_panics(raw in ".{0,200}") {
            let v = parse_verdict(&raw, OpenLabel::Unknown);
            if !v.parse_ok {
                prop_assert_eq!(v.label, OpenLabel::Unknown);
            }
        }
    }
}
