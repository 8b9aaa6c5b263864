use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::atcot::{PromptBundle, VerdictJson, VerdictSlot};
use crate::corpus::{OpenLabel, SlotValue};
use crate::correction::{PhraseologyLexicon, CALLSIGN_SLOT};
use crate::util::squeeze_whitespace;

/// Phrases that signal non-standard phraseology in a readback.
pub fn default_markers() -> Vec<String> {
    [
        "going up to",
        "coming down to",
        "slowing to",
        "speeding up to",
        "over to",
        "rolling",
        "landing",
        "lining up",
    ]
    .map(String::from)
    .to_vec()
}

/// Deterministic rule oracle standing in for the LLM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubPolicy {
    #[serde(skip, default = "builtin_lexicon")]
    pub lexicon: Arc<PhraseologyLexicon>,
    pub nonstandard_markers: Vec<String>,
    pub seed: u64,
}

fn builtin_lexicon() -> Arc<PhraseologyLexicon> {
    Arc::new(PhraseologyLexicon::builtin())
}

impl StubPolicy {
    pub fn new(lexicon: Arc<PhraseologyLexicon>, seed: u64) -> Self {
        Self {
            lexicon,
            nonstandard_markers: default_markers(),
            seed,
        }
    }
}

struct TestBlock {
    instruction: String,
    readback: String,
    plugin: Option<OpenLabel>,
    example_semantics: bool,
}

fn line_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key).map(str::trim)
}

/// The test block is the last `Instruction:` / `Readback:` pair in the user text.
fn parse_test_block(user_text: &str) -> Option<TestBlock> {
    let lines: Vec<&str> = user_text.lines().collect();
    let instr_at = lines.iter().rposition(|l| l.starts_with("Instruction: "))?;
    let rb_at = instr_at + lines[instr_at..].iter().position(|l| l.starts_with("Readback: "))?;
    let plugin = lines[rb_at..]
        .iter()
        .find_map(|l| line_value(l, "Plug-in label:"))
        .and_then(OpenLabel::parse_loose);
    Some(TestBlock {
        instruction: line_value(lines[instr_at], "Instruction:")?.to_string(),
        readback: line_value(lines[rb_at], "Readback:")?.to_string(),
        plugin,
        example_semantics: lines[..instr_at].iter().any(|l| l.starts_with("Instruction slots: ")),
    })
}

fn slot_key(lex: &PhraseologyLexicon, slot: &SlotValue) -> String {
    if slot.name == CALLSIGN_SLOT {
        lex.canonical_callsign(&slot.value)
            .unwrap_or_else(|| slot.value.replace(' ', "").to_uppercase())
    } else {
        squeeze_whitespace(&slot.value)
    }
}

fn by_type(lex: &PhraseologyLexicon, slots: &[SlotValue]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in slots {
        out.entry(s.name.clone()).or_default().push(slot_key(lex, s));
    }
    out
}

fn contains_phrase(text: &str, phrase: &str) -> bool {
    let text = text.to_lowercase();
    let phrase = phrase.to_lowercase();
    text.match_indices(&phrase).any(|(at, _)| {
        let before = text[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = text[at + phrase.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        before && after
    })
}

fn operational(slots: &[SlotValue]) -> Vec<&SlotValue> {
    slots.iter().filter(|s| s.name != CALLSIGN_SLOT).collect()
}

fn rule_label(policy: &StubPolicy, instruction: &str, readback: &str) -> (OpenLabel, String) {
    let lex = &policy.lexicon;
    let si = lex.extract_slots(instruction);
    let sr = lex.extract_slots(readback);
    if operational(&si).is_empty() {
        return (
            OpenLabel::Unknown,
            "The instruction carries no operational slot, so the exchange is not a clearance and its readback.".into(),
        );
    }
    let ti = by_type(lex, &si);
    let tr = by_type(lex, &sr);

    for (name, want) in &ti {
        if let Some(got) = tr.get(name) {
            if let Some(bad) = got.iter().find(|v| !want.contains(v)) {
                return (
                    OpenLabel::Incorrect,
                    format!("Readback {name} {bad} does not match the instructed {name} {}.", want.join("/")),
                );
            }
        }
    }
    for (name, want) in &ti {
        let got = tr.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let mut remaining = got.to_vec();
        for v in want {
            match remaining.iter().position(|g| g == v) {
                Some(i) => {
                    remaining.remove(i);
                }
                None => {
                    return (
                        OpenLabel::Incomplete,
                        format!("The instructed {name} {v} is missing from the readback."),
                    )
                }
            }
        }
    }

    if let Some(m) = policy
        .nonstandard_markers
        .iter()
        .find(|m| contains_phrase(readback, m))
    {
        return (
            OpenLabel::NonStandard,
            format!("All slots match, but the readback uses the non-standard phrase \"{m}\"."),
        );
    }
    let order_i: Vec<&str> = operational(&si).iter().map(|s| s.name.as_str()).collect();
    let order_r: Vec<&str> = operational(&sr).iter().map(|s| s.name.as_str()).collect();
    if order_i != order_r {
        return (
            OpenLabel::NonStandard,
            "All slots match, but the readback reorders the instructed elements.".into(),
        );
    }
    if let Some(cs) = sr.iter().find(|s| s.name == CALLSIGN_SLOT) {
        let tail_start = cs.span.byte_range(readback).map_or(readback.len(), |r| r.end);
        if !readback[tail_start..].trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation()).is_empty() {
            return (
                OpenLabel::NonStandard,
                format!("All slots match, but the callsign {} is not placed at the end of the readback.", cs.value),
            );
        }
    }
    (
        OpenLabel::Correct,
        format!(
            "Every instructed slot ({}) is read back with the same value in standard order.",
            order_i.join(", ")
        ),
    )
}

fn verdict_slots(slots: Vec<SlotValue>) -> Vec<VerdictSlot> {
    slots.into_iter().map(|s| VerdictSlot::new(s.name, s.value)).collect()
}

/// Pure function of `(policy, bundle)`: labels the test pair by slot rules and
/// answers in the required JSON schema.
pub fn stub_complete(policy: &StubPolicy, bundle: &PromptBundle) -> String {
    let Some(block) = parse_test_block(&bundle.user_text) else {
        let v = VerdictJson {
            label: OpenLabel::Unknown.as_str().into(),
            explanation: "The test instruction and readback could not be extracted from the prompt.".into(),
            ..Default::default()
        };
        return serde_json::to_string(&v).expect("verdict serializes");
    };
    let lex = &policy.lexicon;
    let ai = lex.annotate(&block.instruction);
    let ar = lex.annotate(&block.readback);

    let (label, explanation) = if block.example_semantics {
        let (rule, why) = rule_label(policy, &block.instruction, &block.readback);
        match (block.plugin, rule) {
            (Some(OpenLabel::Unknown), OpenLabel::Correct | OpenLabel::NonStandard) => (
                OpenLabel::Unknown,
                format!("{why} The plug-in prior marks the exchange as outside the known readback classes."),
            ),
            _ => (rule, why),
        }
    } else {
        match block.plugin {
            Some(p) => (p, format!("Without semantic demonstrations the decision follows the plug-in label {p}.")),
            None if operational(&ai.slots).is_empty() => (
                OpenLabel::Unknown,
                "The instruction carries no operational slot.".into(),
            ),
            None => (OpenLabel::Correct, "The readback appears to repeat the instruction.".into()),
        }
    };
    let v = VerdictJson {
        intent_1: ai.intent,
        slots_1: verdict_slots(ai.slots),
        intent_2: ar.intent,
        slots_2: verdict_slots(ar.slots),
        label: label.as_str().into(),
        explanation,
    };
    serde_json::to_string(&v).expect("verdict serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atcot::{parse_verdict, render_prompt, render_prompt_plain, PromptTemplate, RenderOptions};
    use crate::corpus::{Split, UtterancePair};
    use crate::dear::{SupportExample, SupportSet};

    fn policy() -> StubPolicy {
        StubPolicy::new(builtin_lexicon(), 42)
    }

    fn label(instr: &str, rb: &str, plugin: OpenLabel) -> OpenLabel {
        let lex = PhraseologyLexicon::builtin();
        let mut ex = UtterancePair::new("e1", "CCA1, climb to 900 meters", "climb to 900 meters, CCA1", Some(OpenLabel::Correct), Split::Train);
        ex.annotation_instruction = Some(lex.annotate(&ex.instruction));
        ex.annotation_readback = Some(lex.annotate(&ex.readback));
        let support = SupportSet {
            examples: vec![SupportExample {
                pair: ex,
                plugin_label: OpenLabel::Correct,
                gold_label: OpenLabel::Correct,
                anchor_similarity: 0.5,
                class_bucket: OpenLabel::Correct,
            }],
            n: 1,
        };
        let enriched = crate::atcot::enrich_support(&support, &crate::atcot::CorpusAnnotations).unwrap();
        let test = UtterancePair::new("t", instr, rb, None, Split::Test);
        let b = render_prompt(&enriched, &test, plugin, &PromptTemplate::builtin(), &RenderOptions::default()).unwrap();
        let raw = stub_complete(&policy(), &b);
        assert_eq!(raw, stub_complete(&policy(), &b));
        parse_verdict(&raw, plugin).label
    }

    #[test]
    fn rule_fixtures() {
        use OpenLabel::*;
        let i = "CCA1234, climb and maintain 8900 meters";
        assert_eq!(label(i, "climb and maintain 9800 meters, CCA1234", Correct), Incorrect);
        assert_eq!(label(i, "climb and maintain 8900 meters, CCA1234", Correct), Correct);
        assert_eq!(label(i, "climb and maintain 8900 meters, Air China 1234", Correct), Correct);
        assert_eq!(label(i, "climb and maintain meters, CCA1234", Correct), Incomplete);
        assert_eq!(label(i, "going up to 8900 meters, CCA1234", Correct), NonStandard);
        assert_eq!(label(i, "CCA1234, climb and maintain 8900 meters", Correct), NonStandard);
        assert_eq!(label(i, "climb and maintain 8900 meters, CCA1243", Correct), Incorrect);
        let f = "CES501, contact tower 118.1, turn left heading 270";
        assert_eq!(label(f, "turn left heading 270, CES501", Correct), Incomplete);
        assert_eq!(label(f, "turn left heading 270, contact tower 118.1, CES501", Correct), NonStandard);
        assert_eq!(label("CES501, say again", "say again, CES501", Correct), Unknown);
        assert_eq!(label(i, "climb and maintain 8900 meters, CCA1234", Unknown), Unknown);
        assert_eq!(label(i, "climb and maintain 9800 meters, CCA1234", Unknown), Incorrect);
    }

    #[test]
    fn without_semantics_follows_plugin() {
        let test = UtterancePair::new("t", "CCA1, climb to 900 meters", "climb to 800 meters, CCA1", None, Split::Test);
        let b = render_prompt_plain(&SupportSet::default(), &test, OpenLabel::Correct, &PromptTemplate::builtin(), &RenderOptions::default()).unwrap();
        assert_eq!(parse_verdict(&stub_complete(&policy(), &b), OpenLabel::Unknown).label, OpenLabel::Correct);
    }

    #[test]
    fn unparseable_block_is_unknown() {
        let b = PromptBundle {
            pair_id: "x".into(),
            system_text: String::new(),
            user_text: "nothing here".into(),
            example_count: 0,
            plugin_label: OpenLabel::Correct,
            plugin_shown: true,
            template_version: "v".into(),
        };
        let v = parse_verdict(&stub_complete(&policy(), &b), OpenLabel::Correct);
        assert!(v.parse_ok);
        assert_eq!(v.label, OpenLabel::Unknown);
        assert!(v.explanation.contains("could not be extracted"));
    }
}
