//! Semi-synthetic anomaly generation from Correct readbacks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, OpenLabel, Provenance, SemanticAnnotation, SlotValue, UtterancePair};
use crate::correction::CALLSIGN_SLOT;
use crate::util::{keyed_rng, squeeze_whitespace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisRecipe {
    pub seed: u64,
    /// Fraction of the input turned into each anomalous class; the rest stays Correct.
    pub ratios: BTreeMap<OpenLabel, f64>,
    pub safety_critical_slots: Vec<String>,
    /// Replacement values per slot type for Incorrect mutations.
    #[serde(default = "default_value_sets")]
    pub value_sets: BTreeMap<String, Vec<String>>,
    /// Phrase rewrites for NonStandard mutations.
    #[serde(default = "default_substitutions")]
    pub substitutions: Vec<Substitution>,
}

impl Default for SynthesisRecipe {
    fn default() -> Self {
        // Training-set class shares of the reference corpus: 622, 376 and 159 of 2456.
        let ratios = BTreeMap::from([
            (OpenLabel::Incorrect, 622.0 / 2456.0),
            (OpenLabel::Incomplete, 376.0 / 2456.0),
            (OpenLabel::NonStandard, 159.0 / 2456.0),
        ]);
        Self {
            seed: 42,
            ratios,
            safety_critical_slots: ["altitude", "heading", "speed", "frequency", "runway"]
                .map(String::from)
                .to_vec(),
            value_sets: default_value_sets(),
            substitutions: default_substitutions(),
        }
    }
}

pub fn default_value_sets() -> BTreeMap<String, Vec<String>> {
    let altitude = [
        600, 900, 1200, 1500, 1800, 2100, 2400, 2700, 3000, 3300, 3600, 3900, 4200, 4500, 4800,
        5100, 5400, 5700, 6000, 6300, 6600, 6900, 7200, 7500, 7800, 8100, 8400, 8900, 9200, 9500,
        9800, 10100, 10400, 10700, 11000, 11300, 11600, 11900, 12200, 12500,
    ]
    .iter()
    .map(|v| v.to_string())
    .collect();
    let heading = (1..=36).map(|h| format!("{:03}", h * 10)).collect();
    let speed = (18..=32).map(|s| (s * 10).to_string()).collect();
    let frequency = [
        "118.1", "118.25", "119.1", "119.35", "120.3", "121.9", "123.75", "124.6", "125.2",
        "126.45", "127.8", "128.05",
    ]
    .map(String::from)
    .to_vec();
    let runway = ["01", "02L", "02R", "09", "17", "18L", "18R", "19", "27", "35", "36L", "36R"]
        .map(String::from)
        .to_vec();
    BTreeMap::from([
        ("altitude".to_string(), altitude),
        ("heading".to_string(), heading),
        ("speed".to_string(), speed),
        ("frequency".to_string(), frequency),
        ("runway".to_string(), runway),
    ])
}

pub fn default_substitutions() -> Vec<Substitution> {
    [
        ("climb and maintain", "going up to"),
        ("climb maintain", "going up to"),
        ("climb to", "going up to"),
        ("descend and maintain", "coming down to"),
        ("descend maintain", "coming down to"),
        ("descend to", "coming down to"),
        ("reduce speed", "slowing to"),
        ("increase speed", "speeding up to"),
        ("contact", "over to"),
        ("cleared for takeoff", "rolling"),
        ("cleared to land", "landing"),
        ("line up and wait", "lining up"),
        ("line up wait", "lining up"),
    ]
    .iter()
    .map(|(f, t)| Substitution {
        from: f.to_string(),
        to: t.to_string(),
    })
    .collect()
}

impl SynthesisRecipe {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut total = 0.0;
        for (label, ratio) in &self.ratios {
            if matches!(label, OpenLabel::Correct | OpenLabel::Unknown) {
                return Err(CorpusError::Recipe(format!("ratio given for {label}")));
            }
            if !(0.0..=1.0).contains(ratio) {
                return Err(CorpusError::Recipe(format!("ratio {ratio} for {label} out of [0, 1]")));
            }
            total += ratio;
        }
        if total > 1.0 + 1e-12 {
            return Err(CorpusError::Recipe(format!("ratios sum to {total} > 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub id: String,
    pub requested: OpenLabel,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthesisOutput {
    /// Input order; each pair is either kept Correct or replaced by its mutation.
    pub pairs: Vec<UtterancePair>,
    pub skipped: Vec<SkippedPair>,
}

pub fn synthesize_anomalies(
    correct_pairs: &[UtterancePair],
    recipe: &SynthesisRecipe,
) -> Result<SynthesisOutput, CorpusError> {
    recipe.validate()?;
    for pair in correct_pairs {
        if pair.label != Some(OpenLabel::Correct) {
            return Err(CorpusError::Precondition {
                id: pair.id.clone(),
                reason: "source pair is not labelled correct".into(),
            });
        }
        if pair.annotation_readback.as_ref().is_none_or(|a| a.slots.is_empty()) {
            return Err(CorpusError::Precondition {
                id: pair.id.clone(),
                reason: "source readback has no annotated slots".into(),
            });
        }
    }

    let n = correct_pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(recipe.seed));
    let mut assignment: Vec<Option<OpenLabel>> = vec![None; n];
    let mut cursor = 0;
    for label in [OpenLabel::Incorrect, OpenLabel::Incomplete, OpenLabel::NonStandard] {
        let ratio = recipe.ratios.get(&label).copied().unwrap_or(0.0);
        let count = ((ratio * n as f64).round() as usize).min(n - cursor);
        for &idx in &order[cursor..cursor + count] {
            assignment[idx] = Some(label);
        }
        cursor += count;
    }

    let mut out = SynthesisOutput::default();
    for (pair, target) in correct_pairs.iter().zip(assignment) {
        let Some(target) = target else {
            out.pairs.push(pair.clone());
            continue;
        };
        let mut rng = keyed_rng(recipe.seed, &pair.id);
        let result = match target {
            OpenLabel::Incorrect => mutate_incorrect(pair, recipe, &mut rng),
            OpenLabel::Incomplete => mutate_incomplete(pair, recipe, &mut rng),
            OpenLabel::NonStandard => mutate_nonstandard(pair, recipe, &mut rng),
            _ => unreachable!("only anomalous classes are assigned"),
        };
        match result {
            Ok(mutated) => out.pairs.push(mutated),
            Err(reason) => {
                out.skipped.push(SkippedPair {
                    id: pair.id.clone(),
                    requested: target,
                    reason,
                });
                out.pairs.push(pair.clone());
            }
        }
    }
    Ok(out)
}

fn derived(
    pair: &UtterancePair,
    label: OpenLabel,
    readback: String,
    annotation: SemanticAnnotation,
    provenance: Provenance,
) -> UtterancePair {
    UtterancePair {
        id: format!("{}-{}", pair.id, label.as_str()),
        instruction: pair.instruction.clone(),
        readback,
        label: Some(label),
        split: pair.split,
        annotation_instruction: pair.annotation_instruction.clone(),
        annotation_readback: Some(annotation),
        provenance: Some(provenance),
    }
}

fn provenance(pair: &UtterancePair, mutation: OpenLabel) -> Provenance {
    Provenance {
        source_id: pair.id.clone(),
        source_readback: pair.readback.clone(),
        mutation,
        slot: None,
        old: None,
        new: None,
        detail: None,
    }
}

fn readback_slots(pair: &UtterancePair) -> &[SlotValue] {
    pair.annotation_readback
        .as_ref()
        .map(|a| a.slots.as_slice())
        .unwrap_or(&[])
}

fn mutate_incorrect(
    pair: &UtterancePair,
    recipe: &SynthesisRecipe,
    rng: &mut ChaCha8Rng,
) -> Result<UtterancePair, String> {
    let slots = readback_slots(pair);
    let candidates: Vec<(usize, Vec<&String>)> = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| recipe.safety_critical_slots.contains(&s.name))
        .filter_map(|(i, s)| {
            let set = recipe.value_sets.get(&s.name)?;
            let alts: Vec<&String> = set.iter().filter(|v| **v != s.value).collect();
            (!alts.is_empty()).then_some((i, alts))
        })
        .collect();
    if candidates.is_empty() {
        return Err("no safety-critical slot with an alternative value".into());
    }
    let (slot_idx, alts) = &candidates[rng.gen_range(0..candidates.len())];
    let old = &slots[*slot_idx];
    let same_len: Vec<&&String> = alts
        .iter()
        .filter(|v| v.chars().count() == old.value.chars().count())
        .collect();
    let new_value = if same_len.is_empty() {
        alts[rng.gen_range(0..alts.len())].clone()
    } else {
        (*same_len[rng.gen_range(0..same_len.len())]).clone()
    };

    let range = old
        .span
        .byte_range(&pair.readback)
        .ok_or("slot span out of bounds")?;
    let mut readback = pair.readback.clone();
    readback.replace_range(range, &new_value);

    let delta = new_value.chars().count() as isize - old.value.chars().count() as isize;
    let mut annotation = pair.annotation_readback.clone().unwrap_or_default();
    for (i, slot) in annotation.slots.iter_mut().enumerate() {
        if i == *slot_idx {
            slot.value = new_value.clone();
            slot.span.end = (slot.span.end as isize + delta) as usize;
        } else if slot.span.start >= old.span.end {
            slot.span.start = (slot.span.start as isize + delta) as usize;
            slot.span.end = (slot.span.end as isize + delta) as usize;
        }
    }
    let mut prov = provenance(pair, OpenLabel::Incorrect);
    prov.slot = Some(old.name.clone());
    prov.old = Some(old.value.clone());
    prov.new = Some(new_value);
    Ok(derived(pair, OpenLabel::Incorrect, readback, annotation, prov))
}

/// Deletion-only cleanup after removing a span: squeezes spaces and drops
/// separators left dangling.
fn tidy_after_removal(text: &str) -> String {
    let mut s = squeeze_whitespace(text);
    while s.contains(" ,") || s.contains(",,") {
        s = s.replace(" ,", ",").replace(",,", ",");
    }
    s.trim_matches(|c: char| c == ',' || c.is_whitespace()).to_string()
}

fn mutate_incomplete(
    pair: &UtterancePair,
    recipe: &SynthesisRecipe,
    rng: &mut ChaCha8Rng,
) -> Result<UtterancePair, String> {
    let slots = readback_slots(pair);
    let candidates: Vec<usize> = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| recipe.safety_critical_slots.contains(&s.name))
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err("no required slot to remove".into());
    }
    let removed = &slots[candidates[rng.gen_range(0..candidates.len())]];
    let range = removed
        .span
        .byte_range(&pair.readback)
        .ok_or("slot span out of bounds")?;
    let mut raw = pair.readback.clone();
    raw.replace_range(range, "");
    let readback = tidy_after_removal(&raw);
    if readback.is_empty() {
        return Err("removing the slot leaves an empty readback".into());
    }
    let remaining: Vec<(String, String)> = slots
        .iter()
        .filter(|s| s.span != removed.span)
        .map(|s| (s.name.clone(), s.value.clone()))
        .collect();
    let intent = pair
        .annotation_readback
        .as_ref()
        .map(|a| a.intent.clone())
        .unwrap_or_default();
    let annotation = SemanticAnnotation::locate(&readback, &intent, &remaining)
        .ok_or("remaining slots could not be relocated")?;
    let mut prov = provenance(pair, OpenLabel::Incomplete);
    prov.slot = Some(removed.name.clone());
    prov.old = Some(removed.value.clone());
    Ok(derived(pair, OpenLabel::Incomplete, readback, annotation, prov))
}

/// Finds `needle` in `text` at word boundaries, returning its byte offset.
fn find_phrase(text: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(off) = text[from..].find(needle) {
        let start = from + off;
        let end = start + needle.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(start);
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    None
}

enum NonStandardEdit<'a> {
    CallsignFirst(&'a SlotValue),
    Substitute(&'a Substitution, usize),
}

fn mutate_nonstandard(
    pair: &UtterancePair,
    recipe: &SynthesisRecipe,
    rng: &mut ChaCha8Rng,
) -> Result<UtterancePair, String> {
    let slots = readback_slots(pair);
    let text = &pair.readback;
    let mut options: Vec<NonStandardEdit> = Vec::new();
    if let Some(cs) = slots.iter().find(|s| s.name == CALLSIGN_SLOT) {
        let range = cs.span.byte_range(text).ok_or("callsign span out of bounds")?;
        let terminal = text[range.end..].trim().is_empty();
        let has_body = !text[..range.start].trim_end_matches([',', ' ']).is_empty();
        if terminal && has_body {
            options.push(NonStandardEdit::CallsignFirst(cs));
        }
    }
    for sub in &recipe.substitutions {
        if let Some(at) = find_phrase(text, &sub.from) {
            options.push(NonStandardEdit::Substitute(sub, at));
        }
    }
    if options.is_empty() {
        return Err("no reorderable callsign or substitutable phrase".into());
    }

    let (readback, detail) = match &options[rng.gen_range(0..options.len())] {
        NonStandardEdit::CallsignFirst(cs) => {
            let range = cs.span.byte_range(text).expect("checked above");
            let body = text[..range.start].trim_end_matches([',', ' ']);
            (format!("{}, {}", cs.value, body), "callsign_first".to_string())
        }
        NonStandardEdit::Substitute(sub, at) => {
            let mut s = text.clone();
            s.replace_range(*at..*at + sub.from.len(), &sub.to);
            (s, format!("substitute:{}->{}", sub.from, sub.to))
        }
    };
    let values: Vec<(String, String)> = slots
        .iter()
        .map(|s| (s.name.clone(), s.value.clone()))
        .collect();
    let intent = pair
        .annotation_readback
        .as_ref()
        .map(|a| a.intent.clone())
        .unwrap_or_default();
    let annotation = SemanticAnnotation::locate(&readback, &intent, &values)
        .ok_or("slot values not preserved by the rewrite")?;
    let mut prov = provenance(pair, OpenLabel::NonStandard);
    prov.detail = Some(detail);
    Ok(derived(pair, OpenLabel::NonStandard, readback, annotation, prov))
}
