//! Template generator for the bundled demo corpus.
//!
//! Correct pairs come from clause templates; anomalies are synthesized from
//! them; Unknown pairs are hand-written and shipped in `data/unknown_pairs.jsonl`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{default_value_sets, synthesize_anomalies, SkippedPair, SynthesisRecipe};
use super::{parse_corpus, CorpusError, OpenLabel, Split, UtterancePair};
use crate::correction::{reorder_correct, PhraseologyLexicon};

const BUILTIN_UNKNOWNS: &str = include_str!("../../../../data/unknown_pairs.jsonl");

const DESIGNATORS: [(&str, &str); 6] = [
    ("CCA", "Air China"),
    ("CES", "China Eastern"),
    ("CSN", "China Southern"),
    ("CHH", "Hainan"),
    ("CXA", "Xiamen Air"),
    ("CSC", "Sichuan"),
];

const FACILITIES: [&str; 4] = ["Beijing Approach", "Shanghai Control", "tower", "ground"];

const SLOT_TYPES: [&str; 5] = ["altitude", "heading", "speed", "frequency", "runway"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub seed: u64,
    pub train_correct: usize,
    pub test_known: usize,
    pub two_clause_rate: f64,
    pub telephony_rate: f64,
    /// Probability that a Correct readback drops the filler word "and".
    pub drop_and_rate: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train_correct: 320,
            test_known: 138,
            two_clause_rate: 0.3,
            telephony_rate: 0.2,
            drop_and_rate: 0.25,
        }
    }
}

struct ClauseBuilder {
    values: std::collections::BTreeMap<String, Vec<String>>,
}

impl ClauseBuilder {
    fn pick<'a>(&'a self, slot: &str, rng: &mut ChaCha8Rng) -> &'a str {
        let set = &self.values[slot];
        &set[rng.gen_range(0..set.len())]
    }

    fn clause(&self, slot: &str, rng: &mut ChaCha8Rng) -> String {
        let v = self.pick(slot, rng);
        match slot {
            "altitude" => {
                let verb = *["climb", "descend"].choose(rng).expect("non-empty");
                let link = *["and maintain", "to"].choose(rng).expect("non-empty");
                format!("{verb} {link} {v} meters")
            }
            "heading" => {
                let side = *["left", "right"].choose(rng).expect("non-empty");
                format!("turn {side} heading {v}")
            }
            "speed" => {
                let verb = *["reduce", "increase", "maintain"].choose(rng).expect("non-empty");
                format!("{verb} speed {v} knots")
            }
            "frequency" => {
                let facility = FACILITIES.choose(rng).expect("non-empty");
                format!("contact {facility} {v}")
            }
            "runway" => match rng.gen_range(0..3) {
                0 => format!("line up and wait runway {v}"),
                1 => format!("runway {v} cleared for takeoff"),
                _ => format!("runway {v} cleared to land"),
            },
            other => unreachable!("no clause template for slot type {other}"),
        }
    }
}

fn callsign(rng: &mut ChaCha8Rng, telephony_rate: f64) -> String {
    let (icao, phone) = DESIGNATORS.choose(rng).expect("non-empty");
    let number = rng.gen_range(100..10_000);
    if rng.gen_bool(telephony_rate) {
        format!("{phone} {number}")
    } else {
        format!("{icao}{number}")
    }
}

/// Template-generated Correct pairs with lexicon annotations on both utterances.
pub fn generate_correct_pairs(
    cfg: &DemoConfig,
    count: usize,
    split: Split,
    id_prefix: &str,
    lexicon: &PhraseologyLexicon,
) -> Vec<UtterancePair> {
    let builder = ClauseBuilder {
        values: default_value_sets(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ crate::util::fnv1a64(id_prefix.as_bytes()));
    (0..count)
        .map(|i| {
            let n_clauses = if rng.gen_bool(cfg.two_clause_rate) { 2 } else { 1 };
            let types: Vec<&str> = SLOT_TYPES.choose_multiple(&mut rng, n_clauses).copied().collect();
            let mut parts = vec![callsign(&mut rng, cfg.telephony_rate)];
            parts.extend(types.iter().map(|t| builder.clause(t, &mut rng)));
            let instruction = parts.join(", ");
            let mut readback = reorder_correct(&instruction, None, lexicon).corrected_readback;
            if rng.gen_bool(cfg.drop_and_rate) {
                readback = readback.replace(" and maintain", " maintain");
            }
            let mut pair = UtterancePair::new(
                format!("{id_prefix}-{:04}", i + 1),
                instruction,
                readback,
                Some(OpenLabel::Correct),
                split,
            );
            pair.annotation_instruction = Some(lexicon.annotate(&pair.instruction));
            pair.annotation_readback = Some(lexicon.annotate(&pair.readback));
            pair
        })
        .collect()
}

/// Hand-written Unknown pairs bundled with the crate, annotated with the lexicon.
pub fn builtin_unknown_pairs(lexicon: &PhraseologyLexicon) -> Result<Vec<UtterancePair>, CorpusError> {
    let mut pairs = parse_corpus(BUILTIN_UNKNOWNS.as_bytes())?;
    for pair in &mut pairs {
        pair.annotation_instruction = Some(lexicon.annotate(&pair.instruction));
        pair.annotation_readback = Some(lexicon.annotate(&pair.readback));
    }
    Ok(pairs)
}

/// Train and test known pairs with synthesized anomalies, followed by the
/// calibration and test Unknown pairs.
pub fn build_demo_corpus(
    cfg: &DemoConfig,
    recipe: &SynthesisRecipe,
    lexicon: &PhraseologyLexicon,
) -> Result<(Vec<UtterancePair>, Vec<SkippedPair>), CorpusError> {
    let mut corpus = Vec::new();
    let mut skipped = Vec::new();
    for (split, count, prefix) in [
        (Split::Train, cfg.train_correct, "train"),
        (Split::Test, cfg.test_known, "test"),
    ] {
        let correct = generate_correct_pairs(cfg, count, split, prefix, lexicon);
        let out = synthesize_anomalies(&correct, recipe)?;
        corpus.extend(out.pairs);
        skipped.extend(out.skipped);
    }
    corpus.extend(builtin_unknown_pairs(lexicon)?);
    Ok((corpus, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::class_distribution;

    #[test]
    fn demo_corpus_shape() {
        let lex = PhraseologyLexicon::builtin();
        let (corpus, skipped) = build_demo_corpus(&DemoConfig::default(), &SynthesisRecipe::default(), &lex).unwrap();
        assert_eq!(corpus.len(), 500);
        assert!(skipped.is_empty(), "{skipped:?}");
        for p in &corpus {
            p.validate().unwrap();
        }
        let d = class_distribution(&corpus);
        assert_eq!(d.split(Split::Train).total, 320);
        assert_eq!(d.split(Split::Train).count(OpenLabel::Unknown), 0);
        assert_eq!(d.split(Split::Train).count(OpenLabel::Incorrect), 81);
        assert_eq!(d.split(Split::Test).total, 150);
        assert_eq!(d.split(Split::Calibration).total, 30);
        let ids: std::collections::HashSet<_> = corpus.iter().map(|p| &p.id).collect();
        assert_eq!(ids.len(), corpus.len());
    }

    #[test]
    fn correct_readbacks_end_with_callsign() {
        let lex = PhraseologyLexicon::builtin();
        for p in generate_correct_pairs(&DemoConfig::default(), 50, Split::Train, "t", &lex) {
            let cs = p.annotation_instruction.as_ref().unwrap().slot("callsign").unwrap().value.clone();
            assert!(p.readback.ends_with(&cs), "{}", p.readback);
            let n_instr = p.annotation_instruction.unwrap().slots.len();
            assert_eq!(p.annotation_readback.unwrap().slots.len(), n_instr);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let lex = PhraseologyLexicon::builtin();
        let a = generate_correct_pairs(&DemoConfig::default(), 20, Split::Test, "x", &lex);
        let b = generate_correct_pairs(&DemoConfig::default(), 20, Split::Test, "x", &lex);
        assert_eq!(a, b);
    }
}
