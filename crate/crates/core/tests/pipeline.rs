mod common;

use std::sync::{Arc, OnceLock};

use scope_core::atcot::{decide_final, enrich_support, parse_verdict, render_prompt, CorpusAnnotations, PromptBundle, PromptTemplate, RenderOptions};
use scope_core::corpus::{load_corpus, OpenLabel, Split, UtterancePair};
use scope_core::correction::{package_report, reorder_correct, PhraseologyLexicon, StageTimings};
use scope_core::dear::{SupportExample, SupportSet};
use scope_core::llm::{stub_complete, StubPolicy};
use scope_core::pipeline::{self, evaluate_reports, GridSpec, Overrides, PipelineConfig, PipelineError};

fn prepared() -> &'static PipelineConfig {
    static CFG: OnceLock<PipelineConfig> = OnceLock::new();
    CFG.get_or_init(|| {
        let cfg = common::config_in(&common::scratch("pipeline-shared"));
        common::prepare(&cfg);
        cfg
    })
}

fn lexicon() -> &'static PhraseologyLexicon {
    static LEX: OnceLock<PhraseologyLexicon> = OnceLock::new();
    LEX.get_or_init(PhraseologyLexicon::builtin)
}

#[test]
fn zero_shot_prompts_carry_no_examples() {
    let base = prepared();
    let out = common::scratch("pipeline-zero-shot");
    let overrides = Overrides {
        n_shot: Some(0),
        ..Default::default()
    };
    let (cfg, _) = common::infer_and_evaluate(base, &overrides, &out);
    let text = std::fs::read_to_string(cfg.paths.output_file("prompts.jsonl")).unwrap();
    let prompts: Vec<PromptBundle> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(prompts.len(), 150);
    for p in &prompts {
        assert_eq!(p.example_count, 0);
        assert!(!p.user_text.contains("Example 1"), "{}", p.pair_id);
        assert!(p.user_text.starts_with("Test pair ["));
    }
}

#[test]
fn gold_verdicts_score_perfectly() {
    let cfg = prepared();
    let corpus = load_corpus(&cfg.paths.corpus).unwrap();
    let reports: Vec<_> = corpus
        .iter()
        .filter(|p| p.split == Split::Test)
        .map(|p| {
            let gold = p.label.unwrap();
            let mut verdict = parse_verdict(&format!(r#"{{"label": "{gold}"}}"#), OpenLabel::Unknown);
            let ai = p.annotation_instruction.as_ref().unwrap();
            let ar = p.annotation_readback.as_ref().unwrap();
            verdict.intent_instruction = ai.intent.clone();
            verdict.intent_readback = ar.intent.clone();
            let slots = |a: &scope_core::corpus::SemanticAnnotation| {
                a.slots.iter().map(|s| scope_core::atcot::VerdictSlot::new(&s.name, &s.value)).collect()
            };
            verdict.slots_instruction = slots(ai);
            verdict.slots_readback = slots(ar);
            let correction = gold.is_anomaly().then(|| reorder_correct(&p.instruction, Some(ai), lexicon()));
            package_report(&p.id, gold, &verdict, correction, StageTimings::default()).unwrap()
        })
        .collect();
    let m = evaluate_reports(&reports, &corpus).unwrap();
    assert_eq!(m.samples, 150);
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.macro_f1, 1.0);
    assert_eq!(m.hm, 1.0);
    assert_eq!((m.intent_acc, m.slot_f1, m.sfa), (1.0, 1.0, 1.0));
    assert_eq!(m.correction_rate_overall, 1.0);
}

#[test]
fn single_point_grid_yields_one_row() {
    let mut cfg = prepared().clone();
    cfg.paths.output = common::scratch("pipeline-grid");
    cfg.grid = GridSpec {
        kappa: vec![8],
        rho: vec![9],
        alpha: vec![0.3],
        workers: Some(2),
        ..GridSpec::default()
    };
    let rows = pipeline::cmd_grid_search(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].kappa, rows[0].rho, rows[0].alpha), (8, 9, 0.3));
    assert!((0.0..=1.0).contains(&rows[0].accuracy));
    assert!(cfg.paths.output_file("grid.json").exists());
    assert!(pipeline::grid_table(&rows).lines().count() == 2);
}

#[test]
fn live_grid_search_needs_opt_in() {
    let mut cfg = prepared().clone();
    cfg.llm.stub = false;
    cfg.grid.kappa = vec![8];
    assert!(matches!(pipeline::cmd_grid_search(&cfg), Err(PipelineError::Config(_))));
}

#[test]
fn missing_artifacts_name_the_step() {
    let cfg = common::config_in(&common::scratch("pipeline-missing"));
    let err = pipeline::cmd_train(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Missing { .. }), "{err}");
    assert!(pipeline::cmd_evaluate(&cfg).is_err());
}

#[test]
fn config_paths_resolve_against_the_file() {
    let dir = common::scratch("pipeline-config");
    std::fs::create_dir_all(dir.join("conf")).unwrap();
    let path = dir.join("conf/run.json");
    std::fs::write(&path, r#"{"seed": 7, "paths": {"corpus": "../data/c.jsonl", "output": "out"}}"#).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.paths.corpus, dir.join("conf/../data/c.jsonl"));
    assert_eq!(cfg.paths.output, dir.join("conf/out"));
    assert_eq!(cfg.paths.bank, dir.join("conf/out/bank.bin"));
    assert_eq!(cfg.seed, 7);
    assert!(PipelineConfig::load(dir.join("nope.json")).is_err());
}

fn annotated(id: &str, instruction: &str, readback: &str, label: OpenLabel) -> UtterancePair {
    let mut p = UtterancePair::new(id, instruction, readback, Some(label), Split::Train);
    p.annotation_instruction = Some(lexicon().annotate(instruction));
    p.annotation_readback = Some(lexicon().annotate(readback));
    p
}

/// Prompt for `test` with one annotated support example and the given plug-in label.
fn prompt_for(test: &UtterancePair, plugin: OpenLabel) -> PromptBundle {
    let shot = annotated(
        "shot",
        "CES5210, climb and maintain 6000 meters",
        "climb and maintain 6000 meters, CES5210",
        OpenLabel::Correct,
    );
    let support = SupportSet {
        n: 1,
        examples: vec![SupportExample {
            pair: shot,
            plugin_label: OpenLabel::Correct,
            gold_label: OpenLabel::Correct,
            anchor_similarity: 0.5,
            class_bucket: OpenLabel::Correct,
        }],
    };
    let enriched = enrich_support(&support, &CorpusAnnotations).unwrap();
    render_prompt(&enriched, test, plugin, &PromptTemplate::builtin(), &RenderOptions::default()).unwrap()
}

fn stub() -> StubPolicy {
    StubPolicy::new(Arc::new(lexicon().clone()), 42)
}

#[test]
fn stub_overrides_a_wrong_plugin_label() {
    let test = annotated(
        "t",
        "CCA1234, climb and maintain 8900 meters",
        "climb and maintain 9800 meters, CCA1234",
        OpenLabel::Incorrect,
    );
    let raw = stub_complete(&stub(), &prompt_for(&test, OpenLabel::Correct));
    let verdict = parse_verdict(&raw, OpenLabel::Correct);
    assert!(verdict.parse_ok);
    assert_eq!(decide_final(&verdict), OpenLabel::Incorrect);
    assert!(verdict.explanation.contains("altitude"), "{}", verdict.explanation);
}

#[test]
fn stub_recovers_provenance_labels() {
    let cfg = prepared();
    let corpus = load_corpus(&cfg.paths.corpus).unwrap();
    let policy = stub();
    let mut checked = 0;
    for pair in corpus.iter().filter(|p| p.split != Split::Calibration) {
        let gold = pair.label.unwrap();
        if gold == OpenLabel::Unknown {
            continue;
        }
        if let Some(prov) = &pair.provenance {
            assert_eq!(prov.mutation, gold, "{}", pair.id);
        }
        let verdict = parse_verdict(&stub_complete(&policy, &prompt_for(pair, OpenLabel::Correct)), OpenLabel::Correct);
        assert_eq!(verdict.label, gold, "{}: {} | {}", pair.id, pair.instruction, pair.readback);
        checked += 1;
    }
    assert_eq!(checked, 458);
}
