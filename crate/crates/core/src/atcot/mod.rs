//! Structured chain-of-thought prompting: semantic enrichment of the support
//! set, prompt rendering with the plug-in prior, and verdict parsing.

mod template;
mod verdict;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{OpenLabel, SemanticAnnotation, UtterancePair};
use crate::dear::{SupportExample, SupportSet};

pub use template::{fill, PromptTemplate, REQUIRED_PLACEHOLDERS};
pub use verdict::{decide_final, parse_verdict, LlmVerdict, VerdictJson, VerdictSlot};

/// The JSON object the model must answer with.
pub const OUTPUT_SCHEMA: &str = r#"{"intent_1": str, "slots_1": [{"name": str, "value": str}], "intent_2": str, "slots_2": [{"name": str, "value": str}], "label": str, "explanation": str}"#;

#[derive(Debug, thiserror::Error)]
pub enum AtcotError {
    #[error("support example {0:?} has no stored annotations")]
    MissingAnnotation(String),
    #[error("template placeholder {{{{{0}}}}} missing")]
    Placeholder(String),
    #[error("template: {0}")]
    Template(String),
    #[error("test pair {0:?} has no gold annotations to render")]
    MissingTestSemantics(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedSupportExample {
    pub example: SupportExample,
    pub annotation_instruction: SemanticAnnotation,
    pub annotation_readback: SemanticAnnotation,
}

/// Where support-example annotations come from.
pub trait AnnotationSource {
    fn annotations(&self, pair: &UtterancePair) -> Option<(SemanticAnnotation, SemanticAnnotation)>;
}

/// Uses the annotations stored on the corpus records themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorpusAnnotations;

impl AnnotationSource for CorpusAnnotations {
    fn annotations(&self, pair: &UtterancePair) -> Option<(SemanticAnnotation, SemanticAnnotation)> {
        Some((pair.annotation_instruction.clone()?, pair.annotation_readback.clone()?))
    }
}

/// Sidecar annotations keyed by pair id.
impl AnnotationSource for HashMap<String, (SemanticAnnotation, SemanticAnnotation)> {
    fn annotations(&self, pair: &UtterancePair) -> Option<(SemanticAnnotation, SemanticAnnotation)> {
        self.get(&pair.id).cloned()
    }
}

pub fn enrich_support(
    support: &SupportSet,
    source: &dyn AnnotationSource,
) -> Result<Vec<EnrichedSupportExample>, AtcotError> {
    support
        .examples
        .iter()
        .map(|ex| {
            let (ai, ar) = source
                .annotations(&ex.pair)
                .ok_or_else(|| AtcotError::MissingAnnotation(ex.pair.id.clone()))?;
            Ok(EnrichedSupportExample {
                example: ex.clone(),
                annotation_instruction: ai,
                annotation_readback: ar,
            })
        })
        .collect()
}

/// Prompt-level ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub plugin: bool,
    pub example_semantics: bool,
    pub test_semantics: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            plugin: true,
            example_semantics: true,
            test_semantics: false,
        }
    }
}

impl RenderOptions {
    /// Label used when the model output cannot be parsed.
    pub fn fallback(&self, plugin_label: OpenLabel) -> OpenLabel {
        if self.plugin {
            plugin_label
        } else {
            OpenLabel::Unknown
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub pair_id: String,
    pub system_text: String,
    pub user_text: String,
    pub example_count: usize,
    pub plugin_label: OpenLabel,
    pub plugin_shown: bool,
    pub template_version: String,
}

fn slots_line(a: &SemanticAnnotation) -> String {
    if a.slots.is_empty() {
        return "(none)".to_string();
    }
    a.slots
        .iter()
        .map(|s| format!("{}={}", s.name, s.value))
        .collect::<Vec<_>>()
        .join("; ")
}

fn semantics_lines(out: &mut Vec<String>, who: &str, a: &SemanticAnnotation) {
    out.push(format!("{who} intent: {}", a.intent));
    out.push(format!("{who} slots: {}", slots_line(a)));
}

fn example_block(
    i: usize,
    ex: &SupportExample,
    semantics: Option<(&SemanticAnnotation, &SemanticAnnotation)>,
    opts: &RenderOptions,
) -> String {
    let mut lines = vec![format!("Example {} [{}]", i + 1, ex.pair.id)];
    lines.push(format!("Instruction: {}", ex.pair.instruction));
    if let Some((ai, _)) = semantics {
        semantics_lines(&mut lines, "Instruction", ai);
    }
    lines.push(format!("Readback: {}", ex.pair.readback));
    if let Some((_, ar)) = semantics {
        semantics_lines(&mut lines, "Readback", ar);
    }
    if opts.plugin {
        lines.push(format!("Plug-in label: {}", ex.plugin_label));
    }
    lines.push(format!("Gold label: {}", ex.gold_label));
    lines.join("\n")
}

fn render_inner(
    blocks: Vec<String>,
    test: &UtterancePair,
    plugin_label: OpenLabel,
    template: &PromptTemplate,
    opts: &RenderOptions,
) -> Result<PromptBundle, AtcotError> {
    let example_count = blocks.len();
    let examples = (!blocks.is_empty()).then(|| format!("Examples:\n\n{}", blocks.join("\n\n")));
    let test_semantics = if opts.test_semantics {
        let (ai, ar) = CorpusAnnotations
            .annotations(test)
            .ok_or_else(|| AtcotError::MissingTestSemantics(test.id.clone()))?;
        let mut lines = Vec::new();
        semantics_lines(&mut lines, "Instruction", &ai);
        semantics_lines(&mut lines, "Readback", &ar);
        Some(lines.join("\n"))
    } else {
        None
    };
    let task = if opts.test_semantics {
        &template.task_with_semantics
    } else {
        &template.task
    };
    let values: BTreeMap<&str, Option<String>> = BTreeMap::from([
        ("examples", examples),
        ("pair_id", Some(test.id.clone())),
        ("instruction", Some(test.instruction.clone())),
        ("readback", Some(test.readback.clone())),
        ("test_semantics", test_semantics),
        ("plugin_label", opts.plugin.then(|| plugin_label.to_string())),
        ("task", Some(task.clone())),
        ("schema", Some(OUTPUT_SCHEMA.to_string())),
    ]);
    Ok(PromptBundle {
        pair_id: test.id.clone(),
        system_text: fill(&template.system, &values),
        user_text: fill(&template.user, &values),
        example_count,
        plugin_label,
        plugin_shown: opts.plugin,
        template_version: template.version.clone(),
    })
}

/// Renders the prompt with full example semantics, in support-set order.
pub fn render_prompt(
    enriched: &[EnrichedSupportExample],
    test: &UtterancePair,
    plugin_label: OpenLabel,
    template: &PromptTemplate,
    opts: &RenderOptions,
) -> Result<PromptBundle, AtcotError> {
    let blocks = enriched
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let sem = opts
                .example_semantics
                .then_some((&e.annotation_instruction, &e.annotation_readback));
            example_block(i, &e.example, sem, opts)
        })
        .collect();
    render_inner(blocks, test, plugin_label, template, opts)
}

/// Renders without example semantics (enrichment skipped).
pub fn render_prompt_plain(
    support: &SupportSet,
    test: &UtterancePair,
    plugin_label: OpenLabel,
    template: &PromptTemplate,
    opts: &RenderOptions,
) -> Result<PromptBundle, AtcotError> {
    let blocks = support
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| example_block(i, e, None, opts))
        .collect();
    render_inner(blocks, test, plugin_label, template, opts)
}
