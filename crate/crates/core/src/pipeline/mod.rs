//! End-to-end workflow behind the `scope` commands: synthesis, embedding,
//! head training, calibration, inference, evaluation and grid search.
//!
//! Every command reads its inputs from the paths in [`PipelineConfig`] and
//! writes its artifacts back to disk, so the stages can run separately.

mod config;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atcot::{
    enrich_support, parse_verdict, render_prompt, render_prompt_plain, AtcotError, CorpusAnnotations,
    PromptBundle, PromptTemplate, RenderOptions,
};
use crate::corpus::{
    build_demo_corpus, class_distribution, load_corpus, save_corpus, CorpusError, OpenLabel, SkippedPair, Split,
    UtterancePair,
};
use crate::correction::{
    locate_inferred, package_report, reorder_correct, CorrectionError, LexiconError, MonitorReport,
    PhraseologyLexicon, StageTimings,
};
use crate::dear::{fit_tfidf, DearError, RetrievalIndex, RetrievalParams, TextField, TfidfModel};
use crate::embed::{build_feature_bank, EmbedError, FeatureBank};
use crate::eval::{classification_metrics, EvalError, EvalInputs, MetricsReport, SemanticRecord};
use crate::llm::{LlmBackend, LlmClient, LlmError, StubPolicy};
use crate::poc::{train_head, CalibrationSummary, PocError, PocModel};
use crate::transport::TransportError;
use crate::util::keyed_rng;

pub use config::{
    GridSpec, LlmSettings, Overrides, PipelineConfig, PipelinePaths, TfidfConfig, MAX_N_SHOT,
};

/// File name of the bank copy stored next to the model.
pub const MODEL_BANK_FILE: &str = "model.bank.bin";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing {what} at {}: {source}", path.display())]
    Missing {
        what: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("test pair {0:?} has no embedding in the test bank")]
    MissingEmbedding(String),
    #[error("verdict for unknown pair {0:?}")]
    UnknownPair(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Poc(#[from] PocError),
    #[error(transparent)]
    Dear(#[from] DearError),
    #[error(transparent)]
    Atcot(#[from] AtcotError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_corpus(path: &Path) -> Result<Vec<UtterancePair>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: "corpus",
            path: path.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    Ok(load_corpus(path)?)
}

fn read_bank(path: &Path) -> Result<FeatureBank<f32>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: "feature bank (run `embed` first)",
            path: path.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    Ok(FeatureBank::load(path)?)
}

fn read_model(path: &Path) -> Result<PocModel<f32>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: "model (run `train` first)",
            path: path.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    Ok(PocModel::load(path)?)
}

fn of_split(corpus: &[UtterancePair], split: Split) -> Vec<UtterancePair> {
    corpus.iter().filter(|p| p.split == split).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub pairs: usize,
    pub skipped: Vec<SkippedPair>,
    pub distribution: String,
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary, PipelineError> {
    cfg.validate()?;
    let lexicon = cfg.lexicon()?;
    let (pairs, skipped) = build_demo_corpus(&cfg.demo, &cfg.recipe, &lexicon)?;
    ensure_parent(&cfg.paths.corpus)?;
    save_corpus(&cfg.paths.corpus, &pairs)?;
    write_json(&cfg.paths.output_file("synth_skipped.json"), &skipped)?;
    Ok(SynthSummary {
        pairs: pairs.len(),
        skipped,
        distribution: class_distribution(&pairs).to_table(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub dim: usize,
    pub fingerprint: String,
    pub counts: Vec<(Split, usize)>,
}

pub fn cmd_embed(cfg: &PipelineConfig) -> Result<EmbedSummary, PipelineError> {
    cfg.validate()?;
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let provider = cfg.provider.build::<f32>()?;
    let mut counts = Vec::new();
    for split in Split::ALL {
        let pairs = of_split(&corpus, split);
        if pairs.is_empty() {
            return Err(PipelineError::Config(format!("corpus has no {} pairs", split.as_str())));
        }
        let bank = build_feature_bank(provider.as_ref(), &pairs)?;
        let path = cfg.paths.bank_for(split);
        ensure_parent(&path)?;
        bank.save(&path)?;
        counts.push((split, bank.len()));
    }
    Ok(EmbedSummary {
        dim: provider.dim(),
        fingerprint: provider.fingerprint(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub history: Vec<crate::poc::LossTerms>,
    pub known: usize,
    pub exposure: usize,
}

fn known_only(bank: &FeatureBank<f32>) -> FeatureBank<f32> {
    bank.filter(|e| e.label.is_some_and(OpenLabel::is_known))
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    cfg.validate()?;
    let known = known_only(&read_bank(&cfg.paths.bank_for(Split::Train))?);
    let exposure = read_bank(&cfg.paths.bank_for(Split::Calibration))?;
    let outcome = train_head(&known, &exposure, &cfg.train)?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        history: outcome.history.clone(),
        known: known.len(),
        exposure: exposure.len(),
    };
    let model = PocModel::new(outcome.head, known, cfg.kappa, cfg.train.clone())?;
    ensure_parent(&cfg.paths.model)?;
    model.save(&cfg.paths.model, MODEL_BANK_FILE)?;
    write_json(&cfg.paths.output_file("training.json"), &summary)?;
    Ok(summary)
}

fn vectors(bank: &FeatureBank<f32>) -> Vec<&[f32]> {
    bank.entries().iter().map(|e| e.vector.as_slice()).collect()
}

pub fn cmd_calibrate(cfg: &PipelineConfig) -> Result<CalibrationSummary, PipelineError> {
    cfg.validate()?;
    let mut model = read_model(&cfg.paths.model)?;
    model.kappa = cfg.kappa;
    let unknown = read_bank(&cfg.paths.bank_for(Split::Calibration))?;
    let summary = model.calibrate(&vectors(&unknown))?;
    model.save(&cfg.paths.model, MODEL_BANK_FILE)?;
    write_json(&cfg.paths.output_file("calibration.json"), &summary)?;
    Ok(summary)
}

/// Both TF-IDF models, stored together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfPair {
    pub instruction: TfidfModel,
    pub readback: TfidfModel,
}

impl TfidfPair {
    pub fn fit(pairs: &[&UtterancePair], cfg: &TfidfConfig) -> Result<Self, PipelineError> {
        let instr: Vec<&str> = pairs.iter().map(|p| p.instruction.as_str()).collect();
        let rb: Vec<&str> = pairs.iter().map(|p| p.readback.as_str()).collect();
        Ok(Self {
            instruction: fit_tfidf(&instr, cfg.ngram_range, cfg.max_features, TextField::Instruction)?,
            readback: fit_tfidf(&rb, cfg.ngram_range, cfg.max_features, TextField::Readback)?,
        })
    }
}

/// Plug-in labels for every banked pair, keyed by id.
fn plugin_labels(
    model: &PocModel<f32>,
    banks: &[&FeatureBank<f32>],
) -> Result<HashMap<String, OpenLabel>, PipelineError> {
    let mut out = HashMap::new();
    for bank in banks {
        let labels = bank
            .entries()
            .par_iter()
            .map(|e| model.predict_open(&e.vector).map(|l| (e.id.clone(), l)))
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(labels);
    }
    Ok(out)
}

/// Everything a single test pair needs on its way through the pipeline.
pub struct InferenceContext<'a> {
    pub model: &'a PocModel<f32>,
    pub index: &'a RetrievalIndex,
    pub template: &'a PromptTemplate,
    pub lexicon: &'a PhraseologyLexicon,
    pub backend: &'a LlmBackend,
    pub retrieval: RetrievalParams,
    pub render: RenderOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub report: MonitorReport,
    pub prompt: PromptBundle,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn infer_pair(ctx: &InferenceContext<'_>, pair: &UtterancePair, h: &[f32]) -> Result<PairOutcome, PipelineError> {
    let start = Instant::now();
    let mut t = StageTimings::default();

    let s = Instant::now();
    let plugin = ctx.model.predict_open(h)?;
    t.poc_ms = ms(s);

    let s = Instant::now();
    let support = ctx.index.retrieve(pair, &ctx.retrieval)?;
    t.retrieval_ms = ms(s);

    let s = Instant::now();
    let prompt = if ctx.render.example_semantics {
        let enriched = enrich_support(&support, &CorpusAnnotations)?;
        render_prompt(&enriched, pair, plugin, ctx.template, &ctx.render)?
    } else {
        render_prompt_plain(&support, pair, plugin, ctx.template, &ctx.render)?
    };
    t.prompt_ms = ms(s);

    let completion = ctx.backend.complete(&prompt)?;
    t.llm_ms = completion.latency.as_secs_f64() * 1e3;
    let verdict = parse_verdict(&completion.content, ctx.render.fallback(plugin));

    let s = Instant::now();
    let correction = verdict.label.is_anomaly().then(|| {
        let annotation = locate_inferred(&pair.instruction, &verdict.slots_instruction);
        reorder_correct(&pair.instruction, annotation.as_ref(), ctx.lexicon)
    });
    t.correction_ms = ms(s);
    t.total_ms = ms(start);

    let report = package_report(&pair.id, plugin, &verdict, correction, t)?;
    Ok(PairOutcome { report, prompt })
}

/// Runs [`infer_pair`] over `pairs` in parallel; output order follows input order.
pub fn infer_all(
    ctx: &InferenceContext<'_>,
    pairs: &[UtterancePair],
    bank: &FeatureBank<f32>,
) -> Result<Vec<PairOutcome>, PipelineError> {
    pairs
        .par_iter()
        .map(|p| {
            let h = bank
                .get(&p.id)
                .ok_or_else(|| PipelineError::MissingEmbedding(p.id.clone()))?;
            infer_pair(ctx, p, &h.vector)
        })
        .collect()
}

pub fn build_backend(cfg: &PipelineConfig, lexicon: &PhraseologyLexicon) -> Result<LlmBackend, PipelineError> {
    Ok(if cfg.llm.stub {
        LlmBackend::Stub(StubPolicy::new(std::sync::Arc::new(lexicon.clone()), cfg.seed))
    } else {
        LlmBackend::Remote(LlmClient::new(cfg.llm.endpoint.clone())?)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub pairs: usize,
    pub mean: StageTimings,
    pub max_total_ms: f64,
}

impl LatencyReport {
    pub fn from_reports(reports: &[MonitorReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut mean = StageTimings::default();
        let mut max_total_ms: f64 = 0.0;
        for r in reports {
            let t = &r.timings;
            mean.embed_ms += t.embed_ms / n;
            mean.poc_ms += t.poc_ms / n;
            mean.retrieval_ms += t.retrieval_ms / n;
            mean.prompt_ms += t.prompt_ms / n;
            mean.llm_ms += t.llm_ms / n;
            mean.correction_ms += t.correction_ms / n;
            mean.total_ms += t.total_ms / n;
            max_total_ms = max_total_ms.max(t.total_ms);
        }
        Self {
            pairs: reports.len(),
            mean,
            max_total_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub pairs: usize,
    pub parse_failures: usize,
    pub verdicts: PathBuf,
    pub latency: LatencyReport,
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<InferSummary, PipelineError> {
    cfg.validate()?;
    let lexicon = cfg.lexicon()?;
    let template = cfg.template()?;
    let model = read_model(&cfg.paths.model)?;
    if model.tau.is_none() {
        return Err(PocError::Uncalibrated.into());
    }
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let train_bank = read_bank(&cfg.paths.bank_for(Split::Train))?;
    let cal_bank = read_bank(&cfg.paths.bank_for(Split::Calibration))?;
    let test_bank = read_bank(&cfg.paths.bank_for(Split::Test))?;

    let support_pool: Vec<UtterancePair> = corpus.iter().filter(|p| p.split != Split::Test).cloned().collect();
    let train_refs: Vec<&UtterancePair> = support_pool.iter().filter(|p| p.split == Split::Train).collect();
    let tfidf = TfidfPair::fit(&train_refs, &cfg.tfidf)?;
    write_json(&cfg.paths.tfidf, &tfidf)?;
    let labels = plugin_labels(&model, &[&train_bank, &cal_bank])?;
    let index = RetrievalIndex::build(tfidf.instruction, tfidf.readback, &support_pool, |p| {
        labels.get(&p.id).copied().unwrap_or(OpenLabel::Unknown)
    })?;
    let backend = build_backend(cfg, &lexicon)?;
    let ctx = InferenceContext {
        model: &model,
        index: &index,
        template: &template,
        lexicon: &lexicon,
        backend: &backend,
        retrieval: cfg.retrieval.clone(),
        render: cfg.ablation,
    };
    let tests = of_split(&corpus, Split::Test);
    let outcomes = infer_all(&ctx, &tests, &test_bank)?;

    let reports: Vec<MonitorReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let prompts: Vec<&PromptBundle> = outcomes.iter().map(|o| &o.prompt).collect();
    let verdicts = cfg.paths.output_file("verdicts.jsonl");
    write_jsonl(&verdicts, &reports)?;
    write_jsonl(&cfg.paths.output_file("prompts.jsonl"), &prompts)?;
    let latency = LatencyReport::from_reports(&reports);
    write_json(&cfg.paths.output_file("latency.json"), &latency)?;
    Ok(InferSummary {
        pairs: reports.len(),
        parse_failures: reports.iter().filter(|r| !r.parse_ok).count(),
        verdicts,
        latency,
    })
}

pub fn read_verdicts(path: &Path) -> Result<Vec<MonitorReport>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::Missing {
        what: "verdicts (run `infer` first)",
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn semantic_pairs(reports: &[MonitorReport], gold: &HashMap<&str, &UtterancePair>) -> (Vec<SemanticRecord>, Vec<SemanticRecord>) {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let slots = |s: &[crate::atcot::VerdictSlot]| s.iter().map(|s| (s.name.clone(), s.value.clone())).collect();
    let gslots = |a: &crate::corpus::SemanticAnnotation| a.slots.iter().map(|s| (s.name.clone(), s.value.clone())).collect();
    for r in reports {
        let Some(pair) = gold.get(r.pair_id.as_str()) else { continue };
        let (Some(ai), Some(ar)) = (&pair.annotation_instruction, &pair.annotation_readback) else {
            continue;
        };
        let id_i = format!("{}/instruction", r.pair_id);
        let id_r = format!("{}/readback", r.pair_id);
        preds.push(SemanticRecord::new(id_i.clone(), r.intent_instruction.clone(), slots(&r.slots_instruction)));
        preds.push(SemanticRecord::new(id_r.clone(), r.intent_readback.clone(), slots(&r.slots_readback)));
        golds.push(SemanticRecord::new(id_i, ai.intent.clone(), gslots(ai)));
        golds.push(SemanticRecord::new(id_r, ar.intent.clone(), gslots(ar)));
    }
    (preds, golds)
}

/// Metrics for a set of reports against the corpus gold labels.
pub fn evaluate_reports(reports: &[MonitorReport], corpus: &[UtterancePair]) -> Result<MetricsReport, PipelineError> {
    let by_id: HashMap<&str, &UtterancePair> = corpus.iter().map(|p| (p.id.as_str(), p)).collect();
    let golds = reports
        .iter()
        .map(|r| {
            by_id
                .get(r.pair_id.as_str())
                .and_then(|p| p.label)
                .ok_or_else(|| PipelineError::UnknownPair(r.pair_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (sp, sg) = semantic_pairs(reports, &by_id);
    Ok(MetricsReport::build(&EvalInputs {
        reports,
        golds: &golds,
        semantic_preds: &sp,
        semantic_golds: &sg,
    })?)
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<MetricsReport, PipelineError> {
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let reports = read_verdicts(&cfg.paths.output_file("verdicts.jsonl"))?;
    let metrics = evaluate_reports(&reports, &corpus)?;
    write_json(&cfg.paths.output_file("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub kappa: usize,
    pub rho: usize,
    pub alpha: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy descending, then macro-F1 descending, then parameters ascending.
pub fn rank_rows(rows: &mut [GridRow]) {
    rows.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(b.macro_f1.total_cmp(&a.macro_f1))
            .then(a.kappa.cmp(&b.kappa))
            .then(a.rho.cmp(&b.rho))
            .then(a.alpha.total_cmp(&b.alpha))
    });
}

/// Seeded split of `pairs` into (fit, holdout); the holdout takes `ceil(fraction * n)`.
pub fn holdout_split(pairs: &[UtterancePair], fraction: f64, seed: u64, key: &str) -> (Vec<UtterancePair>, Vec<UtterancePair>) {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut keyed_rng(seed, key));
    let k = (fraction * pairs.len() as f64).ceil() as usize;
    let mut held: Vec<usize> = idx[..k.min(idx.len())].to_vec();
    held.sort_unstable();
    let mut is_held = vec![false; pairs.len()];
    for &i in &held {
        is_held[i] = true;
    }
    let (mut fit, mut out) = (Vec::new(), Vec::new());
    for (p, h) in pairs.iter().zip(is_held) {
        if h {
            out.push(p.clone());
        } else {
            fit.push(p.clone());
        }
    }
    (fit, out)
}

fn subset(bank: &FeatureBank<f32>, pairs: &[UtterancePair]) -> FeatureBank<f32> {
    let ids: std::collections::HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    bank.filter(|e| ids.contains(e.id.as_str()))
}

/// Evaluates every grid point on a seeded validation holdout carved from the
/// training and calibration splits; the test split is never touched.
pub fn cmd_grid_search(cfg: &PipelineConfig) -> Result<Vec<GridRow>, PipelineError> {
    cfg.validate()?;
    let points = cfg.grid.points();
    if points.is_empty() {
        return Err(PipelineError::Config("empty grid".into()));
    }
    if !cfg.llm.stub && !cfg.grid.allow_live {
        return Err(PipelineError::Config(
            "grid search against a live endpoint requires grid.allow_live = true".into(),
        ));
    }
    let lexicon = cfg.lexicon()?;
    let template = cfg.template()?;
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let train_bank = read_bank(&cfg.paths.bank_for(Split::Train))?;
    let cal_bank = read_bank(&cfg.paths.bank_for(Split::Calibration))?;

    let frac = cfg.grid.holdout_fraction;
    let (fit_train, val_train) = holdout_split(&of_split(&corpus, Split::Train), frac, cfg.seed, "grid-train");
    let (fit_cal, val_cal) = holdout_split(&of_split(&corpus, Split::Calibration), frac, cfg.seed, "grid-calibration");
    let known = known_only(&subset(&train_bank, &fit_train));
    let exposure = subset(&cal_bank, &fit_cal);
    let head = train_head(&known, &exposure, &cfg.train)?.head;

    let mut validation: Vec<UtterancePair> = val_train.clone();
    validation.extend(val_cal.iter().cloned().map(|mut p| {
        p.label = Some(OpenLabel::Unknown);
        p
    }));
    let mut val_bank = subset(&train_bank, &val_train);
    for e in subset(&cal_bank, &val_cal).entries() {
        val_bank.push(e.id.clone(), e.vector.clone(), e.label)?;
    }
    let support_pool: Vec<UtterancePair> = fit_train.iter().chain(&fit_cal).cloned().collect();
    let fit_refs: Vec<&UtterancePair> = fit_train.iter().collect();
    let tfidf = TfidfPair::fit(&fit_refs, &cfg.tfidf)?;
    let backend = build_backend(cfg, &lexicon)?;
    let fit_cal_bank = exposure.clone();

    let mut kappas: Vec<usize> = cfg.grid.kappa.clone();
    kappas.sort_unstable();
    kappas.dedup();
    let per_kappa = kappas
        .par_iter()
        .map(|&kappa| {
            let mut model = PocModel::new(head.clone(), known.clone(), kappa, cfg.train.clone())?;
            model.calibrate(&vectors(&fit_cal_bank))?;
            let labels = plugin_labels(&model, &[&known, &fit_cal_bank])?;
            let index = RetrievalIndex::build(tfidf.instruction.clone(), tfidf.readback.clone(), &support_pool, |p| {
                labels.get(&p.id).copied().unwrap_or(OpenLabel::Unknown)
            })?;
            Ok((kappa, (model, index)))
        })
        .collect::<Result<HashMap<_, _>, PipelineError>>()?;

    let run = || -> Result<Vec<GridRow>, PipelineError> {
        points
            .par_iter()
            .map(|&(kappa, rho, alpha)| {
                let (model, index) = &per_kappa[&kappa];
                let ctx = InferenceContext {
                    model,
                    index,
                    template: &template,
                    lexicon: &lexicon,
                    backend: &backend,
                    retrieval: RetrievalParams {
                        rho,
                        alpha,
                        ..cfg.retrieval.clone()
                    },
                    render: cfg.ablation,
                };
                let outcomes = validation
                    .iter()
                    .map(|p| {
                        let h = val_bank.get(&p.id).ok_or_else(|| PipelineError::MissingEmbedding(p.id.clone()))?;
                        infer_pair(&ctx, p, &h.vector)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let preds: Vec<OpenLabel> = outcomes.iter().map(|o| o.report.label).collect();
                let golds: Vec<OpenLabel> = validation.iter().map(|p| p.label.unwrap_or(OpenLabel::Unknown)).collect();
                let m = classification_metrics(&preds, &golds)?;
                Ok(GridRow {
                    kappa,
                    rho,
                    alpha,
                    accuracy: m.accuracy,
                    macro_f1: m.macro_f1,
                })
            })
            .collect()
    };
    let mut rows = match cfg.grid.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    rank_rows(&mut rows);
    write_json(&cfg.paths.output_file("grid.json"), &rows)?;
    Ok(rows)
}

/// Plain-text table of ranked grid rows.
pub fn grid_table(rows: &[GridRow]) -> String {
    let mut s = format!("{:>5} {:>4} {:>5} {:>8} {:>8}\n", "kappa", "rho", "alpha", "acc", "macroF1");
    for r in rows {
        s.push_str(&format!(
            "{:>5} {:>4} {:>5.1} {:>8.4} {:>8.4}\n",
            r.kappa, r.rho, r.alpha, r.accuracy, r.macro_f1
        ));
    }
    s
}
