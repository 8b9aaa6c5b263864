use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::atcot::{PromptTemplate, RenderOptions};
use crate::corpus::{DemoConfig, Split, SynthesisRecipe};
use crate::correction::PhraseologyLexicon;
use crate::dear::RetrievalParams;
use crate::embed::EmbeddingProviderConfig;
use crate::llm::LlmEndpointConfig;
use crate::poc::TrainConfig;

/// Largest examples-per-class count in the searched range.
pub const MAX_N_SHOT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelinePaths {
    pub corpus: PathBuf,
    /// Training-split bank; calibration and test banks sit next to it.
    pub bank: PathBuf,
    pub model: PathBuf,
    pub tfidf: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub template: Option<PathBuf>,
    /// Directory for verdicts, prompts, metrics and reports.
    pub output: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        Self {
            corpus: "data/demo_corpus.jsonl".into(),
            bank: "out/bank.bin".into(),
            model: "out/model.json".into(),
            tfidf: "out/tfidf.json".into(),
            lexicon: None,
            template: None,
            output: "out".into(),
        }
    }
}

impl PipelinePaths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.bank);
        fix(&mut self.model);
        fix(&mut self.tfidf);
        fix(&mut self.output);
        if let Some(p) = self.lexicon.as_mut() {
            fix(p);
        }
        if let Some(p) = self.template.as_mut() {
            fix(p);
        }
    }

    /// `out/bank.bin` → `out/bank.calibration.bin` for non-training splits.
    pub fn bank_for(&self, split: Split) -> PathBuf {
        if split == Split::Train {
            return self.bank.clone();
        }
        let stem = self.bank.file_stem().and_then(|s| s.to_str()).unwrap_or("bank");
        let ext = self.bank.extension().and_then(|s| s.to_str()).unwrap_or("bin");
        self.bank.with_file_name(format!("{stem}.{}.{ext}", split.as_str()))
    }

    pub fn output_file(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub ngram_range: (usize, usize),
    pub max_features: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self {
            ngram_range: (1, 2),
            max_features: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    /// Use the offline rule oracle instead of the endpoint.
    pub stub: bool,
    pub endpoint: LlmEndpointConfig,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            stub: true,
            endpoint: LlmEndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub kappa: Vec<usize>,
    pub rho: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Share of the training and calibration splits held out for validation.
    pub holdout_fraction: f64,
    /// Worker threads for grid points; `None` uses all cores.
    pub workers: Option<usize>,
    /// Grid search against a live endpoint costs one request per point and
    /// validation pair, so it must be enabled explicitly.
    pub allow_live: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            kappa: (1..=10).collect(),
            rho: (3..=10).collect(),
            alpha: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            holdout_fraction: 0.2,
            workers: None,
            allow_live: false,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.kappa.len() * self.rho.len() * self.alpha.len());
        for &k in &self.kappa {
            for &r in &self.rho {
                for &a in &self.alpha {
                    out.push((k, r, a));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Single source of randomness; copied into every component seed.
    pub seed: u64,
    pub paths: PipelinePaths,
    pub demo: DemoConfig,
    pub recipe: SynthesisRecipe,
    pub provider: EmbeddingProviderConfig,
    pub train: TrainConfig,
    pub kappa: usize,
    pub retrieval: RetrievalParams,
    pub tfidf: TfidfConfig,
    pub llm: LlmSettings,
    pub ablation: RenderOptions,
    pub grid: GridSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: PipelinePaths::default(),
            demo: DemoConfig::default(),
            recipe: SynthesisRecipe::default(),
            provider: EmbeddingProviderConfig::default(),
            train: TrainConfig::default(),
            kappa: 8,
            retrieval: RetrievalParams::default(),
            tfidf: TfidfConfig::default(),
            llm: LlmSettings::default(),
            ablation: RenderOptions::default(),
            grid: GridSpec::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Missing {
            what: "config",
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.retrieval.n > MAX_N_SHOT {
            return bad(format!("n-shot {} outside 0..={MAX_N_SHOT}", self.retrieval.n));
        }
        if !(0.0..=1.0).contains(&self.retrieval.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.retrieval.alpha));
        }
        if self.retrieval.rho == 0 {
            return bad("rho must be at least 1".into());
        }
        if self.kappa == 0 {
            return bad("kappa must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.grid.holdout_fraction) {
            return bad(format!("holdout fraction {} outside [0, 1)", self.grid.holdout_fraction));
        }
        if self.grid.workers == Some(0) {
            return bad("grid workers must be at least 1".into());
        }
        self.train.validate()?;
        self.provider.validate()?;
        if !self.llm.stub {
            self.llm.endpoint.validate()?;
        }
        Ok(())
    }

    /// Copies the global seed into every component that draws randomness.
    pub fn propagate_seed(&mut self) {
        let seed = self.seed;
        self.demo.seed = seed;
        self.recipe.seed = seed;
        self.train.seed = seed;
        self.retrieval.seed = seed;
        self.llm.endpoint.endpoint.seed = seed;
        if let EmbeddingProviderConfig::HashedNgram { seed: s, .. } = &mut self.provider {
            *s = seed;
        }
        if let EmbeddingProviderConfig::Remote { endpoint, .. } = &mut self.provider {
            endpoint.seed = seed;
        }
    }

    pub fn lexicon(&self) -> Result<PhraseologyLexicon, PipelineError> {
        Ok(match &self.paths.lexicon {
            Some(p) => PhraseologyLexicon::load(p)?,
            None => PhraseologyLexicon::builtin(),
        })
    }

    pub fn template(&self) -> Result<PromptTemplate, PipelineError> {
        Ok(match &self.paths.template {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::builtin(),
        })
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n_shot: Option<usize>,
    pub alpha: Option<f64>,
    pub rho: Option<usize>,
    pub kappa: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub stub: bool,
    pub no_plugin: bool,
    pub no_anchor_pool: bool,
    pub no_mmr: bool,
    pub shuffle_order: bool,
    pub no_example_semantics: bool,
    pub with_test_semantics: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(n) = self.n_shot {
            cfg.retrieval.n = n;
        }
        if let Some(a) = self.alpha {
            cfg.retrieval.alpha = a;
        }
        if let Some(r) = self.rho {
            cfg.retrieval.rho = r;
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output {
            cfg.paths.output = o.clone();
        }
        cfg.llm.stub |= self.stub;
        cfg.ablation.plugin &= !self.no_plugin;
        cfg.retrieval.anchor_pool &= !self.no_anchor_pool;
        cfg.retrieval.mmr &= !self.no_mmr;
        cfg.retrieval.shuffle_order |= self.shuffle_order;
        cfg.ablation.example_semantics &= !self.no_example_semantics;
        cfg.ablation.test_semantics |= self.with_test_semantics;
        cfg.propagate_seed();
    }
}
