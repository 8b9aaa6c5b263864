//! Anchored, diverse in-context example retrieval.
//!
//! Candidates are pooled by instruction similarity to the test pair (the
//! anchor), bucketed by gold class, diversified per class with maximal
//! marginal relevance over readbacks, and finally ordered by anchor
//! similarity.

mod tfidf;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{OpenLabel, Split, UtterancePair};

pub use tfidf::{char_ngrams, fit_tfidf, vectorize, SparseVector, TextField, TfidfModel, TFIDF_FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum DearError {
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error("sparse vector: {0}")]
    Vector(String),
    #[error("pair {0:?} has no gold label")]
    Unlabeled(String),
    #[error("TF-IDF file: {0}")]
    File(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    /// Examples per class.
    pub n: usize,
    /// Pool ratio: the pool holds `rho * n` candidates.
    pub rho: usize,
    pub alpha: f64,
    pub anchor_pool: bool,
    pub mmr: bool,
    pub shuffle_order: bool,
    pub seed: u64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            n: 4,
            rho: 9,
            alpha: 0.3,
            anchor_pool: true,
            mmr: true,
            shuffle_order: false,
            seed: 42,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), DearError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DearError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.rho == 0 {
            return Err(DearError::Config("rho must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.rho * self.n
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.mmr {
            self.alpha
        } else {
            1.0
        }
    }
}

/// A retrievable pair with its cached plug-in label and TF-IDF vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedPair {
    pub pair: UtterancePair,
    pub gold: OpenLabel,
    pub plugin_label: OpenLabel,
    pub instruction_vec: SparseVector,
    pub readback_vec: SparseVector,
}

/// Training pairs (known classes) plus calibration pairs (the Unknown source),
/// vectorized once with per-field TF-IDF models.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub instruction_model: TfidfModel,
    pub readback_model: TfidfModel,
    train: Vec<IndexedPair>,
    calibration: Vec<IndexedPair>,
}

impl RetrievalIndex {
    /// `plugin_label` supplies the cached plug-in prediction for each pair id.
    pub fn build(
        instruction_model: TfidfModel,
        readback_model: TfidfModel,
        pairs: &[UtterancePair],
        plugin_label: impl Fn(&UtterancePair) -> OpenLabel,
    ) -> Result<Self, DearError> {
        let mut train = Vec::new();
        let mut calibration = Vec::new();
        for pair in pairs {
            let gold = match (pair.split, pair.label) {
                (Split::Calibration, _) => OpenLabel::Unknown,
                (_, Some(l)) => l,
                (_, None) => return Err(DearError::Unlabeled(pair.id.clone())),
            };
            let entry = IndexedPair {
                instruction_vec: vectorize(&instruction_model, &pair.instruction),
                readback_vec: vectorize(&readback_model, &pair.readback),
                plugin_label: plugin_label(pair),
                pair: pair.clone(),
                gold,
            };
            if pair.split == Split::Calibration {
                calibration.push(entry);
            } else {
                train.push(entry);
            }
        }
        Ok(Self {
            instruction_model,
            readback_model,
            train,
            calibration,
        })
    }

    /// Fits both TF-IDF models on the training texts, then indexes.
    pub fn fit(
        pairs: &[UtterancePair],
        ngram_range: (usize, usize),
        max_features: usize,
        plugin_label: impl Fn(&UtterancePair) -> OpenLabel,
    ) -> Result<Self, DearError> {
        let train: Vec<&UtterancePair> = pairs.iter().filter(|p| p.split != Split::Calibration).collect();
        let instr: Vec<&str> = train.iter().map(|p| p.instruction.as_str()).collect();
        let rb: Vec<&str> = train.iter().map(|p| p.readback.as_str()).collect();
        let im = fit_tfidf(&instr, ngram_range, max_features, TextField::Instruction)?;
        let rm = fit_tfidf(&rb, ngram_range, max_features, TextField::Readback)?;
        Self::build(im, rm, pairs, plugin_label)
    }

    pub fn train(&self) -> &[IndexedPair] {
        &self.train
    }

    pub fn calibration(&self) -> &[IndexedPair] {
        &self.calibration
    }

    /// Number of retrievable examples of a class.
    pub fn availability(&self, class: OpenLabel) -> usize {
        if class == OpenLabel::Unknown {
            self.calibration.len()
        } else {
            self.train.iter().filter(|e| e.gold == class).count()
        }
    }

    fn class_source(&self, class: OpenLabel) -> Vec<&IndexedPair> {
        if class == OpenLabel::Unknown {
            self.calibration.iter().collect()
        } else {
            self.train.iter().filter(|e| e.gold == class).collect()
        }
    }

    /// Retrieves the ordered support set for `test`.
    pub fn retrieve<'s>(&'s self, test: &UtterancePair, params: &RetrievalParams) -> Result<SupportSet, DearError> {
        params.validate()?;
        if params.n == 0 {
            return Ok(SupportSet {
                examples: Vec::new(),
                n: 0,
            });
        }
        let anchor = vectorize(&self.instruction_model, &test.instruction);
        let test_rb = vectorize(&self.readback_model, &test.readback);
        let scored = |entries: Vec<&'s IndexedPair>| -> Vec<Scored<'s>> {
            entries
                .into_iter()
                .filter(|e| e.pair.id != test.id)
                .map(|e| Scored {
                    entry: e,
                    anchor: anchor.cosine(&e.instruction_vec),
                })
                .collect()
        };

        let mut per_class: BTreeMap<OpenLabel, Vec<SupportExample>> = BTreeMap::new();
        let pool = if params.anchor_pool {
            let mut all = scored(self.train.iter().collect());
            sort_by_anchor(&mut all);
            all.truncate(params.pool_size());
            Some(all)
        } else {
            None
        };
        for class in OpenLabel::ALL {
            let mut source = scored(self.class_source(class));
            sort_by_anchor(&mut source);
            let bucket: Vec<Scored> = match &pool {
                Some(pool) => {
                    let mut b: Vec<Scored> = pool.iter().filter(|s| s.entry.gold == class).cloned().collect();
                    for s in source {
                        if b.len() >= params.n {
                            break;
                        }
                        if !b.iter().any(|x| x.entry.pair.id == s.entry.pair.id) {
                            b.push(s);
                        }
                    }
                    b
                }
                None => source,
            };
            let candidates: Vec<(&str, &SparseVector)> = bucket
                .iter()
                .map(|s| (s.entry.pair.id.as_str(), &s.entry.readback_vec))
                .collect();
            let picks = mmr_select(&candidates, &test_rb, params.n, params.effective_alpha());
            per_class.insert(
                class,
                picks
                    .iter()
                    .map(|step| {
                        let s = &bucket[step.index];
                        SupportExample {
                            pair: s.entry.pair.clone(),
                            plugin_label: s.entry.plugin_label,
                            gold_label: s.entry.gold,
                            anchor_similarity: s.anchor,
                            class_bucket: class,
                        }
                    })
                    .collect(),
            );
        }
        let mut support = assemble_support(per_class, params.n);
        if params.shuffle_order {
            let mut rng = crate::util::keyed_rng(params.seed, &test.id);
            support.examples.shuffle(&mut rng);
        }
        Ok(support)
    }

    /// Instruction-anchored candidate pool over the training pairs.
    pub fn build_pool(&self, test: &UtterancePair, rho: usize, n: usize) -> CandidatePool {
        let anchor = vectorize(&self.instruction_model, &test.instruction);
        let mut all: Vec<Scored> = self
            .train
            .iter()
            .map(|e| Scored {
                entry: e,
                anchor: anchor.cosine(&e.instruction_vec),
            })
            .collect();
        sort_by_anchor(&mut all);
        let m = rho * n;
        all.truncate(m);
        CandidatePool {
            test_id: test.id.clone(),
            m,
            entries: all
                .into_iter()
                .map(|s| PoolEntry {
                    id: s.entry.pair.id.clone(),
                    gold: s.entry.gold,
                    plugin_label: s.entry.plugin_label,
                    anchor_similarity: s.anchor,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct Scored<'a> {
    entry: &'a IndexedPair,
    anchor: f64,
}

fn sort_by_anchor(items: &mut [Scored<'_>]) {
    items.sort_by(|a, b| {
        b.anchor
            .partial_cmp(&a.anchor)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.entry.pair.id.cmp(&b.entry.pair.id))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub gold: OpenLabel,
    pub plugin_label: OpenLabel,
    pub anchor_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub test_id: String,
    pub m: usize,
    /// Descending anchor similarity, ties by id.
    pub entries: Vec<PoolEntry>,
}

/// One greedy MMR pick: position in the candidate list and its marginal score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrStep {
    pub index: usize,
    pub score: f64,
}

/// Greedy maximal marginal relevance. Each step picks the candidate
/// maximizing `alpha * sim(query, c) - (1 - alpha) * max_s sim(c, s)` over the
/// already selected `s` (0 when nothing is selected yet); ties go to the
/// smaller id.
pub fn mmr_select(candidates: &[(&str, &SparseVector)], query: &SparseVector, n: usize, alpha: f64) -> Vec<MmrStep> {
    let relevance: Vec<f64> = candidates.iter().map(|(_, v)| query.cosine(v)).collect();
    let mut redundancy = vec![0.0f64; candidates.len()];
    let mut taken = vec![false; candidates.len()];
    let mut steps = Vec::with_capacity(n.min(candidates.len()));
    while steps.len() < n.min(candidates.len()) {
        let mut best: Option<MmrStep> = None;
        for i in (0..candidates.len()).filter(|&i| !taken[i]) {
            let score = alpha * relevance[i] - (1.0 - alpha) * redundancy[i];
            let better = match best {
                None => true,
                Some(b) => score > b.score || (score == b.score && candidates[i].0 < candidates[b.index].0),
            };
            if better {
                best = Some(MmrStep { index: i, score });
            }
        }
        let pick = best.expect("at least one candidate remains");
        taken[pick.index] = true;
        let chosen = candidates[pick.index].1;
        for i in (0..candidates.len()).filter(|&i| !taken[i]) {
            redundancy[i] = redundancy[i].max(candidates[i].1.cosine(chosen));
        }
        steps.push(pick);
    }
    steps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportExample {
    pub pair: UtterancePair,
    pub plugin_label: OpenLabel,
    pub gold_label: OpenLabel,
    pub anchor_similarity: f64,
    pub class_bucket: OpenLabel,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SupportSet {
    pub examples: Vec<SupportExample>,
    /// Examples per class requested.
    pub n: usize,
}

impl SupportSet {
    pub fn count(&self, class: OpenLabel) -> usize {
        self.examples.iter().filter(|e| e.class_bucket == class).count()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Union of the per-class selections, most anchor-similar first, ties by id.
pub fn assemble_support(per_class: BTreeMap<OpenLabel, Vec<SupportExample>>, n: usize) -> SupportSet {
    let mut examples: Vec<SupportExample> = per_class
        .into_values()
        .flat_map(|v| v.into_iter().take(n))
        .collect();
    examples.sort_by(|a, b| {
        b.anchor_similarity
            .partial_cmp(&a.anchor_similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.pair.id.cmp(&b.pair.id))
    });
    SupportSet { examples, n }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(entries: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_entries(8, entries.to_vec()).unwrap()
    }

    #[test]
    fn alpha_one_is_similarity_ranking() {
        let q = sv(&[(0, 1.0)]);
        let a = sv(&[(0, 0.2), (1, 1.0)]);
        let b = sv(&[(0, 1.0), (1, 0.1)]);
        let c = sv(&[(0, 1.0), (1, 0.5)]);
        let cands = [("a", &a), ("b", &b), ("c", &c)];
        let picks: Vec<usize> = mmr_select(&cands, &q, 2, 1.0).iter().map(|s| s.index).collect();
        assert_eq!(picks, [1, 2]);
    }

    #[test]
    fn single_candidate_is_always_selected() {
        let q = sv(&[(0, 1.0)]);
        let a = sv(&[(3, 1.0)]);
        for alpha in [0.0, 0.3, 1.0] {
            let picks = mmr_select(&[("a", &a)], &q, 4, alpha);
            assert_eq!(picks.len(), 1);
            assert_eq!(picks[0].index, 0);
        }
    }

    #[test]
    fn redundancy_penalty_diversifies() {
        let q = sv(&[(0, 1.0), (1, 1.0)]);
        let a = sv(&[(0, 1.0), (1, 0.9)]);
        let dup = sv(&[(0, 1.0), (1, 0.9)]);
        let other = sv(&[(1, 1.0), (2, 0.3)]);
        let cands = [("a", &a), ("b", &dup), ("c", &other)];
        let picks: Vec<usize> = mmr_select(&cands, &q, 2, 0.3).iter().map(|s| s.index).collect();
        assert_eq!(picks, [0, 2]);
        let ties: Vec<usize> = mmr_select(&[("z", &a), ("b", &dup)], &q, 1, 0.5).iter().map(|s| s.index).collect();
        assert_eq!(ties, [1]);
    }

    fn ex(id: &str, class: OpenLabel, sim: f64) -> SupportExample {
        SupportExample {
            pair: UtterancePair::new(id, "i", "r", Some(class), Split::Train),
            plugin_label: class,
            gold_label: class,
            anchor_similarity: sim,
            class_bucket: class,
        }
    }

    #[test]
    fn assembly_sorts_descending() {
        let mut m = BTreeMap::new();
        m.insert(OpenLabel::Correct, vec![ex("a", OpenLabel::Correct, 0.9), ex("b", OpenLabel::Correct, 0.2)]);
        m.insert(OpenLabel::Unknown, vec![ex("c", OpenLabel::Unknown, 0.5), ex("d", OpenLabel::Unknown, 0.5)]);
        let s = assemble_support(m, 2);
        let ids: Vec<_> = s.examples.iter().map(|e| e.pair.id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "d", "b"]);
        assert!(assemble_support(BTreeMap::new(), 0).is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(RetrievalParams::default().validate().is_ok());
        assert_eq!(RetrievalParams::default().pool_size(), 36);
        assert!(RetrievalParams { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(RetrievalParams { rho: 0, ..Default::default() }.validate().is_err());
    }
}
