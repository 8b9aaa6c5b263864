use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DearError;

pub const TFIDF_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Instruction,
    Readback,
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    pub fn zero(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Builds from unsorted `(index, value)` entries; duplicates are summed and zeros dropped.
    pub fn from_entries(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self, DearError> {
        entries.sort_by_key(|(i, _)| *i);
        let mut indices: Vec<u32> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if i as usize >= dim {
                return Err(DearError::Vector(format!("index {i} out of dimension {dim}")));
            }
            if indices.last() == Some(&i) {
                *values.last_mut().expect("parallel arrays") += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let (indices, values) = indices.into_iter().zip(values).filter(|(_, v)| *v != 0.0).unzip();
        Ok(Self { indices, values, dim })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity; zero if either side is the zero vector.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let n = self.norm() * other.norm();
        if n == 0.0 {
            0.0
        } else {
            (self.dot(other) / n).clamp(-1.0, 1.0)
        }
    }

    fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
        }
        self
    }
}

/// Character n-grams of the lowercased text, in order of occurrence.
pub fn char_ngrams(text: &str, range: (usize, usize)) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = Vec::new();
    for n in range.0..=range.1 {
        out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub format_version: u32,
    pub field: TextField,
    pub ngram_range: (usize, usize),
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DearError> {
        let json = serde_json::to_string(self).map_err(|e| DearError::File(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DearError> {
        let model: Self =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| DearError::File(e.to_string()))?;
        if model.format_version != TFIDF_FORMAT_VERSION {
            return Err(DearError::File(format!("unsupported format version {}", model.format_version)));
        }
        if model.vocabulary.len() != model.idf.len()
            || model.vocabulary.values().any(|&i| i >= model.idf.len())
        {
            return Err(DearError::File("vocabulary and idf disagree".into()));
        }
        Ok(model)
    }
}

/// Fits a character TF-IDF model: the `max_features` most frequent n-grams
/// (ties by n-gram text) with smoothed idf `ln((1 + n) / (1 + df)) + 1`.
/// Column indices follow lexicographic n-gram order.
pub fn fit_tfidf(
    texts: &[&str],
    ngram_range: (usize, usize),
    max_features: usize,
    field: TextField,
) -> Result<TfidfModel, DearError> {
    if texts.is_empty() {
        return Err(DearError::EmptyCorpus);
    }
    if ngram_range.0 < 1 || ngram_range.0 > ngram_range.1 {
        return Err(DearError::Config(format!("bad ngram range {ngram_range:?}")));
    }
    let mut freq: HashMap<String, (usize, usize)> = HashMap::new();
    for text in texts {
        let grams = char_ngrams(text, ngram_range);
        let mut seen: Vec<&String> = Vec::new();
        for g in &grams {
            freq.entry(g.clone()).or_insert((0, 0)).0 += 1;
        }
        seen.extend(grams.iter());
        seen.sort();
        seen.dedup();
        for g in seen {
            freq.get_mut(g).expect("counted above").1 += 1;
        }
    }
    let mut ranked: Vec<(String, usize, usize)> = freq.into_iter().map(|(g, (tf, df))| (g, tf, df)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_features);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));
    let n = texts.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(ranked.len());
    for (i, (g, _, df)) in ranked.into_iter().enumerate() {
        vocabulary.insert(g, i);
        idf.push(((1.0 + n) / (1.0 + df as f64)).ln() + 1.0);
    }
    Ok(TfidfModel {
        format_version: TFIDF_FORMAT_VERSION,
        field,
        ngram_range,
        vocabulary,
        idf,
    })
}

/// Raw counts times idf, L2-normalized; out-of-vocabulary n-grams are ignored.
pub fn vectorize(model: &TfidfModel, text: &str) -> SparseVector {
    let entries: Vec<(u32, f64)> = char_ngrams(text, model.ngram_range)
        .iter()
        .filter_map(|g| model.vocabulary.get(g).map(|&i| (i as u32, model.idf[i])))
        .collect();
    SparseVector::from_entries(model.dim(), entries)
        .expect("vocabulary indices are within the model dimension")
        .normalized()
}
