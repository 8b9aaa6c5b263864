use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{embed_pair, EmbedError, EmbeddingProvider};
use crate::corpus::{OpenLabel, UtterancePair};
use crate::scalar::Scalar;

pub const BANK_MAGIC: &[u8; 4] = b"SCFB";
pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry<T> {
    pub id: String,
    pub vector: Vec<T>,
    pub label: Option<OpenLabel>,
}

/// Ordered reference features with the fingerprint of the provider that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank<T> {
    dim: usize,
    fingerprint: String,
    entries: Vec<BankEntry<T>>,
    ids: HashSet<String>,
}

impl<T: Scalar> FeatureBank<T> {
    pub fn new(dim: usize, fingerprint: impl Into<String>) -> Result<Self, EmbedError> {
        let fingerprint = fingerprint.into();
        if fingerprint.is_empty() {
            return Err(EmbedError::Bank("empty fingerprint".into()));
        }
        if dim == 0 {
            return Err(EmbedError::Bank("zero dimension".into()));
        }
        Ok(Self {
            dim,
            fingerprint,
            entries: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn push(&mut self, id: impl Into<String>, vector: Vec<T>, label: Option<OpenLabel>) -> Result<(), EmbedError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbedError::Bank(format!(
                "entry {id:?} has dimension {}, bank has {}",
                vector.len(),
                self.dim
            )));
        }
        if !self.ids.insert(id.clone()) {
            return Err(EmbedError::Bank(format!("duplicate id {id:?}")));
        }
        self.entries.push(BankEntry { id, vector, label });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn entries(&self) -> &[BankEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&BankEntry<T>> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entries whose label satisfies `keep`, in order.
    pub fn filter(&self, keep: impl Fn(&BankEntry<T>) -> bool) -> Self {
        let mut out = Self::new(self.dim, self.fingerprint.clone()).expect("valid source bank");
        for e in self.entries.iter().filter(|e| keep(e)) {
            out.push(e.id.clone(), e.vector.clone(), e.label)
                .expect("entries of a valid bank are valid");
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), EmbedError> {
        let count = u32::try_from(self.entries.len()).map_err(|_| EmbedError::Bank("too many entries".into()))?;
        let fp = self.fingerprint.as_bytes();
        let fp_len = u16::try_from(fp.len()).map_err(|_| EmbedError::Bank("fingerprint too long".into()))?;
        w.write_all(BANK_MAGIC)?;
        w.write_all(&BANK_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        w.write_all(&fp_len.to_le_bytes())?;
        w.write_all(fp)?;
        for e in &self.entries {
            let id = e.id.as_bytes();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id)?;
            w.write_all(&[e.label.map_or(0, OpenLabel::code)])?;
            for v in &e.vector {
                w.write_all(&v.as_f32().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(EmbedError::Bank("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BANK_FORMAT_VERSION {
            return Err(EmbedError::Bank(format!("unsupported format version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let mut fp_len = [0u8; 2];
        r.read_exact(&mut fp_len)?;
        let fingerprint = read_string(&mut r, usize::from(u16::from_le_bytes(fp_len)))?;
        let mut bank = Self::new(dim, fingerprint)?;
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            let id = read_string(&mut r, id_len)?;
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let label = match code[0] {
                0 => None,
                c => Some(OpenLabel::from_code(c).ok_or_else(|| EmbedError::Bank(format!("bad label code {c}")))?),
            };
            r.read_exact(&mut buf)?;
            let vector = buf
                .chunks_exact(4)
                .map(|b| T::widen_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            bank.push(id, vector, label)?;
        }
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, EmbedError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String, EmbedError> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| EmbedError::Bank(e.to_string()))
}

/// Embeds every pair in order; the first failure aborts with the offending id.
pub fn build_feature_bank<T: Scalar>(
    provider: &dyn EmbeddingProvider<T>,
    corpus: &[UtterancePair],
) -> Result<FeatureBank<T>, EmbedError> {
    if corpus.is_empty() {
        return Err(EmbedError::Bank("cannot build a bank from an empty corpus".into()));
    }
    let vectors: Vec<Vec<T>> = corpus
        .par_iter()
        .map(|pair| {
            embed_pair(provider, pair)
                .map(|v| v.into_vec())
                .map_err(|e| EmbedError::Pair {
                    id: pair.id.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_, _>>()?;
    let mut bank = FeatureBank::new(provider.dim(), provider.fingerprint())?;
    for (pair, v) in corpus.iter().zip(vectors) {
        bank.push(pair.id.clone(), v, pair.label)?;
    }
    Ok(bank)
}
